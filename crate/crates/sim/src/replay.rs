//! Cross-version replay of a proposer-backed event log.

use sdb_core::sdb::{ModelVersion, OutputDistribution, ProposerConfig, WeightedOption};
use sdb_core::spine::{
    classify_replay, detect_divergence, replay, Consumer, EventLog, EventRecord, FoldContext,
    ReplayClass, SeedSchedule,
};
use sdb_core::{record, LogicalTime, Record};
use serde::{Deserialize, Serialize};

/// Labels the consumer can assign.
pub const LABELS: [&str; 8] = [
    "retain",
    "discount",
    "upsell",
    "downgrade",
    "restructure",
    "defer",
    "escalate",
    "close",
];

/// Folds each event into `state[request_id] = label` with one proposer call.
pub struct Labeller {
    cfg: ProposerConfig,
}

impl Labeller {
    pub fn new(sigma: f64, delta: f64) -> Result<Self, sdb_core::sdb::SdbError> {
        let options = LABELS
            .iter()
            .map(|l| WeightedOption {
                weight: 1,
                content: record! { "label" => *l },
            })
            .collect();
        let cfg =
            ProposerConfig::new(sigma, delta)?.with_class("*", OutputDistribution::new(options)?);
        Ok(Self { cfg })
    }
}

impl Consumer for Labeller {
    fn id(&self) -> &str {
        "labeller"
    }

    fn apply(&self, state: &mut Record, event: &EventRecord, ctx: &mut FoldContext) {
        let p = ctx.propose(&event.payload, &self.cfg);
        if let Some(label) = p.content.get("label") {
            state.insert(p.request_id, label.clone());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayDemo {
    pub inputs: usize,
    pub version_a: ModelVersion,
    pub version_b: ModelVersion,
    pub delta: f64,
    pub diverged: usize,
    pub diverged_fraction: f64,
    pub first_divergent_offset: Option<u64>,
    pub class: ReplayClass,
    /// Each version re-replays to byte-identical projections.
    pub self_consistent: bool,
}

pub fn input_log(n: usize, seed: u64) -> EventLog {
    let mut log = EventLog::new();
    for i in 0..n {
        let rid = format!("in-{seed}-{i:05}");
        log.append(
            "replay-demo",
            record! { "request_id" => rid, "tenure" => (i % 72) as i64 },
            LogicalTime(i as u64),
        );
    }
    log
}

pub fn replay_demo(
    n: usize,
    version_a: ModelVersion,
    version_b: ModelVersion,
    sigma: f64,
    delta: f64,
    seed: u64,
) -> Result<ReplayDemo, sdb_core::sdb::SdbError> {
    let consumer = Labeller::new(sigma, delta)?;
    let log = input_log(n, seed);
    let seeds = SeedSchedule::sequential(seed, n);
    let report = detect_divergence(&log, &consumer, version_a, version_b, &seeds);
    let (a, b) = (&report.projection_a.state, &report.projection_b.state);
    let diverged = a.iter().filter(|(k, v)| b.get(*k) != Some(v)).count();
    let bytes =
        |v| serde_json::to_vec(&replay(&log, &consumer, v, &seeds)).expect("projection serializes");
    let self_consistent =
        bytes(version_a) == bytes(version_a) && bytes(version_b) == bytes(version_b);
    Ok(ReplayDemo {
        inputs: n,
        version_a,
        version_b,
        delta,
        diverged,
        diverged_fraction: if n == 0 {
            0.0
        } else {
            diverged as f64 / n as f64
        },
        first_divergent_offset: report.first_divergent_offset,
        class: classify_replay(&log, &consumer, version_a, version_b, &seeds),
        self_consistent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_version_never_diverges() {
        let d = replay_demo(200, ModelVersion(1), ModelVersion(1), 0.0, 0.5, 3).unwrap();
        assert_eq!(d.diverged, 0);
        assert_eq!(d.class, ReplayClass::Consistent);
    }

    #[test]
    fn zero_delta_never_diverges() {
        let d = replay_demo(200, ModelVersion(1), ModelVersion(2), 0.0, 0.0, 3).unwrap();
        assert_eq!(d.diverged, 0);
    }

    #[test]
    fn full_delta_always_diverges() {
        let d = replay_demo(100, ModelVersion(1), ModelVersion(2), 0.0, 1.0, 3).unwrap();
        assert_eq!(d.diverged, 100);
        assert_eq!(d.first_divergent_offset, Some(0));
        assert_eq!(d.class, ReplayClass::ReplayDivergence);
        assert!(d.self_consistent);
    }
}
