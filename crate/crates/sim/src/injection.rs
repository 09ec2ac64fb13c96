//! Injected-failure batches with a known root cause, for scoring `diagnose`.

use std::collections::BTreeMap;

use sdb_core::control::{supervise, ChildRun, Crash, SupervisorSpec};
use sdb_core::diagnostics::{
    diagnose, Diagnosis, DiagnosisReport, DiagnosticConfig, DiagnosticsError, FailureCase,
    ReplayOutcome,
};
use sdb_core::observability::{audit_row, Module, RowKind, TraceRow};
use sdb_core::sdb::{propose, ModelVersion, OutputDistribution, ProposerConfig, WeightedOption};
use sdb_core::{record, AuditTrail, LogicalTime, Record};
use serde::{Deserialize, Serialize};

use crate::agents::keyed;

pub const BATCH_SIZE: usize = 7;
pub const DEFAULT_K: u32 = 3;
const PINNED: ModelVersion = ModelVersion(2);
const PRIOR: ModelVersion = ModelVersion(1);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InjectedClass {
    /// Sampling noise: the pinned model usually gets it right.
    Variance,
    /// The pinned model's preferred output moved away from the prior's.
    ReplayDivergence,
    /// The task is broken on every model version.
    Functional,
}

impl InjectedClass {
    pub const ALL: [InjectedClass; 3] = [
        InjectedClass::Variance,
        InjectedClass::ReplayDivergence,
        InjectedClass::Functional,
    ];

    pub fn matches(self, d: &Diagnosis) -> bool {
        matches!(
            (self, d),
            (InjectedClass::Variance, Diagnosis::Variance { .. })
                | (
                    InjectedClass::ReplayDivergence,
                    Diagnosis::ReplayDivergence { .. }
                )
                | (InjectedClass::Functional, Diagnosis::Functional { .. })
        )
    }

    fn proposer(self) -> ProposerConfig {
        let (sigma, delta) = match self {
            InjectedClass::Variance => (0.05, 0.0),
            InjectedClass::ReplayDivergence => (0.0, 0.2),
            InjectedClass::Functional => (0.0, 0.0),
        };
        let options = (0..6)
            .map(|i| WeightedOption {
                weight: 1,
                content: record! { "plan" => format!("plan-{i}") },
            })
            .collect();
        ProposerConfig::new(sigma, delta)
            .expect("constant knobs are valid")
            .with_class("*", OutputDistribution::new(options).expect("non-empty"))
    }
}

/// The production task: the oracle expects the prior model's noiseless
/// answer, except for functional runs where it expects a plan no model offers.
struct Task {
    class: InjectedClass,
    cfg: ProposerConfig,
}

impl Task {
    fn expected(&self, input: &Record) -> Record {
        match self.class {
            InjectedClass::Functional => record! { "plan" => "plan-retired" },
            _ => {
                let mut quiet = self.cfg.clone();
                quiet.sigma = 0.0;
                propose(input, &quiet, 0, PRIOR).content
            }
        }
    }

    fn passes(&self, input: &Record, seed: u64, v: ModelVersion) -> bool {
        propose(input, &self.cfg, seed, v).content == self.expected(input)
    }
}

/// A batch of `BATCH_SIZE` production failures of `class`, each with its trace.
pub fn failure_batch(class: InjectedClass, run: u64) -> Vec<(FailureCase, Record)> {
    let task = Task {
        class,
        cfg: class.proposer(),
    };
    let mut out = Vec::new();
    let mut i = 0u64;
    while out.len() < BATCH_SIZE {
        let rid = format!("inj-{run}-{i}");
        let input = record! { "request_id" => rid.as_str() };
        let seed = keyed(run, "production", &rid, 0);
        i += 1;
        if task.passes(&input, seed, PINNED) {
            continue;
        }
        let at = LogicalTime::from_secs(i);
        let mut trace = vec![
            TraceRow::new(rid.as_str(), Module::Sdb, RowKind::Proposal, at)
                .payload(propose(&input, &task.cfg, seed, PINNED).content)
                .model(PINNED),
            TraceRow::new(rid.as_str(), Module::Sdb, RowKind::VerdictReject, at + 1)
                .with("decision", "schema_violation"),
        ];
        if class == InjectedClass::Functional {
            trace.extend(crash_loop(&rid, at + 2));
        }
        out.push((
            FailureCase {
                request_id: rid,
                model_version: PINNED,
                trace,
            },
            input,
        ));
    }
    out
}

/// The supervisor rows left by a child that fails the same way every time.
fn crash_loop(rid: &str, at: LogicalTime) -> Vec<TraceRow> {
    let mut audit = AuditTrail::new();
    let spec = SupervisorSpec::new(2, 1_000, 2.0).expect("valid spec");
    let child = |_: ChildRun| -> Result<(), Crash> {
        Err(Crash::Transient("plan-retired not in catalog".into()))
    };
    supervise(rid, child, &spec, at, &mut audit);
    audit.records().iter().map(audit_row).collect()
}

/// Diagnoses one injected batch, replaying each case for real.
pub fn injected_run(
    class: InjectedClass,
    run: u64,
    k: u32,
) -> Result<DiagnosisReport, DiagnosticsError> {
    let task = Task {
        class,
        cfg: class.proposer(),
    };
    let batch = failure_batch(class, run);
    let inputs: BTreeMap<String, Record> = batch
        .iter()
        .map(|(c, i)| (c.request_id.clone(), i.clone()))
        .collect();
    let cases: Vec<FailureCase> = batch.into_iter().map(|(c, _)| c).collect();
    let cfg = DiagnosticConfig::new(k, [PRIOR, PINNED])?;
    diagnose(
        &cases,
        |case, v, rep| {
            let seed = keyed(
                run,
                "replay",
                &case.request_id,
                u64::from(v.0) << 32 | u64::from(rep),
            );
            if task.passes(&inputs[&case.request_id], seed, v) {
                ReplayOutcome::Pass
            } else {
                ReplayOutcome::Fail
            }
        },
        &cfg,
    )
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub correct: usize,
    pub runs: usize,
}

impl Accuracy {
    pub fn rate(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.correct as f64 / self.runs as f64
        }
    }
}

/// Share of `runs` batches per class that `diagnose` labels correctly.
pub fn diagnosis_accuracy(
    runs: u64,
    k: u32,
) -> Result<BTreeMap<InjectedClass, Accuracy>, DiagnosticsError> {
    let mut out = BTreeMap::new();
    for class in InjectedClass::ALL {
        let acc: &mut Accuracy = out.entry(class).or_default();
        for run in 0..runs {
            let r = injected_run(class, run, k)?;
            acc.runs += 1;
            acc.correct += usize::from(class.matches(&r.diagnosis));
        }
    }
    Ok(out)
}
