//! The end-of-run report, computed from the trace alone.

use std::collections::BTreeMap;

use sdb_core::diagnostics::{estimate_momentum, rolling_reliability};
use sdb_core::observability::{
    project, BusinessAggregates, Lens, LensAggregates, OperationalAggregates, RowKind, TraceRow,
};
use sdb_core::{LogicalTime, MomentumEstimate64};
use serde::{Deserialize, Serialize};

use crate::config::SimulationConfig;
use crate::engine::SimError;
use crate::telco::{RenewalScenario, UNSUPPORTED_SIGNALS};

pub const TERMINAL_STATES: [&str; 5] = [
    "renewed",
    "renewed_with_offer",
    "restructured",
    "churned",
    "escalated",
];

/// Window of the rolling workflow-reliability series.
pub const RELIABILITY_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub scenarios: usize,
    pub terminal_counts: BTreeMap<String, u64>,
    pub terminal_of: BTreeMap<String, String>,
    pub churned_fraction: f64,
    pub churn_label_fraction: f64,
    /// Requests whose rows carry more than one policy version.
    pub multi_policy_requests: Vec<String>,
    pub business: BusinessAggregates,
    pub operational: OperationalAggregates,
    pub sagas_aborted: u64,
    pub sagas_aborted_clean: u64,
    pub momentum: Option<MomentumEstimate64>,
    pub killed_at: Option<LogicalTime>,
    pub unsupported_signals: Vec<String>,
}

/// Terminal state per renewal: a `renewal_closed` row's terminal, or
/// `escalated` for a renewal halted by the kill switch.
pub fn terminal_map(rows: &[TraceRow]) -> BTreeMap<String, (String, LogicalTime)> {
    let mut out = BTreeMap::new();
    for r in rows {
        let t = match r.kind {
            RowKind::RenewalClosed => r.text("terminal").unwrap_or("unknown").to_owned(),
            RowKind::RenewalFailed => "escalated".to_owned(),
            _ => continue,
        };
        out.insert(r.request_id.clone(), (t, r.logical_time));
    }
    out
}

pub fn build_report(
    scenarios: &[RenewalScenario],
    rows: &[TraceRow],
    cfg: &SimulationConfig,
    killed_at: Option<LogicalTime>,
) -> Result<SimulationReport, SimError> {
    let mut closes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rows
        .iter()
        .filter(|r| matches!(r.kind, RowKind::RenewalClosed | RowKind::RenewalFailed))
    {
        *closes.entry(r.request_id.as_str()).or_default() += 1;
    }
    for s in scenarios {
        match closes.get(s.renewal_id.as_str()) {
            Some(1) => {}
            Some(n) => {
                return Err(SimError::Invariant(format!(
                    "{} closed {n} times",
                    s.renewal_id
                )))
            }
            None => {
                return Err(SimError::Invariant(format!(
                    "{} never reached a terminal state",
                    s.renewal_id
                )))
            }
        }
    }
    if closes.len() != scenarios.len() {
        return Err(SimError::Invariant(
            "a terminal row names an unknown renewal".into(),
        ));
    }

    let terminals = terminal_map(rows);
    let mut terminal_counts: BTreeMap<String, u64> = TERMINAL_STATES
        .iter()
        .map(|t| ((*t).to_owned(), 0))
        .collect();
    for (t, _) in terminals.values() {
        *terminal_counts.entry(t.clone()).or_default() += 1;
    }
    let n = scenarios.len().max(1) as f64;
    let churned_fraction = terminal_counts["churned"] as f64 / n;
    let churn_label_fraction = scenarios.iter().filter(|s| s.churn_label).count() as f64 / n;

    let end = rows
        .iter()
        .map(|r| r.logical_time)
        .max()
        .unwrap_or_default();
    let LensAggregates::Business(business) = project(rows, Lens::Business, end).aggregates else {
        unreachable!("business lens yields business aggregates")
    };
    let LensAggregates::Operational(operational) = project(rows, Lens::Operational, end).aggregates
    else {
        unreachable!("operational lens yields operational aggregates")
    };
    let LensAggregates::Compliance(compliance) = project(rows, Lens::Compliance, end).aggregates
    else {
        unreachable!("compliance lens yields compliance aggregates")
    };
    let multi_policy_requests = compliance
        .requests
        .iter()
        .filter(|(_, l)| l.policy_versions.len() > 1)
        .map(|(id, _)| id.clone())
        .collect();

    let aborted: Vec<&TraceRow> = rows
        .iter()
        .filter(|r| r.kind == RowKind::SagaAborted)
        .collect();
    let sagas_aborted_clean = aborted.iter().filter(|r| r.flag("clean")).count() as u64;

    Ok(SimulationReport {
        seed: cfg.seed,
        scenarios: scenarios.len(),
        terminal_of: terminals
            .iter()
            .map(|(k, (t, _))| (k.clone(), t.clone()))
            .collect(),
        terminal_counts,
        churned_fraction,
        churn_label_fraction,
        multi_policy_requests,
        business,
        operational,
        sagas_aborted: aborted.len() as u64,
        sagas_aborted_clean,
        momentum: momentum(&terminals),
        killed_at,
        unsupported_signals: UNSUPPORTED_SIGNALS
            .iter()
            .map(|s| (*s).to_owned())
            .collect(),
    })
}

/// Slope of the rolling share of renewals closed without a person, against
/// close time in days. `None` when the run is too short to fit.
fn momentum(terminals: &BTreeMap<String, (String, LogicalTime)>) -> Option<MomentumEstimate64> {
    let mut outcomes: Vec<(LogicalTime, bool)> = terminals
        .values()
        .map(|(t, at)| (*at, t != "escalated"))
        .collect();
    outcomes.sort();
    outcomes.dedup_by_key(|(at, _)| *at);
    let series: Vec<(f64, bool)> = outcomes
        .into_iter()
        .map(|(at, ok)| (at.millis() as f64 / LogicalTime::MILLIS_PER_DAY as f64, ok))
        .collect();
    let s = rolling_reliability(&series, RELIABILITY_WINDOW).ok()?;
    estimate_momentum(&s).ok()
}

impl SimulationReport {
    pub fn summary(&self) -> String {
        let mut out = format!("renewals: {} (seed {})\n", self.scenarios, self.seed);
        for t in TERMINAL_STATES {
            out.push_str(&format!(
                "  {t:<20}{}\n",
                self.terminal_counts.get(t).copied().unwrap_or(0)
            ));
        }
        out.push_str(&format!(
            "churned {:.1}% (dataset churn label {:.1}%)\n",
            100.0 * self.churned_fraction,
            100.0 * self.churn_label_fraction
        ));
        out.push_str(&format!(
            "renewals spanning a policy change: {}\n",
            self.multi_policy_requests.len()
        ));
        out.push_str(&format!(
            "contract sagas aborted: {} ({} left billing clean)\n",
            self.sagas_aborted, self.sagas_aborted_clean
        ));
        out.push_str(&format!(
            "tool calls {} p95 {} ms, errors {}\n",
            self.operational.tool_calls, self.operational.p95_latency_ms, self.operational.errors
        ));
        match &self.momentum {
            Some(m) => out.push_str(&format!(
                "reliability momentum {:+.5}/day, 95% CI [{:+.5}, {:+.5}]\n",
                m.mu, m.ci_mu.0, m.ci_mu.1
            )),
            None => out.push_str("reliability momentum: too few closures to fit\n"),
        }
        if let Some(k) = self.killed_at {
            out.push_str(&format!("kill switch revoked at day {}\n", k.day()));
        }
        out.push_str(&format!(
            "signals not modelled: {}\n",
            self.unsupported_signals.join(", ")
        ));
        out
    }
}
