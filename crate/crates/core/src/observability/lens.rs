use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{RowKind, TraceRow};
use crate::clock::LogicalTime;
use crate::control::PolicyVersion;
use crate::sdb::ModelVersion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lens {
    Operational,
    Business,
    Compliance,
}

impl Lens {
    pub const ALL: [Lens; 3] = [Lens::Operational, Lens::Business, Lens::Compliance];

    pub fn parse(s: &str) -> Option<Lens> {
        match s {
            "operational" => Some(Lens::Operational),
            "business" => Some(Lens::Business),
            "compliance" => Some(Lens::Compliance),
            _ => None,
        }
    }

    /// Fixed kind-set of the lens.
    pub fn kinds(self) -> &'static [RowKind] {
        use RowKind::*;
        match self {
            Lens::Operational => &[
                Proposal,
                VerdictReject,
                BudgetExhausted,
                EventAppended,
                EventApplied,
                LateEvent,
                CasTransition,
                CasRetry,
                TimerFired,
                TimerStale,
                Dispatched,
                ProposerInvoked,
                SubAgentRetry,
                RetryAfterDeadline,
                SubAgentReturned,
                LateOutput,
                ParentRetry,
                SubTaskFailed,
                MergeConflict,
                Merged,
                SagaRegistered,
                SagaDone,
                SagaTie,
                SagaPeerReturned,
                SagaPeerFailed,
                CompensationAlarm,
                CompensationRetry,
                CompensationFailed,
                SupervisorRestart,
                SupervisorEscalate,
                KillRevoke,
                KillHalt,
                KillSwitchLeak,
                Escalation,
                EscalationResolved,
                ApprovalRequested,
                ApprovalResolved,
                ThrottleAdmitted,
                ThrottleRefused,
                RenewalOpened,
                ToolCall,
                RenewalClosed,
                RenewalFailed,
            ],
            Lens::Business => &[
                Commit,
                SagaCommitted,
                SagaAborted,
                Escalation,
                RenewalOpened,
                Signal,
                StrategyGenerated,
                OutreachSent,
                RenewalClosed,
                RenewalFailed,
            ],
            Lens::Compliance => &[
                VerdictAccept,
                VerdictReject,
                Commit,
                LateEvent,
                ReplayDivergence,
                CasTransition,
                TimerStale,
                ConflictResolved,
                Compensated,
                CompensationDuplicate,
                CompensationFailed,
                SagaAborted,
                GateAllow,
                GateDeny,
                SupervisorEscalate,
                KillRevoke,
                KillHalt,
                KillSwitchLeak,
                Escalation,
                EscalationNoop,
                EscalationResolved,
                ApprovalRequested,
                ApprovalResolved,
                ThrottleRefused,
                PolicyChanged,
                RenewalOpened,
                StrategyGenerated,
                RenewalClosed,
            ],
        }
    }

    pub fn includes(self, kind: RowKind) -> bool {
        self.kinds().contains(&kind)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OperationalAggregates {
    pub p95_latency_ms: u64,
    /// Pending approvals plus unresolved escalations.
    pub queue_depth: u64,
    pub in_flight: u64,
    pub tool_calls: u64,
    pub errors: u64,
    pub error_rate: f64,
    pub retry_counts: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BusinessAggregates {
    pub opened: u64,
    pub generated: u64,
    pub sent: u64,
    pub closed: u64,
    pub failed: u64,
    pub escalated: u64,
    pub active: u64,
    /// Closed renewals per terminal state.
    pub terminal: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LineageEntry {
    pub at: LogicalTime,
    pub kind: RowKind,
    pub decision: String,
    pub policy_version: Option<PolicyVersion>,
    pub model_version: Option<ModelVersion>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestLineage {
    pub decisions: Vec<LineageEntry>,
    pub policy_versions: BTreeSet<PolicyVersion>,
    pub model_versions: BTreeSet<ModelVersion>,
    pub pii_redacted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComplianceAggregates {
    pub requests: BTreeMap<String, RequestLineage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "lens", rename_all = "snake_case")]
pub enum LensAggregates {
    Operational(OperationalAggregates),
    Business(BusinessAggregates),
    Compliance(ComplianceAggregates),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LensSnapshot {
    pub lens: Lens,
    pub as_of: LogicalTime,
    pub rows: Vec<TraceRow>,
    pub aggregates: LensAggregates,
}

const TERMINAL_CLOSED: [&str; 3] = ["renewed", "renewed_with_offer", "restructured"];

/// Deterministic fold of the rows at or before `as_of` through one lens.
pub fn project(rows: &[TraceRow], lens: Lens, as_of: LogicalTime) -> LensSnapshot {
    let rows: Vec<TraceRow> = rows
        .iter()
        .filter(|r| r.logical_time <= as_of && lens.includes(r.kind))
        .cloned()
        .collect();
    let aggregates = match lens {
        Lens::Operational => LensAggregates::Operational(operational(&rows)),
        Lens::Business => LensAggregates::Business(business(&rows)),
        Lens::Compliance => LensAggregates::Compliance(compliance(&rows)),
    };
    LensSnapshot {
        lens,
        as_of,
        rows,
        aggregates,
    }
}

fn count(rows: &[TraceRow], kind: RowKind) -> u64 {
    rows.iter().filter(|r| r.kind == kind).count() as u64
}

fn operational(rows: &[TraceRow]) -> OperationalAggregates {
    let mut latencies: Vec<u64> = rows
        .iter()
        .filter(|r| r.kind == RowKind::ToolCall)
        .map(|r| r.int("latency_ms").unwrap_or(0).max(0) as u64)
        .collect();
    latencies.sort_unstable();
    let p95_latency_ms = nearest_rank(&latencies, 95);

    let mut opened = BTreeSet::new();
    let mut done = BTreeSet::new();
    for r in rows {
        match r.kind {
            RowKind::RenewalOpened => {
                opened.insert(r.request_id.as_str());
            }
            RowKind::RenewalClosed | RowKind::RenewalFailed => {
                done.insert(r.request_id.as_str());
            }
            _ => {}
        }
    }
    let in_flight = opened.difference(&done).count() as u64;
    let pending =
        |open: RowKind, close: RowKind| count(rows, open).saturating_sub(count(rows, close));
    let queue_depth = pending(RowKind::ApprovalRequested, RowKind::ApprovalResolved)
        + pending(RowKind::Escalation, RowKind::EscalationResolved);

    let tool_calls = count(rows, RowKind::ToolCall);
    let errors = rows
        .iter()
        .filter(|r| {
            matches!(
                r.kind,
                RowKind::SubTaskFailed
                    | RowKind::CompensationFailed
                    | RowKind::BudgetExhausted
                    | RowKind::RenewalFailed
            ) || (r.kind == RowKind::ToolCall
                && r.payload.get("ok").and_then(|v| v.as_bool()) == Some(false))
        })
        .count() as u64;
    let error_rate = if tool_calls == 0 {
        0.0
    } else {
        errors as f64 / tool_calls as f64
    };

    let mut retry_counts = BTreeMap::new();
    for k in [
        RowKind::VerdictReject,
        RowKind::CasRetry,
        RowKind::SubAgentRetry,
        RowKind::ParentRetry,
        RowKind::SupervisorRestart,
        RowKind::CompensationRetry,
    ] {
        retry_counts.insert(k.as_str().to_owned(), count(rows, k));
    }
    OperationalAggregates {
        p95_latency_ms,
        queue_depth,
        in_flight,
        tool_calls,
        errors,
        error_rate,
        retry_counts,
    }
}

/// Nearest-rank percentile of sorted values; 0 when empty.
pub(crate) fn nearest_rank(sorted: &[u64], pct: u64) -> u64 {
    if sorted.is_empty() {
        return 0;
    }
    let rank = (pct as usize * sorted.len()).div_ceil(100).max(1);
    sorted[rank - 1]
}

fn business(rows: &[TraceRow]) -> BusinessAggregates {
    let mut b = BusinessAggregates {
        opened: count(rows, RowKind::RenewalOpened),
        generated: count(rows, RowKind::StrategyGenerated),
        sent: count(rows, RowKind::OutreachSent),
        ..Default::default()
    };
    let mut finished = 0;
    for r in rows {
        match r.kind {
            RowKind::RenewalClosed => {
                finished += 1;
                let t = r.text("terminal").unwrap_or("unknown").to_owned();
                if TERMINAL_CLOSED.contains(&t.as_str()) {
                    b.closed += 1;
                } else if t == "churned" {
                    b.failed += 1;
                } else if t == "escalated" {
                    b.escalated += 1;
                }
                *b.terminal.entry(t).or_default() += 1;
            }
            RowKind::RenewalFailed => {
                finished += 1;
                b.failed += 1;
            }
            _ => {}
        }
    }
    b.active = b.opened.saturating_sub(finished);
    b
}

fn compliance(rows: &[TraceRow]) -> ComplianceAggregates {
    let mut c = ComplianceAggregates::default();
    for r in rows {
        let l = c.requests.entry(r.request_id.clone()).or_default();
        if r.kind == RowKind::RenewalOpened {
            l.pii_redacted = r.flag("pii_redacted");
        }
        if let Some(p) = &r.policy_version {
            l.policy_versions.insert(p.clone());
        }
        if let Some(m) = r.model_version {
            l.model_versions.insert(m);
        }
        l.decisions.push(LineageEntry {
            at: r.logical_time,
            kind: r.kind,
            decision: r.text("decision").unwrap_or(r.kind.as_str()).to_owned(),
            policy_version: r.policy_version.clone(),
            model_version: r.model_version,
        });
    }
    c
}

#[cfg(test)]
mod tests {
    use super::super::{Module, TraceStore};
    use super::*;

    #[test]
    fn every_kind_reaches_a_lens() {
        for k in RowKind::ALL {
            assert!(
                Lens::ALL.iter().any(|l| l.includes(*k)),
                "{k:?} is in no lens"
            );
        }
    }

    #[test]
    fn empty_trace_zeroes() {
        for lens in Lens::ALL {
            let s = project(&[], lens, LogicalTime(100));
            assert!(s.rows.is_empty());
            match s.aggregates {
                LensAggregates::Operational(o) => {
                    assert_eq!(o.p95_latency_ms + o.in_flight + o.queue_depth, 0)
                }
                LensAggregates::Business(b) => assert_eq!(b, BusinessAggregates::default()),
                LensAggregates::Compliance(c) => assert!(c.requests.is_empty()),
            }
        }
    }

    #[test]
    fn one_request_appears_in_all_lenses() {
        let mut t = TraceStore::new();
        t.record(
            TraceRow::new(
                "ren-1",
                Module::Workflow,
                RowKind::RenewalOpened,
                LogicalTime(0),
            )
            .with("pii_redacted", true),
        )
        .unwrap();
        t.record(
            TraceRow::new("ren-1", Module::Workflow, RowKind::ToolCall, LogicalTime(1))
                .with("latency_ms", 40i64),
        )
        .unwrap();
        t.record(
            TraceRow::new(
                "ren-1",
                Module::Workflow,
                RowKind::RenewalClosed,
                LogicalTime(5),
            )
            .with("terminal", "renewed"),
        )
        .unwrap();
        for lens in Lens::ALL {
            assert!(t
                .project(lens, LogicalTime(10))
                .rows
                .iter()
                .any(|r| r.request_id == "ren-1"));
        }
        let LensAggregates::Business(b) = t.project(Lens::Business, LogicalTime(10)).aggregates
        else {
            unreachable!()
        };
        assert_eq!((b.opened, b.closed, b.active), (1, 1, 0));
        let LensAggregates::Operational(o) =
            t.project(Lens::Operational, LogicalTime(3)).aggregates
        else {
            unreachable!()
        };
        assert_eq!((o.in_flight, o.p95_latency_ms), (1, 40));
        let LensAggregates::Compliance(c) = t.project(Lens::Compliance, LogicalTime(10)).aggregates
        else {
            unreachable!()
        };
        assert!(c.requests["ren-1"].pii_redacted);
    }

    #[test]
    fn nearest_rank_p95() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(nearest_rank(&v, 95), 95);
        assert_eq!(nearest_rank(&[7], 95), 7);
        assert_eq!(nearest_rank(&[1, 2], 99), 2);
    }
}
