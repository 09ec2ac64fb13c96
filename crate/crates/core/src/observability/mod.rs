//! Request-threaded trace store and its three lenses.

mod convert;
mod lens;

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::LogicalTime;
use crate::control::PolicyVersion;
use crate::sdb::ModelVersion;
use crate::value::{Record, Scalar};

pub use convert::{audit_row, boundary_row, coordination_row, saga_row};
pub(crate) use lens::nearest_rank;
pub use lens::{
    project, BusinessAggregates, ComplianceAggregates, Lens, LensAggregates, LensSnapshot,
    LineageEntry, OperationalAggregates, RequestLineage,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Module {
    Sdb,
    Spine,
    Coordination,
    Control,
    Workflow,
}

macro_rules! row_kinds {
    ($($v:ident => $s:literal),* $(,)?) => {
        /// Every kind of row the runtime writes.
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum RowKind { $($v),* }

        impl RowKind {
            pub const ALL: &'static [RowKind] = &[$(RowKind::$v),*];

            pub fn as_str(self) -> &'static str {
                match self { $(RowKind::$v => $s),* }
            }
        }
    };
}

row_kinds! {
    Proposal => "proposal",
    VerdictAccept => "verdict_accept",
    VerdictReject => "verdict_reject",
    Commit => "commit",
    BudgetExhausted => "budget_exhausted",
    EventAppended => "event_appended",
    EventApplied => "event_applied",
    LateEvent => "late_event",
    ReplayDivergence => "replay_divergence",
    CasTransition => "cas_transition",
    CasRetry => "cas_retry",
    TimerFired => "timer_fired",
    TimerStale => "timer_stale",
    Dispatched => "dispatched",
    ProposerInvoked => "proposer_invoked",
    SubAgentRetry => "sub_agent_retry",
    RetryAfterDeadline => "retry_after_deadline",
    SubAgentReturned => "sub_agent_returned",
    LateOutput => "late_output",
    ParentRetry => "parent_retry",
    SubTaskFailed => "sub_task_failed",
    ConflictResolved => "conflict_resolved",
    MergeConflict => "merge_conflict",
    Merged => "merged",
    SagaRegistered => "saga_registered",
    SagaDone => "saga_done",
    SagaTie => "saga_tie",
    SagaPeerReturned => "saga_peer_returned",
    SagaPeerFailed => "saga_peer_failed",
    CompensationAlarm => "compensation_alarm",
    Compensated => "compensated",
    CompensationDuplicate => "compensation_duplicate",
    CompensationRetry => "compensation_retry",
    CompensationFailed => "compensation_failed",
    SagaCommitted => "saga_committed",
    SagaAborted => "saga_aborted",
    GateAllow => "gate_allow",
    GateDeny => "gate_deny",
    SupervisorRestart => "supervisor_restart",
    SupervisorEscalate => "supervisor_escalate",
    KillRevoke => "kill_revoke",
    KillHalt => "kill_halt",
    KillSwitchLeak => "kill_switch_leak",
    Escalation => "escalation",
    EscalationNoop => "escalation_noop",
    EscalationResolved => "escalation_resolved",
    ApprovalRequested => "approval_requested",
    ApprovalResolved => "approval_resolved",
    ThrottleAdmitted => "throttle_admitted",
    ThrottleRefused => "throttle_refused",
    PolicyChanged => "policy_changed",
    RenewalOpened => "renewal_opened",
    Signal => "signal",
    StrategyGenerated => "strategy_generated",
    OutreachSent => "outreach_sent",
    ToolCall => "tool_call",
    RenewalClosed => "renewal_closed",
    RenewalFailed => "renewal_failed",
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRow {
    pub request_id: String,
    pub module: Module,
    pub kind: RowKind,
    #[serde(default, skip_serializing_if = "Record::is_empty")]
    pub payload: Record,
    pub logical_time: LogicalTime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_version: Option<ModelVersion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_version: Option<PolicyVersion>,
}

impl TraceRow {
    pub fn new(
        request_id: impl Into<String>,
        module: Module,
        kind: RowKind,
        at: LogicalTime,
    ) -> Self {
        Self {
            request_id: request_id.into(),
            module,
            kind,
            payload: Record::new(),
            logical_time: at,
            model_version: None,
            policy_version: None,
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Scalar>) -> Self {
        self.payload.insert(key.to_owned(), value.into());
        self
    }

    pub fn payload(mut self, p: Record) -> Self {
        self.payload.extend(p);
        self
    }

    pub fn model(mut self, v: ModelVersion) -> Self {
        self.model_version = Some(v);
        self
    }

    pub fn policy(mut self, v: &PolicyVersion) -> Self {
        self.policy_version = Some(v.clone());
        self
    }

    pub fn int(&self, key: &str) -> Option<i64> {
        self.payload.get(key).and_then(Scalar::as_int)
    }

    pub fn text(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Scalar::as_text)
    }

    pub fn flag(&self, key: &str) -> bool {
        self.payload
            .get(key)
            .and_then(Scalar::as_bool)
            .unwrap_or(false)
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace row of kind `{}` has no request_id", .0.as_str())]
    MissingRequestId(RowKind),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("trace line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
}

/// Append-only, single-writer trace.
#[derive(Debug, Clone, Default)]
pub struct TraceStore {
    rows: Vec<TraceRow>,
}

impl TraceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, row: TraceRow) -> Result<(), TraceError> {
        if row.request_id.trim().is_empty() {
            return Err(TraceError::MissingRequestId(row.kind));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[TraceRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Rows for one request, ordered by logical time (stable for ties).
    pub fn for_request(&self, request_id: &str) -> Vec<TraceRow> {
        let mut v: Vec<TraceRow> = self
            .rows
            .iter()
            .filter(|r| r.request_id == request_id)
            .cloned()
            .collect();
        v.sort_by_key(|r| r.logical_time);
        v
    }

    pub fn project(&self, lens: Lens, as_of: LogicalTime) -> LensSnapshot {
        project(&self.rows, lens, as_of)
    }

    pub fn write_jsonl(&self, w: &mut impl Write) -> io::Result<()> {
        for r in &self.rows {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self, TraceError> {
        let mut store = TraceStore::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: TraceRow =
                serde_json::from_str(&line).map_err(|source| TraceError::Parse {
                    line: i + 1,
                    source,
                })?;
            store.record(row)?;
        }
        Ok(store)
    }
}
