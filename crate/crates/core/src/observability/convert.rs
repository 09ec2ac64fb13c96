//! Mappings from module-level records to trace rows.

use super::{Module, RowKind, TraceRow};
use crate::audit::{AuditRecord, Plane};
use crate::coordination::{CoordinationEvent, CoordinationKind, SagaEvent, SagaEventKind};
use crate::sdb::{BoundaryTraceRow, ModelVersion, TraceVerdict};
use crate::value::Scalar;

pub fn audit_row(a: &AuditRecord) -> TraceRow {
    let kind = match (a.plane, a.decision.as_str()) {
        (Plane::Gate, "allow") => RowKind::GateAllow,
        (Plane::Gate, _) => RowKind::GateDeny,
        (Plane::Supervisor, "restart") => RowKind::SupervisorRestart,
        (Plane::Supervisor, _) => RowKind::SupervisorEscalate,
        (Plane::Kill, "halt") => RowKind::KillHalt,
        (Plane::Kill, "leak") => RowKind::KillSwitchLeak,
        (Plane::Kill, _) => RowKind::KillRevoke,
        (Plane::Escalation, "already_human_required") => RowKind::EscalationNoop,
        (Plane::Escalation, "resolve") => RowKind::EscalationResolved,
        (Plane::Escalation, _) => RowKind::Escalation,
        (Plane::Approval, "requested") => RowKind::ApprovalRequested,
        (Plane::Approval, _) => RowKind::ApprovalResolved,
        (Plane::Throttle, _) => RowKind::ThrottleRefused,
        (Plane::LateEvent, _) => RowKind::LateEvent,
        (Plane::StaleTimer, _) => RowKind::TimerStale,
        (Plane::Reject, _) => RowKind::VerdictReject,
    };
    let module = match a.plane {
        Plane::LateEvent | Plane::StaleTimer => Module::Spine,
        Plane::Reject => Module::Sdb,
        _ => Module::Control,
    };
    let mut row = TraceRow::new(a.request_id.clone(), module, kind, a.logical_time)
        .with("decision", a.decision.as_str())
        .with("audit_seq", a.seq);
    if !a.detail.is_empty() {
        row = row.with("detail", a.detail.as_str());
    }
    row.policy_version = a.policy_version.clone();
    row.model_version = a.model_version;
    row
}

pub fn boundary_row(b: &BoundaryTraceRow, model: Option<ModelVersion>) -> TraceRow {
    let kind = match b.verdict {
        TraceVerdict::Accept => RowKind::VerdictAccept,
        TraceVerdict::Reject => RowKind::VerdictReject,
        TraceVerdict::BudgetExhausted => RowKind::BudgetExhausted,
    };
    let mut row = TraceRow::new(b.request_id.clone(), Module::Sdb, kind, b.logical_time)
        .with("attempt", b.attempt);
    if let Some(r) = b.reason {
        row = row.with("decision", r.to_string());
    }
    row.model_version = model;
    row
}

pub fn coordination_row(request_id: &str, e: &CoordinationEvent) -> TraceRow {
    let kind = match e.kind {
        CoordinationKind::Dispatched => RowKind::Dispatched,
        CoordinationKind::ProposerInvoked => RowKind::ProposerInvoked,
        CoordinationKind::SubAgentRetry => RowKind::SubAgentRetry,
        CoordinationKind::RetryAfterDeadline => RowKind::RetryAfterDeadline,
        CoordinationKind::Returned => RowKind::SubAgentReturned,
        CoordinationKind::LateOutput => RowKind::LateOutput,
        CoordinationKind::ParentRetry => RowKind::ParentRetry,
        CoordinationKind::SubTaskFailed => RowKind::SubTaskFailed,
        CoordinationKind::ConflictResolved => RowKind::ConflictResolved,
        CoordinationKind::MergeConflict => RowKind::MergeConflict,
        CoordinationKind::Merged => RowKind::Merged,
    };
    let mut row =
        TraceRow::new(request_id, Module::Coordination, kind, e.at).payload(e.detail.clone());
    if let Some(a) = &e.agent {
        row = row.with("agent", a.as_str());
    }
    row
}

pub fn saga_row(request_id: &str, saga_id: &str, e: &SagaEvent) -> TraceRow {
    let kind = match e.kind {
        SagaEventKind::Registered => RowKind::SagaRegistered,
        SagaEventKind::Done => RowKind::SagaDone,
        SagaEventKind::PeerReturned => RowKind::SagaPeerReturned,
        SagaEventKind::PeerFailed => RowKind::SagaPeerFailed,
        SagaEventKind::Tie => RowKind::SagaTie,
        SagaEventKind::CompensationAlarm => RowKind::CompensationAlarm,
        SagaEventKind::Compensated => RowKind::Compensated,
        SagaEventKind::CompensationDuplicate => RowKind::CompensationDuplicate,
        SagaEventKind::CompensationRetry => RowKind::CompensationRetry,
        SagaEventKind::CompensationFailed => RowKind::CompensationFailed,
        SagaEventKind::Committed => RowKind::SagaCommitted,
        SagaEventKind::Aborted => RowKind::SagaAborted,
    };
    let mut row = TraceRow::new(request_id, Module::Coordination, kind, e.at)
        .payload(e.detail.clone())
        .with("saga_id", saga_id);
    if let Some(p) = &e.peer {
        row = row.with("peer", p.as_str());
    }
    if let Some(s) = e.step_index {
        row = row.with("step", Scalar::from(s));
    }
    row
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audit::{AuditEntry, AuditTrail};
    use crate::clock::LogicalTime;
    use crate::control::PolicyVersion;

    #[test]
    fn audit_planes_map_to_kinds() {
        let mut a = AuditTrail::new();
        a.append(
            AuditEntry::new("r", Plane::Gate, "deny", LogicalTime(1))
                .policy(&PolicyVersion::new("v2")),
        );
        a.append(AuditEntry::new(
            "r",
            Plane::Approval,
            "sla_expired_denied",
            LogicalTime(2),
        ));
        let rows: Vec<TraceRow> = a.records().iter().map(audit_row).collect();
        assert_eq!(rows[0].kind, RowKind::GateDeny);
        assert_eq!(rows[0].policy_version, Some(PolicyVersion::new("v2")));
        assert_eq!(rows[1].kind, RowKind::ApprovalResolved);
        assert_eq!(rows[1].text("decision"), Some("sla_expired_denied"));
    }
}
