use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditEntry, AuditTrail, Plane};
use crate::clock::LogicalTime;
use crate::spine::{CasError, StateRow, StateStore, WorkflowState};
use crate::value::{Record, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalationResolution {
    pub resolver: String,
    pub to_state: WorkflowState,
    pub at: LogicalTime,
    pub version: u64,
}

/// Durable row a human reviews later.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EscalationRow {
    pub escalation_id: u64,
    pub row_id: String,
    pub reason: String,
    pub escalated_at: LogicalTime,
    pub from_state: WorkflowState,
    /// Row version right after the move to `human_required`.
    pub version: u64,
    pub resolution: Option<EscalationResolution>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EscalateOutcome {
    Escalated(EscalationRow),
    AlreadyHumanRequired,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EscalationError {
    #[error(transparent)]
    Cas(#[from] CasError),
    #[error("unknown escalation {0}")]
    Unknown(u64),
    #[error("escalation {0} is already resolved")]
    AlreadyResolved(u64),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EscalationBook {
    rows: Vec<EscalationRow>,
}

impl EscalationBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn rows(&self) -> &[EscalationRow] {
        &self.rows
    }

    pub fn get(&self, escalation_id: u64) -> Option<&EscalationRow> {
        self.rows.get(escalation_id as usize)
    }

    pub fn pending(&self) -> impl Iterator<Item = &EscalationRow> {
        self.rows.iter().filter(|r| r.resolution.is_none())
    }

    /// Suspends the row: CAS to `human_required` and a durable escalation row.
    pub fn escalate(
        &mut self,
        store: &mut StateStore,
        row_id: &str,
        reason: &str,
        at: LogicalTime,
        audit: &mut AuditTrail,
    ) -> Result<EscalateOutcome, CasError> {
        let row = store
            .get(row_id)
            .ok_or_else(|| CasError::UnknownRow(row_id.to_owned()))?
            .clone();
        if row.state == WorkflowState::HumanRequired {
            audit.append(
                AuditEntry::new(row_id, Plane::Escalation, "already_human_required", at)
                    .detail(reason.to_owned()),
            );
            return Ok(EscalateOutcome::AlreadyHumanRequired);
        }
        let mut delta = Record::new();
        delta.insert("escalation_reason".into(), Scalar::from(reason));
        let after =
            store.cas_transition(row_id, row.version, WorkflowState::HumanRequired, delta)?;
        let esc = EscalationRow {
            escalation_id: self.rows.len() as u64,
            row_id: row_id.to_owned(),
            reason: reason.to_owned(),
            escalated_at: at,
            from_state: row.state,
            version: after.version,
            resolution: None,
        };
        audit.append(
            AuditEntry::new(row_id, Plane::Escalation, "escalate", at).detail(reason.to_owned()),
        );
        self.rows.push(esc.clone());
        Ok(EscalateOutcome::Escalated(esc))
    }

    /// Applies a human resolution as a CAS at the post-escalation version.
    pub fn resolve(
        &mut self,
        store: &mut StateStore,
        escalation_id: u64,
        to_state: WorkflowState,
        resolver: &str,
        at: LogicalTime,
        audit: &mut AuditTrail,
    ) -> Result<StateRow, EscalationError> {
        let esc = self
            .rows
            .get_mut(escalation_id as usize)
            .ok_or(EscalationError::Unknown(escalation_id))?;
        if esc.resolution.is_some() {
            return Err(EscalationError::AlreadyResolved(escalation_id));
        }
        let mut delta = Record::new();
        delta.insert("resolved_by".into(), Scalar::from(resolver));
        let row = store.cas_transition(&esc.row_id, esc.version, to_state, delta)?;
        esc.resolution = Some(EscalationResolution {
            resolver: resolver.to_owned(),
            to_state,
            at,
            version: row.version,
        });
        audit.append(
            AuditEntry::new(esc.row_id.clone(), Plane::Escalation, "resolve", at)
                .detail(format!("{resolver} -> {to_state}")),
        );
        Ok(row)
    }
}
