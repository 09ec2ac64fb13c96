//! The single audit trail every control plane, gate and spine guard writes to.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::clock::LogicalTime;
use crate::control::PolicyVersion;
use crate::sdb::ModelVersion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plane {
    Gate,
    Supervisor,
    Kill,
    Escalation,
    Approval,
    Throttle,
    LateEvent,
    StaleTimer,
    Reject,
}

impl Plane {
    pub const ALL: [Plane; 9] = [
        Plane::Gate,
        Plane::Supervisor,
        Plane::Kill,
        Plane::Escalation,
        Plane::Approval,
        Plane::Throttle,
        Plane::LateEvent,
        Plane::StaleTimer,
        Plane::Reject,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    pub request_id: String,
    pub plane: Plane,
    pub decision: String,
    pub policy_version: Option<PolicyVersion>,
    pub model_version: Option<ModelVersion>,
    pub logical_time: LogicalTime,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

/// Append-only, single-writer audit log.
#[derive(Debug, Clone, Default)]
pub struct AuditTrail {
    records: Vec<AuditRecord>,
}

/// Fields of an audit entry before the trail assigns its sequence number.
#[derive(Debug, Clone)]
pub struct AuditEntry {
    pub request_id: String,
    pub plane: Plane,
    pub decision: String,
    pub policy_version: Option<PolicyVersion>,
    pub model_version: Option<ModelVersion>,
    pub logical_time: LogicalTime,
    pub detail: String,
}

impl AuditEntry {
    pub fn new(
        request_id: impl Into<String>,
        plane: Plane,
        decision: impl Into<String>,
        at: LogicalTime,
    ) -> Self {
        Self {
            request_id: request_id.into(),
            plane,
            decision: decision.into(),
            policy_version: None,
            model_version: None,
            logical_time: at,
            detail: String::new(),
        }
    }

    pub fn policy(mut self, v: &PolicyVersion) -> Self {
        self.policy_version = Some(v.clone());
        self
    }

    pub fn model(mut self, v: ModelVersion) -> Self {
        self.model_version = Some(v);
        self
    }

    pub fn detail(mut self, d: impl Into<String>) -> Self {
        self.detail = d.into();
        self
    }
}

impl AuditTrail {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry and returns its sequence number (the audit ref).
    pub fn append(&mut self, entry: AuditEntry) -> u64 {
        let seq = self.records.len() as u64;
        self.records.push(AuditRecord {
            seq,
            request_id: entry.request_id,
            plane: entry.plane,
            decision: entry.decision,
            policy_version: entry.policy_version,
            model_version: entry.model_version,
            logical_time: entry.logical_time,
            detail: entry.detail,
        });
        seq
    }

    pub fn records(&self) -> &[AuditRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count(&self, plane: Plane) -> usize {
        self.records.iter().filter(|r| r.plane == plane).count()
    }

    pub fn for_request<'a>(&'a self, request_id: &'a str) -> impl Iterator<Item = &'a AuditRecord> {
        self.records
            .iter()
            .filter(move |r| r.request_id == request_id)
    }

    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: &str) -> Result<Self, serde_json::Error> {
        let records = input
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<AuditRecord>, _>>()?;
        Ok(Self { records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sequence_numbers_are_dense() {
        let mut trail = AuditTrail::new();
        for i in 0..5 {
            let seq = trail.append(AuditEntry::new("r", Plane::Gate, "deny", LogicalTime(i)));
            assert_eq!(seq, i);
        }
        assert_eq!(trail.count(Plane::Gate), 5);
    }

    #[test]
    fn jsonl_round_trip() {
        let mut trail = AuditTrail::new();
        trail.append(
            AuditEntry::new("r-1", Plane::Kill, "revoke", LogicalTime(7))
                .policy(&PolicyVersion::new("p1"))
                .model(ModelVersion(2)),
        );
        let mut buf = Vec::new();
        trail.write_jsonl(&mut buf).unwrap();
        let back = AuditTrail::read_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.records(), trail.records());
    }
}
