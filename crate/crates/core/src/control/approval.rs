use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::PolicyVersion;
use crate::audit::{AuditEntry, AuditTrail, Plane};
use crate::clock::LogicalTime;
use crate::value::Record;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Approved,
    Denied,
    SlaExpiredDenied,
}

impl Resolution {
    pub fn as_str(self) -> &'static str {
        match self {
            Resolution::Approved => "approved",
            Resolution::Denied => "denied",
            Resolution::SlaExpiredDenied => "sla_expired_denied",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolver {
    Human,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApprovalError {
    #[error("approval SLA must be positive")]
    ZeroSla,
    #[error("approval `{0}` is already resolved")]
    AlreadyResolved(String),
    #[error("approval `{0}` already exists")]
    Duplicate(String),
    #[error("unknown approval `{0}`")]
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApprovalRequest {
    pub request_id: String,
    pub payload: Record,
    pub requested_at: LogicalTime,
    /// Logical milliseconds.
    pub sla: u64,
    pub policy_version: Option<PolicyVersion>,
    pub resolution: Option<Resolution>,
    pub resolver: Option<Resolver>,
    pub resolved_at: Option<LogicalTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanResponse {
    pub approve: bool,
    pub at: LogicalTime,
}

impl ApprovalRequest {
    pub fn new(
        request_id: &str,
        payload: Record,
        requested_at: LogicalTime,
        sla: u64,
    ) -> Result<Self, ApprovalError> {
        if sla == 0 {
            return Err(ApprovalError::ZeroSla);
        }
        Ok(Self {
            request_id: request_id.into(),
            payload,
            requested_at,
            sla,
            policy_version: None,
            resolution: None,
            resolver: None,
            resolved_at: None,
        })
    }

    pub fn under(mut self, v: &PolicyVersion) -> Self {
        self.policy_version = Some(v.clone());
        self
    }

    pub fn deadline(&self) -> LogicalTime {
        self.requested_at + self.sla
    }

    pub fn is_resolved(&self) -> bool {
        self.resolution.is_some()
    }

    fn settle(
        &mut self,
        human: Option<HumanResponse>,
        audit: &mut AuditTrail,
    ) -> Result<Resolution, ApprovalError> {
        if self.resolution.is_some() {
            return Err(ApprovalError::AlreadyResolved(self.request_id.clone()));
        }
        let (res, who, at) = match human {
            Some(h) if h.at < self.deadline() => (
                if h.approve {
                    Resolution::Approved
                } else {
                    Resolution::Denied
                },
                Resolver::Human,
                h.at,
            ),
            _ => (
                Resolution::SlaExpiredDenied,
                Resolver::Fallback,
                self.deadline(),
            ),
        };
        self.resolution = Some(res);
        self.resolver = Some(who);
        self.resolved_at = Some(at);
        let mut e = AuditEntry::new(self.request_id.clone(), Plane::Approval, res.as_str(), at);
        if let Some(v) = &self.policy_version {
            e = e.policy(v);
        }
        audit.append(e);
        Ok(res)
    }
}

/// Waits on `req` under its SLA. A human answer strictly before the
/// deadline wins; otherwise the request resolves to a conservative deny.
pub fn await_approval(
    req: &mut ApprovalRequest,
    human: Option<HumanResponse>,
    audit: &mut AuditTrail,
) -> Result<Resolution, ApprovalError> {
    req.settle(human, audit)
}

/// Pending approvals reachable from the console.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ApprovalBook {
    requests: BTreeMap<String, ApprovalRequest>,
}

impl ApprovalBook {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn submit(&mut self, req: ApprovalRequest) -> Result<(), ApprovalError> {
        if self.requests.contains_key(&req.request_id) {
            return Err(ApprovalError::Duplicate(req.request_id));
        }
        self.requests.insert(req.request_id.clone(), req);
        Ok(())
    }

    pub fn get(&self, request_id: &str) -> Option<&ApprovalRequest> {
        self.requests.get(request_id)
    }

    pub fn all(&self) -> impl Iterator<Item = &ApprovalRequest> {
        self.requests.values()
    }

    pub fn pending(&self) -> impl Iterator<Item = &ApprovalRequest> {
        self.requests.values().filter(|r| !r.is_resolved())
    }

    /// A human decision. One arriving at or after the deadline resolves as
    /// an SLA expiry.
    pub fn resolve(
        &mut self,
        request_id: &str,
        approve: bool,
        at: LogicalTime,
        audit: &mut AuditTrail,
    ) -> Result<Resolution, ApprovalError> {
        let req = self
            .requests
            .get_mut(request_id)
            .ok_or_else(|| ApprovalError::Unknown(request_id.to_owned()))?;
        req.settle(Some(HumanResponse { approve, at }), audit)
    }

    /// Resolves every pending request whose deadline is at or before `now`.
    pub fn expire_due(&mut self, now: LogicalTime, audit: &mut AuditTrail) -> Vec<String> {
        let mut expired = Vec::new();
        for req in self.requests.values_mut() {
            if !req.is_resolved() && req.deadline() <= now {
                req.settle(None, audit).expect("pending request");
                expired.push(req.request_id.clone());
            }
        }
        expired
    }
}
