//! Supervision, the deterministic policy gate (P4) and the four human
//! control planes (P6). Every decision lands in the shared [`AuditTrail`].
//!
//! [`AuditTrail`]: crate::audit::AuditTrail

mod approval;
mod escalation;
mod gate;
mod kill;
mod supervisor;
mod throttle;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use approval::{
    await_approval, ApprovalBook, ApprovalError, ApprovalRequest, HumanResponse, Resolution,
    Resolver,
};
pub use escalation::{
    EscalateOutcome, EscalationBook, EscalationError, EscalationResolution, EscalationRow,
};
pub use gate::{gate_check, GateDecision, GatePolicy, GateRule, RuleKind};
pub use kill::{
    check_cancel, revoke, CancelCheck, CancellationToken, KillHarness, KillReport, WorkerSchedule,
    KILL_LATENCY_BOUND_MS,
};
pub use supervisor::{
    supervise, ChildRun, Crash, Strategy, SupervisionOutcome, SupervisorReport, SupervisorSpec,
};
pub use throttle::{Throttle, ThrottleCaps, ThrottleDecision, ThrottleScope, ThrottleWindow};

/// Tag of the policy a decision was made under.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PolicyVersion(pub String);

impl PolicyVersion {
    pub fn new(tag: &str) -> Self {
        Self(tag.to_owned())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for PolicyVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ControlError {
    #[error("invalid supervisor spec: {0}")]
    InvalidSpec(String),
    #[error("plane `{0}` is neither enabled nor declared deferred")]
    UndeclaredPlane(ControlPlane),
    #[error("bad deferral for `{plane}`: {why}")]
    BadDeferral { plane: ControlPlane, why: String },
}

/// The four human-control planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlPlane {
    KillSwitch,
    Escalation,
    Approval,
    Throttle,
}

impl ControlPlane {
    pub const ALL: [ControlPlane; 4] = [
        ControlPlane::KillSwitch,
        ControlPlane::Escalation,
        ControlPlane::Approval,
        ControlPlane::Throttle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ControlPlane::KillSwitch => "kill_switch",
            ControlPlane::Escalation => "escalation",
            ControlPlane::Approval => "approval",
            ControlPlane::Throttle => "throttle",
        }
    }
}

impl fmt::Display for ControlPlane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Deferral {
    pub plane: ControlPlane,
    /// ISO date the deferral was recorded.
    pub date: String,
    pub rationale: String,
}

/// Which planes run, and a dated rationale for each one that does not.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControlPlaneConfig {
    pub enabled: BTreeSet<ControlPlane>,
    #[serde(default)]
    pub deferrals: Vec<Deferral>,
}

impl ControlPlaneConfig {
    pub fn full() -> Self {
        Self {
            enabled: ControlPlane::ALL.into_iter().collect(),
            deferrals: Vec::new(),
        }
    }

    /// Throttle only; the rest deferred with `rationale`.
    pub fn light(date: &str, rationale: &str) -> Self {
        Self {
            enabled: [ControlPlane::Throttle].into(),
            deferrals: [
                ControlPlane::KillSwitch,
                ControlPlane::Escalation,
                ControlPlane::Approval,
            ]
            .into_iter()
            .map(|plane| Deferral {
                plane,
                date: date.into(),
                rationale: rationale.into(),
            })
            .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), ControlError> {
        for d in &self.deferrals {
            if self.enabled.contains(&d.plane) {
                return Err(ControlError::BadDeferral {
                    plane: d.plane,
                    why: "plane is also enabled".into(),
                });
            }
            if d.date.trim().is_empty() {
                return Err(ControlError::BadDeferral {
                    plane: d.plane,
                    why: "missing date".into(),
                });
            }
            if d.rationale.trim().is_empty() {
                return Err(ControlError::BadDeferral {
                    plane: d.plane,
                    why: "missing rationale".into(),
                });
            }
        }
        for p in ControlPlane::ALL {
            if !self.enabled.contains(&p) && !self.deferrals.iter().any(|d| d.plane == p) {
                return Err(ControlError::UndeclaredPlane(p));
            }
        }
        Ok(())
    }

    pub fn is_enabled(&self, p: ControlPlane) -> bool {
        self.enabled.contains(&p)
    }
}

/// Handle proving the plane declaration was checked.
#[derive(Debug, Clone)]
pub struct ControlRuntime {
    config: ControlPlaneConfig,
}

impl ControlRuntime {
    /// Refuses to start unless every plane is enabled or deferred.
    pub fn start(config: ControlPlaneConfig) -> Result<Self, ControlError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &ControlPlaneConfig {
        &self.config
    }

    pub fn is_enabled(&self, p: ControlPlane) -> bool {
        self.config.is_enabled(p)
    }
}
