use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::audit::{AuditEntry, AuditTrail, Plane};
use crate::clock::LogicalTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    OneForOne,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupervisorSpec {
    pub strategy: Strategy,
    pub max_restarts: u32,
    /// Logical milliseconds.
    pub backoff_base: u64,
    pub backoff_factor: f64,
    /// Upper bound of extra delay per restart. Off by default.
    #[serde(default)]
    pub jitter: Option<u64>,
}

impl SupervisorSpec {
    pub fn new(
        max_restarts: u32,
        backoff_base: u64,
        backoff_factor: f64,
    ) -> Result<Self, ControlError> {
        if !(backoff_factor > 1.0 && backoff_factor.is_finite()) {
            return Err(ControlError::InvalidSpec(format!(
                "backoff_factor must be > 1, got {backoff_factor}"
            )));
        }
        Ok(Self {
            strategy: Strategy::OneForOne,
            max_restarts,
            backoff_base,
            backoff_factor,
            jitter: None,
        })
    }

    /// Delay before restart `n` (1-based).
    pub fn backoff(&self, n: u32) -> u64 {
        let d = self.backoff_base as f64 * self.backoff_factor.powi(n.saturating_sub(1) as i32);
        d.round() as u64
    }
}

/// Typed crash result from a child run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "crash", content = "reason")]
pub enum Crash {
    /// Worth restarting.
    Transient(String),
    /// Escalates without further restarts.
    Permanent(String),
}

#[derive(Debug, Clone, Copy)]
pub struct ChildRun {
    /// 0 for the first run, n for restart n.
    pub attempt: u32,
    pub at: LogicalTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SupervisionOutcome<T> {
    Completed(T),
    Escalated { reason: String },
}

#[derive(Debug, Clone)]
pub struct SupervisorReport<T> {
    pub outcome: SupervisionOutcome<T>,
    /// Logical time of each restart.
    pub restarts: Vec<LogicalTime>,
    pub finished_at: LogicalTime,
}

/// Runs `child` under one-for-one supervision: restart `n` happens
/// `backoff(n)` after failure `n`; the failure after the last allowed
/// restart escalates.
pub fn supervise<T>(
    request_id: &str,
    mut child: impl FnMut(ChildRun) -> Result<T, Crash>,
    spec: &SupervisorSpec,
    start: LogicalTime,
    audit: &mut AuditTrail,
) -> SupervisorReport<T> {
    let mut restarts = Vec::new();
    let mut at = start;
    let mut attempt = 0u32;
    loop {
        let reason = match child(ChildRun { attempt, at }) {
            Ok(v) => {
                return SupervisorReport {
                    outcome: SupervisionOutcome::Completed(v),
                    restarts,
                    finished_at: at,
                }
            }
            Err(Crash::Permanent(r)) => format!("permanent: {r}"),
            Err(Crash::Transient(r)) if attempt < spec.max_restarts => {
                attempt += 1;
                let jitter = spec.jitter.map_or(0, |j| {
                    let mut rng = crate::sdb::keyed_rng(
                        "backoff",
                        request_id.as_bytes(),
                        &[u64::from(attempt)],
                    );
                    (crate::sdb::unit(&mut rng) * j as f64) as u64
                });
                at = at + spec.backoff(attempt) + jitter;
                restarts.push(at);
                audit.append(
                    AuditEntry::new(request_id, Plane::Supervisor, "restart", at)
                        .detail(format!("restart {attempt}: {r}")),
                );
                continue;
            }
            Err(Crash::Transient(r)) => {
                format!("max_restarts ({}) exhausted: {r}", spec.max_restarts)
            }
        };
        audit.append(
            AuditEntry::new(request_id, Plane::Supervisor, "escalate", at).detail(reason.clone()),
        );
        return SupervisorReport {
            outcome: SupervisionOutcome::Escalated { reason },
            restarts,
            finished_at: at,
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SupervisorSpec {
        SupervisorSpec::new(3, 1, 2.0).unwrap()
    }

    #[test]
    fn first_try_success() {
        let mut audit = AuditTrail::new();
        let r = supervise(
            "c",
            |_| Ok::<_, Crash>(7),
            &spec(),
            LogicalTime(0),
            &mut audit,
        );
        assert_eq!(r.outcome, SupervisionOutcome::Completed(7));
        assert!(r.restarts.is_empty());
        assert!(audit.is_empty());
    }

    #[test]
    fn deterministic_failure_backs_off_then_escalates() {
        let mut audit = AuditTrail::new();
        let mut runs = 0;
        let r = supervise::<()>(
            "c",
            |_| {
                runs += 1;
                Err(Crash::Transient("boom".into()))
            },
            &spec(),
            LogicalTime(0),
            &mut audit,
        );
        assert!(matches!(r.outcome, SupervisionOutcome::Escalated { .. }));
        let delays: Vec<u64> = std::iter::once(LogicalTime(0))
            .chain(r.restarts.iter().copied())
            .collect::<Vec<_>>()
            .windows(2)
            .map(|w| w[1] - w[0])
            .collect();
        assert_eq!(delays, vec![1, 2, 4]);
        assert_eq!(runs, 4);
        assert_eq!(audit.count(Plane::Supervisor), 4);
    }

    #[test]
    fn fails_twice_then_succeeds() {
        let mut audit = AuditTrail::new();
        let r = supervise(
            "c",
            |run| {
                if run.attempt < 2 {
                    Err(Crash::Transient("x".into()))
                } else {
                    Ok(run.attempt)
                }
            },
            &spec(),
            LogicalTime(0),
            &mut audit,
        );
        assert_eq!(r.outcome, SupervisionOutcome::Completed(2));
        assert_eq!(r.restarts.len(), 2);
    }

    #[test]
    fn permanent_crash_escalates_immediately() {
        let mut audit = AuditTrail::new();
        let r = supervise::<()>(
            "c",
            |_| Err(Crash::Permanent("bad input".into())),
            &spec(),
            LogicalTime(0),
            &mut audit,
        );
        assert!(r.restarts.is_empty());
        assert!(matches!(r.outcome, SupervisionOutcome::Escalated { .. }));
    }

    #[test]
    fn factor_must_exceed_one() {
        assert!(SupervisorSpec::new(3, 1, 1.0).is_err());
        assert!(SupervisorSpec::new(3, 1, f64::NAN).is_err());
    }
}
