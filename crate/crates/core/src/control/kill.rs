use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audit::{AuditEntry, AuditTrail, Plane};
use crate::clock::LogicalTime;

/// Longest allowed gap between a revoke and the first halted tool boundary.
pub const KILL_LATENCY_BOUND_MS: u64 = 1_000;

const LIVE: u64 = u64::MAX;

/// Shared, monotone cancellation flag. Clones observe the same revocation.
#[derive(Debug, Clone)]
pub struct CancellationToken {
    token_id: String,
    revoked_at: Arc<AtomicU64>,
    propagation: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CancelCheck {
    Continue,
    Halt,
}

impl CancellationToken {
    pub fn new(token_id: impl Into<String>) -> Self {
        Self {
            token_id: token_id.into(),
            revoked_at: Arc::new(AtomicU64::new(LIVE)),
            propagation: 0,
        }
    }

    /// Delay before workers observe a revoke, clamped to the latency bound.
    pub fn with_propagation(mut self, ms: u64) -> Self {
        self.propagation = ms.min(KILL_LATENCY_BOUND_MS);
        self
    }

    pub fn id(&self) -> &str {
        &self.token_id
    }

    pub fn is_revoked(&self) -> bool {
        self.revoked_at.load(Ordering::SeqCst) != LIVE
    }

    pub fn revoked_at(&self) -> Option<LogicalTime> {
        match self.revoked_at.load(Ordering::SeqCst) {
            LIVE => None,
            t => Some(LogicalTime(t)),
        }
    }

    /// True only for the call that actually revoked.
    fn mark(&self, at: LogicalTime) -> bool {
        self.revoked_at
            .compare_exchange(LIVE, at.0, Ordering::SeqCst, Ordering::SeqCst)
            .is_ok()
    }
}

/// Revokes `token` at `at`; the first revoke writes one `kill` record.
pub fn revoke(
    token: &CancellationToken,
    at: LogicalTime,
    request_id: &str,
    audit: &mut AuditTrail,
) {
    if token.mark(at) {
        audit.append(
            AuditEntry::new(request_id, Plane::Kill, "revoke", at).detail(token.token_id.clone()),
        );
    }
}

/// The check every tool boundary performs.
pub fn check_cancel(token: &CancellationToken, now: LogicalTime) -> CancelCheck {
    match token.revoked_at() {
        Some(t) if now >= t + token.propagation => CancelCheck::Halt,
        _ => CancelCheck::Continue,
    }
}

/// A worker's queued tool calls. `checks_boundary = false` models the bug
/// where a worker only checks the token at workflow start.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerSchedule {
    pub worker_id: String,
    pub calls: Vec<LogicalTime>,
    pub checks_boundary: bool,
}

impl WorkerSchedule {
    pub fn every(worker_id: &str, start: LogicalTime, gap: u64, n: usize) -> Self {
        Self {
            worker_id: worker_id.into(),
            calls: (0..n as u64).map(|i| start + i * gap).collect(),
            checks_boundary: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillReport {
    pub started: Vec<(String, LogicalTime)>,
    pub halted: Vec<(String, LogicalTime)>,
    /// Calls that started later than the latency bound after the revoke.
    pub leaks: Vec<(String, LogicalTime)>,
    pub max_halt_latency: Option<u64>,
}

/// Drives worker schedules against a token revoked at `revoke_at`.
#[derive(Debug, Clone, Default)]
pub struct KillHarness {
    pub workers: Vec<WorkerSchedule>,
}

impl KillHarness {
    pub fn new(workers: Vec<WorkerSchedule>) -> Self {
        Self { workers }
    }

    pub fn run(
        &self,
        token: &CancellationToken,
        revoke_at: Option<LogicalTime>,
        audit: &mut AuditTrail,
    ) -> KillReport {
        if let Some(t) = revoke_at {
            revoke(token, t, token.id(), audit);
        }
        let mut report = KillReport::default();
        for w in &self.workers {
            for &at in &w.calls {
                if w.checks_boundary && check_cancel(token, at) == CancelCheck::Halt {
                    report.halted.push((w.worker_id.clone(), at));
                    break;
                }
                report.started.push((w.worker_id.clone(), at));
                if let Some(r) = token.revoked_at() {
                    if at > r + KILL_LATENCY_BOUND_MS {
                        report.leaks.push((w.worker_id.clone(), at));
                    }
                }
            }
        }
        if let Some(r) = token.revoked_at() {
            report.max_halt_latency = report
                .halted
                .iter()
                .map(|(_, at)| at.saturating_sub(r.0).0)
                .max();
        }
        report
    }
}
