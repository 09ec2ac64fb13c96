//! Coordination patterns: hierarchical delegation with a deterministic merge
//! (P1) and scatter-gather with saga compensation (P2).

mod delegate;
mod merge;
mod saga;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use delegate::{
    delegate, CoordinationEvent, CoordinationKind, DelegationError, DelegationOutcome, SubAgent,
    SubAgentCall, SubAgentRun,
};
pub use merge::{merge, ConflictRule, MergeConflict, MergeResult, MergeWeight, ResolvedConflict};
pub use saga::{
    scatter_gather, Compensation, ExternalStore, ExternalStores, FaultPlan, GatherResult, Peer,
    PeerPlan, PlannedWrite, SagaError, SagaEvent, SagaEventKind, SagaLog, SagaLogEntry,
    ScriptedPeer, StepStatus, StepToken, StoreUnavailable,
};

/// Typed contract attached to every dispatched sub-task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubTaskContract {
    pub input_type: String,
    pub output_type: String,
    /// Logical milliseconds from dispatch.
    pub deadline: u64,
    pub retry_budget: u32,
    pub partial_result_policy: PartialResultPolicy,
}

impl SubTaskContract {
    pub fn new(
        input_type: impl Into<String>,
        output_type: impl Into<String>,
        deadline: u64,
    ) -> Self {
        Self {
            input_type: input_type.into(),
            output_type: output_type.into(),
            deadline,
            retry_budget: 0,
            partial_result_policy: PartialResultPolicy::RequireAll,
        }
    }

    pub fn retries(mut self, n: u32) -> Self {
        self.retry_budget = n;
        self
    }

    pub fn policy(mut self, p: PartialResultPolicy) -> Self {
        self.partial_result_policy = p;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PartialResultPolicy {
    RequireAll,
    BestEffort { min_peers: usize },
}

/// Seeded ordering of concurrent peers, so tests fix completion order.
#[derive(Debug, Clone, Copy)]
pub struct SeededScheduler {
    seed: u64,
    jitter: u64,
}

impl SeededScheduler {
    pub fn new(seed: u64) -> Self {
        Self { seed, jitter: 0 }
    }

    /// Start offsets drawn from `[0, ms)` per peer.
    pub fn jitter(mut self, ms: u64) -> Self {
        self.jitter = ms;
        self
    }

    pub fn offset(&self, peer_index: usize) -> u64 {
        if self.jitter == 0 {
            return 0;
        }
        let mut rng = crate::sdb::keyed_rng("jitter", &[], &[self.seed, peer_index as u64]);
        (crate::sdb::unit(&mut rng) * self.jitter as f64) as u64
    }

    pub fn order(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        let mut rng = crate::sdb::keyed_rng("scheduler", &[], &[self.seed, n as u64]);
        idx.shuffle(&mut rng);
        idx
    }
}
