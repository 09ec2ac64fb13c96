use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::merge::{merge, ConflictRule, MergeConflict, MergeResult, MergeWeight};
use super::{PartialResultPolicy, SubTaskContract};
use crate::clock::LogicalTime;
use crate::value::{Record, Scalar};

/// Handle a sub-agent gets for one invocation. Every proposer call goes
/// through [`SubAgentCall::propose`], which is how the orchestrator sees
/// retries a sub-agent performs on its own.
#[derive(Debug, Clone)]
pub struct SubAgentCall {
    pub attempt: u32,
    pub dispatched_at: LogicalTime,
    pub deadline: LogicalTime,
    now: LogicalTime,
    proposer_calls: Vec<LogicalTime>,
}

impl SubAgentCall {
    fn new(attempt: u32, dispatched_at: LogicalTime, deadline: LogicalTime) -> Self {
        Self {
            attempt,
            dispatched_at,
            deadline,
            now: dispatched_at,
            proposer_calls: Vec::new(),
        }
    }

    pub fn now(&self) -> LogicalTime {
        self.now
    }

    pub fn advance(&mut self, ms: u64) {
        self.now = self.now + ms;
    }

    /// Records one proposer invocation; returns its 0-based index within
    /// this call. Anything past 0 is a sub-agent-initiated retry.
    pub fn propose(&mut self) -> u32 {
        self.proposer_calls.push(self.now);
        (self.proposer_calls.len() - 1) as u32
    }

    pub fn proposer_calls(&self) -> &[LogicalTime] {
        &self.proposer_calls
    }
}

pub type SubAgentRun = Result<Record, String>;

pub trait SubAgent {
    fn id(&self) -> &str;
    fn invoke(&mut self, task: &Record, call: &mut SubAgentCall) -> SubAgentRun;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordinationKind {
    Dispatched,
    ProposerInvoked,
    SubAgentRetry,
    RetryAfterDeadline,
    Returned,
    LateOutput,
    ParentRetry,
    SubTaskFailed,
    ConflictResolved,
    MergeConflict,
    Merged,
}

impl CoordinationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Dispatched => "dispatched",
            Self::ProposerInvoked => "proposer_invoked",
            Self::SubAgentRetry => "sub_agent_retry",
            Self::RetryAfterDeadline => "retry_after_deadline",
            Self::Returned => "returned",
            Self::LateOutput => "late_output",
            Self::ParentRetry => "parent_retry",
            Self::SubTaskFailed => "sub_task_failed",
            Self::ConflictResolved => "conflict_resolved",
            Self::MergeConflict => "merge_conflict",
            Self::Merged => "merged",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoordinationEvent {
    pub at: LogicalTime,
    pub agent: Option<String>,
    pub kind: CoordinationKind,
    #[serde(default, skip_serializing_if = "Record::is_empty")]
    pub detail: Record,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum DelegationError {
    #[error("{agents} sub-agents but {contracts} contracts")]
    ContractMismatch { agents: usize, contracts: usize },
    #[error("sub-agent `{agent}` missed its deadline")]
    DeadlineExceeded { agent: String },
    #[error("sub-agent `{agent}` failed after {attempts} attempts: {reason}")]
    SubTaskFailed {
        agent: String,
        attempts: u32,
        reason: String,
    },
    #[error("only {got} of the required {need} sub-agents returned")]
    TooFewPeers { got: usize, need: usize },
    #[error(transparent)]
    MergeConflict(#[from] MergeConflict),
}

#[derive(Debug, Clone)]
pub struct DelegationOutcome {
    pub result: Result<MergeResult, DelegationError>,
    pub trace: Vec<CoordinationEvent>,
    /// Proposer invocations per sub-agent, including its own retries.
    pub proposer_calls: BTreeMap<String, u32>,
    /// Retries initiated by sub-agents rather than the orchestrator.
    pub sub_agent_retries: u32,
    pub finished_at: LogicalTime,
}

impl DelegationOutcome {
    pub fn into_result(self) -> Result<MergeResult, DelegationError> {
        self.result
    }
}

enum AgentResult {
    Ok(Record),
    Late,
    Failed { attempts: u32, reason: String },
}

/// Dispatches `task` to every sub-agent under its contract, owns all retries,
/// and merges whatever comes back. Sub-agents run concurrently from `start`.
pub fn delegate<W: MergeWeight>(
    task: &Record,
    agents: &mut [Box<dyn SubAgent>],
    contracts: &[SubTaskContract],
    weights: &BTreeMap<String, W>,
    rules: &[ConflictRule],
    start: LogicalTime,
) -> DelegationOutcome {
    let mut out = DelegationOutcome {
        result: Ok(MergeResult::default()),
        trace: Vec::new(),
        proposer_calls: BTreeMap::new(),
        sub_agent_retries: 0,
        finished_at: start,
    };
    if agents.len() != contracts.len() {
        out.result = Err(DelegationError::ContractMismatch {
            agents: agents.len(),
            contracts: contracts.len(),
        });
        return out;
    }

    let total_weight = weights.values().filter_map(|w| w.to_f64()).sum::<f64>();
    let mut outputs = BTreeMap::new();
    let mut failure: Option<DelegationError> = None;
    let mut min_peers = 0usize;

    for (agent, contract) in agents.iter_mut().zip(contracts) {
        let id = agent.id().to_owned();
        let (res, end) = run_one(task, agent.as_mut(), contract, start, &mut out);
        out.finished_at = out.finished_at.max(end);
        match contract.partial_result_policy {
            PartialResultPolicy::RequireAll => min_peers = usize::MAX,
            PartialResultPolicy::BestEffort { min_peers: m } => {
                if min_peers != usize::MAX {
                    min_peers = min_peers.max(m);
                }
            }
        }
        match res {
            AgentResult::Ok(r) => {
                outputs.insert(id, r);
            }
            AgentResult::Late => {
                if contract.partial_result_policy == PartialResultPolicy::RequireAll
                    && failure.is_none()
                {
                    failure = Some(DelegationError::DeadlineExceeded { agent: id });
                }
            }
            AgentResult::Failed { attempts, reason } => {
                if contract.partial_result_policy == PartialResultPolicy::RequireAll
                    && failure.is_none()
                {
                    failure = Some(DelegationError::SubTaskFailed {
                        agent: id,
                        attempts,
                        reason,
                    });
                }
            }
        }
    }
    if let Some(e) = failure {
        out.result = Err(e);
        return out;
    }
    if min_peers != usize::MAX && outputs.len() < min_peers {
        out.result = Err(DelegationError::TooFewPeers {
            got: outputs.len(),
            need: min_peers,
        });
        return out;
    }

    let at = out.finished_at;
    match merge(&outputs, weights, rules) {
        Ok(m) => {
            for c in &m.conflicts {
                let share = weights
                    .get(&c.winner)
                    .and_then(|w| w.to_f64())
                    .filter(|_| total_weight > 0.0)
                    .map_or(0, |w| (w / total_weight * 1_000_000.0).round() as i64);
                let mut detail = Record::new();
                detail.insert("field".into(), Scalar::from(c.field.as_str()));
                detail.insert("weight_ppm".into(), share.into());
                detail.insert("contenders".into(), (c.contenders.len() as i64).into());
                out.trace.push(CoordinationEvent {
                    at,
                    agent: Some(c.winner.clone()),
                    kind: CoordinationKind::ConflictResolved,
                    detail,
                });
            }
            let mut detail = Record::new();
            detail.insert("fields".into(), (m.merged.len() as i64).into());
            detail.insert("conflicts".into(), (m.conflicts.len() as i64).into());
            out.trace.push(CoordinationEvent {
                at,
                agent: None,
                kind: CoordinationKind::Merged,
                detail,
            });
            out.result = Ok(m);
        }
        Err(e) => {
            let mut detail = Record::new();
            detail.insert("field".into(), Scalar::from(e.field.as_str()));
            out.trace.push(CoordinationEvent {
                at,
                agent: None,
                kind: CoordinationKind::MergeConflict,
                detail,
            });
            out.result = Err(e.into());
        }
    }
    out
}

fn run_one(
    task: &Record,
    agent: &mut dyn SubAgent,
    contract: &SubTaskContract,
    start: LogicalTime,
    out: &mut DelegationOutcome,
) -> (AgentResult, LogicalTime) {
    let id = agent.id().to_owned();
    let deadline = start + contract.deadline;
    let ev = |at, kind, detail| CoordinationEvent {
        at,
        agent: Some(id.clone()),
        kind,
        detail,
    };
    let mut t = start;
    let mut last_reason = String::new();
    for attempt in 0..=contract.retry_budget {
        if attempt > 0 {
            out.trace.push(ev(
                t,
                CoordinationKind::ParentRetry,
                attempt_detail(attempt),
            ));
        }
        out.trace
            .push(ev(t, CoordinationKind::Dispatched, attempt_detail(attempt)));
        let mut call = SubAgentCall::new(attempt, t, deadline);
        let run = agent.invoke(task, &mut call);
        for (i, at) in call.proposer_calls().iter().enumerate() {
            out.trace.push(ev(
                *at,
                CoordinationKind::ProposerInvoked,
                attempt_detail(attempt),
            ));
            if i > 0 {
                out.sub_agent_retries += 1;
                out.trace.push(ev(
                    *at,
                    CoordinationKind::SubAgentRetry,
                    attempt_detail(attempt),
                ));
                if *at > deadline {
                    out.trace.push(ev(
                        *at,
                        CoordinationKind::RetryAfterDeadline,
                        attempt_detail(attempt),
                    ));
                }
            }
        }
        *out.proposer_calls.entry(id.clone()).or_default() += call.proposer_calls().len() as u32;
        t = call.now();
        if t > deadline {
            let kind = if run.is_ok() {
                CoordinationKind::LateOutput
            } else {
                CoordinationKind::SubTaskFailed
            };
            out.trace.push(ev(t, kind, attempt_detail(attempt)));
            return (AgentResult::Late, t);
        }
        match run {
            Ok(r) => {
                out.trace
                    .push(ev(t, CoordinationKind::Returned, attempt_detail(attempt)));
                return (AgentResult::Ok(r), t);
            }
            Err(reason) => last_reason = reason,
        }
    }
    let attempts = contract.retry_budget + 1;
    let mut detail = attempt_detail(contract.retry_budget);
    detail.insert("reason".into(), Scalar::from(last_reason.as_str()));
    out.trace
        .push(ev(t, CoordinationKind::SubTaskFailed, detail));
    (
        AgentResult::Failed {
            attempts,
            reason: last_reason,
        },
        t,
    )
}

fn attempt_detail(attempt: u32) -> Record {
    let mut r = Record::new();
    r.insert("attempt".into(), attempt.into());
    r
}
