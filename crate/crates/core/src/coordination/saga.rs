use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{PartialResultPolicy, SeededScheduler, SubTaskContract};
use crate::clock::LogicalTime;
use crate::value::{Record, Scalar};

/// Undo action for one forward write: put `key` back to `restore` (or
/// delete it when `restore` is `None`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Compensation {
    pub store: String,
    pub key: String,
    pub restore: Option<Scalar>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepStatus {
    Registered,
    Done,
    Compensated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SagaLogEntry {
    pub step_index: u32,
    pub peer: String,
    pub peer_index: usize,
    pub action_id: String,
    pub compensation: Compensation,
    pub action_steps: u32,
    pub compensation_steps: u32,
    pub status: StepStatus,
    pub completed_at: Option<LogicalTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SagaEventKind {
    Registered,
    Done,
    PeerReturned,
    PeerFailed,
    Tie,
    CompensationAlarm,
    Compensated,
    CompensationDuplicate,
    CompensationRetry,
    CompensationFailed,
    Committed,
    Aborted,
}

impl SagaEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Registered => "registered",
            Self::Done => "done",
            Self::PeerReturned => "peer_returned",
            Self::PeerFailed => "peer_failed",
            Self::Tie => "tie",
            Self::CompensationAlarm => "compensation_alarm",
            Self::Compensated => "compensated",
            Self::CompensationDuplicate => "compensation_duplicate",
            Self::CompensationRetry => "compensation_retry",
            Self::CompensationFailed => "compensation_failed",
            Self::Committed => "committed",
            Self::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SagaEvent {
    pub at: LogicalTime,
    pub kind: SagaEventKind,
    pub peer: Option<String>,
    pub step_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Record::is_empty")]
    pub detail: Record,
}

/// A compensation delivery the store could not take.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("store unavailable for compensation")]
pub struct StoreUnavailable;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum SagaError {
    #[error("unknown external store `{0}`")]
    UnknownStore(String),
    #[error("{peers} peers but {contracts} contracts")]
    ContractMismatch { peers: usize, contracts: usize },
    #[error(
        "compensation for step {step_index} of saga `{saga_id}` failed after {attempts} deliveries"
    )]
    CompensationFailed {
        saga_id: String,
        step_index: u32,
        attempts: u32,
    },
}

/// Proof that a compensation was logged. Only [`SagaLog::register`] makes
/// one, and [`ExternalStore::write`] consumes it.
#[derive(Debug)]
pub struct StepToken {
    step_index: u32,
    key: String,
}

/// Append-only compensation log for one saga.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SagaLog {
    pub saga_id: String,
    pub entries: Vec<SagaLogEntry>,
    pub events: Vec<SagaEvent>,
}

impl SagaLog {
    pub fn new(saga_id: impl Into<String>) -> Self {
        Self {
            saga_id: saga_id.into(),
            entries: Vec::new(),
            events: Vec::new(),
        }
    }

    /// Logs the compensation for a write that has not happened yet. The
    /// restore value is the store's current value for `key`.
    pub fn register(
        &mut self,
        stores: &ExternalStores,
        peer: (&str, usize),
        write: &PlannedWrite,
        at: LogicalTime,
    ) -> Result<StepToken, SagaError> {
        let store = stores
            .get(&write.store)
            .ok_or_else(|| SagaError::UnknownStore(write.store.clone()))?;
        let step_index = self.entries.len() as u32;
        self.entries.push(SagaLogEntry {
            step_index,
            peer: peer.0.to_owned(),
            peer_index: peer.1,
            action_id: write.action_id.clone(),
            compensation: Compensation {
                store: write.store.clone(),
                key: write.key.clone(),
                restore: store.get(&write.key).cloned(),
            },
            action_steps: write.action_steps,
            compensation_steps: write.compensation_steps,
            status: StepStatus::Registered,
            completed_at: None,
        });
        self.push(
            at,
            SagaEventKind::Registered,
            Some(peer.0),
            Some(step_index),
            Record::new(),
        );
        if write.compensation_steps > write.action_steps {
            let mut d = Record::new();
            d.insert("action_steps".into(), write.action_steps.into());
            d.insert("compensation_steps".into(), write.compensation_steps.into());
            self.push(
                at,
                SagaEventKind::CompensationAlarm,
                Some(peer.0),
                Some(step_index),
                d,
            );
        }
        Ok(StepToken {
            step_index,
            key: write.key.clone(),
        })
    }

    fn push(
        &mut self,
        at: LogicalTime,
        kind: SagaEventKind,
        peer: Option<&str>,
        step: Option<u32>,
        detail: Record,
    ) {
        self.events.push(SagaEvent {
            at,
            kind,
            peer: peer.map(str::to_owned),
            step_index: step,
            detail,
        });
    }

    pub fn count(&self, kind: SagaEventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }
}

/// A key-value system outside the agent. Compensations are idempotent per
/// `(saga_id, step_index)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExternalStore {
    data: BTreeMap<String, Scalar>,
    compensated: BTreeSet<(String, u32)>,
    failing: BTreeMap<(String, u32), u32>,
    writes: u64,
}

pub type ExternalStores = BTreeMap<String, ExternalStore>;

impl ExternalStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: impl Into<Scalar>) -> Self {
        self.data.insert(key.to_owned(), value.into());
        self
    }

    pub fn get(&self, key: &str) -> Option<&Scalar> {
        self.data.get(key)
    }

    pub fn data(&self) -> &BTreeMap<String, Scalar> {
        &self.data
    }

    pub fn writes(&self) -> u64 {
        self.writes
    }

    pub fn write(&mut self, token: StepToken, value: Scalar) {
        self.writes += 1;
        self.data.insert(token.key, value);
    }

    /// Makes the next `times` deliveries of this compensation fail.
    pub fn fail_compensation(&mut self, saga_id: &str, step_index: u32, times: u32) {
        self.failing.insert((saga_id.to_owned(), step_index), times);
    }

    /// `Ok(true)` when applied, `Ok(false)` for a duplicate delivery.
    pub fn compensate(
        &mut self,
        saga_id: &str,
        step_index: u32,
        c: &Compensation,
    ) -> Result<bool, StoreUnavailable> {
        let k = (saga_id.to_owned(), step_index);
        if let Some(left) = self.failing.get_mut(&k) {
            if *left > 0 {
                *left -= 1;
                return Err(StoreUnavailable);
            }
        }
        if !self.compensated.insert(k) {
            return Ok(false);
        }
        match &c.restore {
            Some(v) => self.data.insert(c.key.clone(), v.clone()),
            None => self.data.remove(&c.key),
        };
        Ok(true)
    }
}

/// One forward write a peer intends to make, `at` ms after it starts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedWrite {
    pub at: u64,
    pub store: String,
    pub key: String,
    pub value: Scalar,
    pub action_id: String,
    #[serde(default = "one")]
    pub action_steps: u32,
    #[serde(default = "one")]
    pub compensation_steps: u32,
}

fn one() -> u32 {
    1
}

impl PlannedWrite {
    pub fn new(at: u64, store: &str, key: &str, value: impl Into<Scalar>) -> Self {
        Self {
            at,
            store: store.into(),
            key: key.into(),
            value: value.into(),
            action_id: format!("{store}.{key}"),
            action_steps: 1,
            compensation_steps: 1,
        }
    }

    pub fn costs(mut self, action_steps: u32, compensation_steps: u32) -> Self {
        self.action_steps = action_steps;
        self.compensation_steps = compensation_steps;
        self
    }
}

/// What a peer will do once dispatched. Writes later than `fail_at` never
/// happen; a peer that fails still leaves the writes it already made.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerPlan {
    pub writes: Vec<PlannedWrite>,
    pub duration: u64,
    pub result: Result<Record, String>,
    /// Offset of the failure; defaults to `duration` when `result` is `Err`.
    pub fail_at: Option<u64>,
}

pub trait Peer {
    fn id(&self) -> &str;
    fn plan(&mut self, input: &Record) -> PeerPlan;
}

/// Peer that replays a fixed plan.
#[derive(Debug, Clone)]
pub struct ScriptedPeer {
    pub id: String,
    pub plan: PeerPlan,
}

impl ScriptedPeer {
    pub fn ok(id: &str, duration: u64, writes: Vec<PlannedWrite>, output: Record) -> Self {
        Self {
            id: id.into(),
            plan: PeerPlan {
                writes,
                duration,
                result: Ok(output),
                fail_at: None,
            },
        }
    }

    pub fn failing(id: &str, fail_at: u64, writes: Vec<PlannedWrite>) -> Self {
        Self {
            id: id.into(),
            plan: PeerPlan {
                writes,
                duration: fail_at,
                result: Err("injected failure".into()),
                fail_at: Some(fail_at),
            },
        }
    }
}

impl Peer for ScriptedPeer {
    fn id(&self) -> &str {
        &self.id
    }

    fn plan(&mut self, _input: &Record) -> PeerPlan {
        self.plan.clone()
    }
}

/// Test-time fault injection for compensation delivery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaultPlan {
    /// Steps whose compensation is delivered twice.
    pub redeliver: BTreeSet<u32>,
    pub max_deliveries: u32,
}

impl Default for FaultPlan {
    fn default() -> Self {
        Self {
            redeliver: BTreeSet::new(),
            max_deliveries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatherResult {
    pub committed: bool,
    pub outputs: BTreeMap<String, Record>,
    pub failures: BTreeMap<String, String>,
    /// Step indices in the order they completed.
    pub completion_order: Vec<u32>,
    /// Step indices in the order they were compensated.
    pub compensated: Vec<u32>,
    pub finished_at: LogicalTime,
}

struct Pending<'a> {
    at: LogicalTime,
    peer_index: usize,
    seq: usize,
    write: &'a PlannedWrite,
}

/// Fans `input` out to every peer and joins the results. Under
/// `require_all`, any failure compensates every completed write in reverse
/// completion order; `best_effort` keeps what succeeded.
#[allow(clippy::too_many_arguments)]
pub fn scatter_gather(
    input: &Record,
    peers: &mut [Box<dyn Peer>],
    contracts: &[SubTaskContract],
    saga: &mut SagaLog,
    stores: &mut ExternalStores,
    scheduler: SeededScheduler,
    faults: &FaultPlan,
    start: LogicalTime,
) -> Result<GatherResult, SagaError> {
    if peers.len() != contracts.len() {
        return Err(SagaError::ContractMismatch {
            peers: peers.len(),
            contracts: contracts.len(),
        });
    }
    let ids: Vec<String> = peers.iter().map(|p| p.id().to_owned()).collect();
    let mut plans: Vec<PeerPlan> = Vec::with_capacity(peers.len());
    for i in scheduler.order(peers.len()) {
        plans.push(peers[i].plan(input));
    }
    // Undo the scheduler permutation so plans[i] belongs to peer i.
    let order = scheduler.order(peers.len());
    let mut by_peer: Vec<Option<PeerPlan>> = vec![None; peers.len()];
    for (plan, i) in plans.into_iter().zip(order) {
        by_peer[i] = Some(plan);
    }
    let plans: Vec<PeerPlan> = by_peer
        .into_iter()
        .map(|p| p.expect("every peer planned"))
        .collect();

    // A peer's effective end: failure point, deadline, or natural finish.
    let mut outputs = BTreeMap::new();
    let mut failures = BTreeMap::new();
    let mut cutoffs = Vec::with_capacity(plans.len());
    let mut finished_at = start;
    for (i, plan) in plans.iter().enumerate() {
        let begin = start + scheduler.offset(i);
        let deadline = contracts[i].deadline;
        let (cut, outcome) = match &plan.result {
            Err(e) => (
                plan.fail_at.unwrap_or(plan.duration).min(deadline),
                Err(e.clone()),
            ),
            Ok(_) if plan.duration > deadline => (deadline, Err("deadline exceeded".to_owned())),
            Ok(r) => (plan.duration, Ok(r.clone())),
        };
        cutoffs.push((begin, cut));
        finished_at = finished_at.max(begin + cut);
        match outcome {
            Ok(r) => {
                outputs.insert(ids[i].clone(), r);
            }
            Err(e) => {
                failures.insert(ids[i].clone(), e);
            }
        }
    }

    // Interleave every write on the shared logical timeline.
    let mut pending: Vec<Pending> = Vec::new();
    for (i, plan) in plans.iter().enumerate() {
        let (begin, cut) = cutoffs[i];
        for (seq, w) in plan.writes.iter().enumerate() {
            if w.at <= cut {
                pending.push(Pending {
                    at: begin + w.at,
                    peer_index: i,
                    seq,
                    write: w,
                });
            }
        }
    }
    pending.sort_by_key(|p| (p.at, p.peer_index, p.seq));
    let mut completion_order = Vec::new();
    let mut prev: Option<(LogicalTime, usize)> = None;
    for p in &pending {
        let id = ids[p.peer_index].as_str();
        let token = saga.register(stores, (id, p.peer_index), p.write, p.at)?;
        let step = token.step_index;
        stores
            .get_mut(&p.write.store)
            .expect("checked at registration")
            .write(token, p.write.value.clone());
        let entry = &mut saga.entries[step as usize];
        entry.status = StepStatus::Done;
        entry.completed_at = Some(p.at);
        saga.push(
            p.at,
            SagaEventKind::Done,
            Some(id),
            Some(step),
            Record::new(),
        );
        if let Some((t, other)) = prev {
            if t == p.at && other != p.peer_index {
                let mut d = Record::new();
                d.insert("ordered_after".into(), Scalar::from(ids[other].as_str()));
                saga.push(p.at, SagaEventKind::Tie, Some(id), Some(step), d);
            }
        }
        prev = Some((p.at, p.peer_index));
        completion_order.push(step);
    }
    for (i, id) in ids.iter().enumerate() {
        let (begin, cut) = cutoffs[i];
        match failures.get(id) {
            Some(e) => {
                let mut d = Record::new();
                d.insert("reason".into(), Scalar::from(e.as_str()));
                saga.push(begin + cut, SagaEventKind::PeerFailed, Some(id), None, d);
            }
            None => saga.push(
                begin + cut,
                SagaEventKind::PeerReturned,
                Some(id),
                None,
                Record::new(),
            ),
        }
    }

    let must_abort = failures.keys().any(|id| {
        let i = ids.iter().position(|x| x == id).expect("known peer");
        contracts[i].partial_result_policy == PartialResultPolicy::RequireAll
    });
    let min_peers = contracts
        .iter()
        .filter_map(|c| match c.partial_result_policy {
            PartialResultPolicy::BestEffort { min_peers } => Some(min_peers),
            PartialResultPolicy::RequireAll => None,
        })
        .max()
        .unwrap_or(0);

    let mut compensated = Vec::new();
    let mut t = finished_at;
    if must_abort {
        for &step in completion_order.iter().rev() {
            let entry = saga.entries[step as usize].clone();
            let store = stores
                .get_mut(&entry.compensation.store)
                .expect("store exists");
            let deliveries = if faults.redeliver.contains(&step) {
                2
            } else {
                1
            };
            for _ in 0..deliveries {
                let mut attempts = 0;
                loop {
                    attempts += 1;
                    t = t + 1;
                    match store.compensate(&saga.saga_id, step, &entry.compensation) {
                        Ok(true) => {
                            saga.entries[step as usize].status = StepStatus::Compensated;
                            saga.push(
                                t,
                                SagaEventKind::Compensated,
                                Some(&entry.peer),
                                Some(step),
                                Record::new(),
                            );
                            compensated.push(step);
                            break;
                        }
                        Ok(false) => {
                            saga.push(
                                t,
                                SagaEventKind::CompensationDuplicate,
                                Some(&entry.peer),
                                Some(step),
                                Record::new(),
                            );
                            break;
                        }
                        Err(StoreUnavailable) if attempts < faults.max_deliveries => {
                            saga.push(
                                t,
                                SagaEventKind::CompensationRetry,
                                Some(&entry.peer),
                                Some(step),
                                Record::new(),
                            );
                        }
                        Err(StoreUnavailable) => {
                            saga.push(
                                t,
                                SagaEventKind::CompensationFailed,
                                Some(&entry.peer),
                                Some(step),
                                Record::new(),
                            );
                            return Err(SagaError::CompensationFailed {
                                saga_id: saga.saga_id.clone(),
                                step_index: step,
                                attempts,
                            });
                        }
                    }
                }
            }
        }
        saga.push(t, SagaEventKind::Aborted, None, None, Record::new());
    } else if outputs.len() >= min_peers {
        saga.push(t, SagaEventKind::Committed, None, None, Record::new());
    }
    let committed = !must_abort && outputs.len() >= min_peers;
    Ok(GatherResult {
        committed,
        outputs,
        failures,
        completion_order,
        compensated,
        finished_at: t,
    })
}
