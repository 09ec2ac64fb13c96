use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditEntry, AuditTrail, Plane};
use crate::clock::LogicalTime;
use crate::value::Record;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowState {
    Opened,
    Scoring,
    Drafting,
    AwaitingApproval,
    AwaitingCustomer,
    Contracting,
    HumanRequired,
    Renewed,
    RenewedWithOffer,
    Restructured,
    Churned,
    Escalated,
}

impl WorkflowState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            WorkflowState::Renewed
                | WorkflowState::RenewedWithOffer
                | WorkflowState::Restructured
                | WorkflowState::Churned
                | WorkflowState::Escalated
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WorkflowState::Opened => "opened",
            WorkflowState::Scoring => "scoring",
            WorkflowState::Drafting => "drafting",
            WorkflowState::AwaitingApproval => "awaiting_approval",
            WorkflowState::AwaitingCustomer => "awaiting_customer",
            WorkflowState::Contracting => "contracting",
            WorkflowState::HumanRequired => "human_required",
            WorkflowState::Renewed => "renewed",
            WorkflowState::RenewedWithOffer => "renewed_with_offer",
            WorkflowState::Restructured => "restructured",
            WorkflowState::Churned => "churned",
            WorkflowState::Escalated => "escalated",
        }
    }

    /// Legal next states for an autonomous worker. `HumanRequired` has none:
    /// only a human resolution moves a row out of it.
    pub fn legal_next(self) -> &'static [WorkflowState] {
        use WorkflowState::*;
        match self {
            Opened => &[Scoring, HumanRequired],
            Scoring => &[Drafting, HumanRequired],
            Drafting => &[AwaitingApproval, AwaitingCustomer, HumanRequired],
            AwaitingApproval => &[AwaitingCustomer, Drafting, HumanRequired],
            AwaitingCustomer => &[
                AwaitingCustomer,
                Drafting,
                Contracting,
                Churned,
                HumanRequired,
            ],
            Contracting => &[Renewed, RenewedWithOffer, Restructured, HumanRequired],
            HumanRequired => &[],
            Renewed | RenewedWithOffer | Restructured | Churned | Escalated => &[],
        }
    }
}

impl fmt::Display for WorkflowState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimerHandle {
    pub timer_id: u64,
    pub row_id: String,
    pub fire_at: LogicalTime,
    pub scheduled_version: u64,
    pub intended_transition: (WorkflowState, WorkflowState),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRow {
    pub row_id: String,
    pub state: WorkflowState,
    pub version: u64,
    pub data: Record,
    pub timers: Vec<TimerHandle>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CasError {
    #[error("stale write: row is at version {current_version}")]
    Stale { current_version: u64 },
    #[error("unknown row `{0}`")]
    UnknownRow(String),
    #[error("row `{0}` already exists")]
    DuplicateRow(String),
    #[error("snapshot write failed: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TimerFire {
    Applied(StateRow),
    SkippedStale { current_version: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransitionCause {
    Cas,
    Timer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub row_id: String,
    pub from: WorkflowState,
    pub to: WorkflowState,
    pub version: u64,
    pub cause: TransitionCause,
}

/// Writes `snapshot-{row_id}-{version}` whenever a row's version is a
/// multiple of `every`.
#[derive(Debug, Clone)]
pub struct SnapshotPolicy {
    pub dir: PathBuf,
    pub every: u64,
}

impl SnapshotPolicy {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            every: 100,
        }
    }
}

/// In-process ordered row store with conditional update.
#[derive(Debug, Default)]
pub struct StateStore {
    rows: BTreeMap<String, StateRow>,
    history: Vec<TransitionRecord>,
    next_timer_id: u64,
    snapshots: Option<SnapshotPolicy>,
}

impl StateStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_snapshots(policy: SnapshotPolicy) -> Self {
        Self {
            snapshots: Some(policy),
            ..Self::default()
        }
    }

    pub fn insert(
        &mut self,
        row_id: impl Into<String>,
        state: WorkflowState,
        data: Record,
    ) -> Result<StateRow, CasError> {
        let row_id = row_id.into();
        if self.rows.contains_key(&row_id) {
            return Err(CasError::DuplicateRow(row_id));
        }
        let row = StateRow {
            row_id: row_id.clone(),
            state,
            version: 0,
            data,
            timers: Vec::new(),
        };
        self.rows.insert(row_id, row.clone());
        Ok(row)
    }

    pub fn get(&self, row_id: &str) -> Option<&StateRow> {
        self.rows.get(row_id)
    }

    pub fn rows(&self) -> impl Iterator<Item = &StateRow> {
        self.rows.values()
    }

    pub fn history(&self) -> &[TransitionRecord] {
        &self.history
    }

    /// Applies the transition only if the row is still at `expected_version`.
    pub fn cas_transition(
        &mut self,
        row_id: &str,
        expected_version: u64,
        next_state: WorkflowState,
        data_delta: Record,
    ) -> Result<StateRow, CasError> {
        self.transition(
            row_id,
            expected_version,
            next_state,
            data_delta,
            TransitionCause::Cas,
        )
    }

    fn transition(
        &mut self,
        row_id: &str,
        expected_version: u64,
        next_state: WorkflowState,
        data_delta: Record,
        cause: TransitionCause,
    ) -> Result<StateRow, CasError> {
        let row = self
            .rows
            .get_mut(row_id)
            .ok_or_else(|| CasError::UnknownRow(row_id.to_owned()))?;
        if row.version != expected_version {
            return Err(CasError::Stale {
                current_version: row.version,
            });
        }
        let from = row.state;
        row.state = next_state;
        row.version = expected_version + 1;
        row.data.extend(data_delta);
        let snapshot = row.clone();
        self.history.push(TransitionRecord {
            row_id: row_id.to_owned(),
            from,
            to: next_state,
            version: snapshot.version,
            cause,
        });
        if let Some(policy) = &self.snapshots {
            if policy.every > 0 && snapshot.version % policy.every == 0 {
                let path = policy
                    .dir
                    .join(format!("snapshot-{}-{}", snapshot.row_id, snapshot.version));
                let bytes = serde_json::to_vec_pretty(&snapshot).expect("rows serialize");
                fs::write(&path, bytes)
                    .map_err(|e| CasError::Snapshot(format!("{}: {e}", path.display())))?;
            }
        }
        Ok(snapshot)
    }

    /// Attaches a timer carrying the row's current version.
    pub fn schedule_timer(
        &mut self,
        row_id: &str,
        fire_at: LogicalTime,
        intended_transition: (WorkflowState, WorkflowState),
    ) -> Result<TimerHandle, CasError> {
        let timer_id = self.next_timer_id;
        let row = self
            .rows
            .get_mut(row_id)
            .ok_or_else(|| CasError::UnknownRow(row_id.to_owned()))?;
        self.next_timer_id += 1;
        let handle = TimerHandle {
            timer_id,
            row_id: row_id.to_owned(),
            fire_at,
            scheduled_version: row.version,
            intended_transition,
        };
        row.timers.push(handle.clone());
        Ok(handle)
    }

    /// Fires a timer as a CAS at its scheduled version. A row that moved on
    /// since scheduling is left untouched and the skip is audited.
    pub fn fire_timer(
        &mut self,
        handle: &TimerHandle,
        audit: &mut AuditTrail,
    ) -> Result<TimerFire, CasError> {
        let row = self
            .rows
            .get_mut(&handle.row_id)
            .ok_or_else(|| CasError::UnknownRow(handle.row_id.clone()))?;
        row.timers.retain(|t| t.timer_id != handle.timer_id);
        match self.transition(
            &handle.row_id,
            handle.scheduled_version,
            handle.intended_transition.1,
            Record::new(),
            TransitionCause::Timer,
        ) {
            Ok(row) => Ok(TimerFire::Applied(row)),
            Err(CasError::Stale { current_version }) => {
                audit.append(
                    AuditEntry::new(
                        handle.row_id.clone(),
                        Plane::StaleTimer,
                        "stale_timer",
                        handle.fire_at,
                    )
                    .detail(format!(
                        "timer {} scheduled at v{} skipped; row at v{current_version}",
                        handle.timer_id, handle.scheduled_version
                    )),
                );
                Ok(TimerFire::SkippedStale { current_version })
            }
            Err(e) => Err(e),
        }
    }

    /// Timers due at or before `now`, ordered by fire time then id.
    pub fn due_timers(&self, now: LogicalTime) -> Vec<TimerHandle> {
        let mut due: Vec<TimerHandle> = self
            .rows
            .values()
            .flat_map(|r| r.timers.iter())
            .filter(|t| t.fire_at <= now)
            .cloned()
            .collect();
        due.sort_by_key(|t| (t.fire_at, t.timer_id));
        due
    }
}

/// Thread-safe handle; every write is serialized through one lock, which
/// makes the conditional update linearizable.
#[derive(Debug, Clone, Default)]
pub struct SharedStateStore {
    inner: Arc<Mutex<StateStore>>,
}

impl SharedStateStore {
    pub fn new(store: StateStore) -> Self {
        Self {
            inner: Arc::new(Mutex::new(store)),
        }
    }

    pub fn read(&self, row_id: &str) -> Option<StateRow> {
        self.lock().get(row_id).cloned()
    }

    pub fn cas_transition(
        &self,
        row_id: &str,
        expected_version: u64,
        next_state: WorkflowState,
        data_delta: Record,
    ) -> Result<StateRow, CasError> {
        self.lock()
            .cas_transition(row_id, expected_version, next_state, data_delta)
    }

    pub fn with<R>(&self, f: impl FnOnce(&mut StateStore) -> R) -> R {
        f(&mut self.lock())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, StateStore> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record;
    use WorkflowState::*;

    fn store_at(version: u64) -> StateStore {
        let mut s = StateStore::new();
        s.insert("r", Opened, Record::new()).unwrap();
        for v in 0..version {
            s.cas_transition("r", v, AwaitingCustomer, Record::new())
                .unwrap();
        }
        s
    }

    #[test]
    fn matching_version_advances_by_one() {
        let mut s = store_at(3);
        let row = s
            .cas_transition("r", 3, Contracting, record! { "k" => 1i64 })
            .unwrap();
        assert_eq!(row.version, 4);
        assert_eq!(row.data["k"], 1i64.into());
    }

    #[test]
    fn stale_write_leaves_row_untouched() {
        let mut s = store_at(4);
        let before = s.get("r").cloned();
        assert_eq!(
            s.cas_transition("r", 3, Churned, Record::new()),
            Err(CasError::Stale { current_version: 4 })
        );
        assert_eq!(s.get("r").cloned(), before);
    }

    #[test]
    fn unknown_row() {
        let mut s = StateStore::new();
        assert_eq!(
            s.cas_transition("x", 0, Opened, Record::new()),
            Err(CasError::UnknownRow("x".into()))
        );
    }

    #[test]
    fn timer_applies_when_row_unchanged() {
        let mut s = store_at(3);
        let mut audit = AuditTrail::new();
        let h = s
            .schedule_timer("r", LogicalTime(100), (AwaitingCustomer, Churned))
            .unwrap();
        assert_eq!(h.scheduled_version, 3);
        match s.fire_timer(&h, &mut audit).unwrap() {
            TimerFire::Applied(row) => {
                assert_eq!(row.version, 4);
                assert_eq!(row.state, Churned);
            }
            other => panic!("{other:?}"),
        }
        assert!(audit.is_empty());
        assert!(s.get("r").unwrap().timers.is_empty());
    }

    #[test]
    fn timer_after_override_is_skipped_and_audited() {
        let mut s = store_at(3);
        let mut audit = AuditTrail::new();
        let h = s
            .schedule_timer("r", LogicalTime(100), (AwaitingCustomer, Churned))
            .unwrap();
        s.cas_transition("r", 3, HumanRequired, Record::new())
            .unwrap();
        s.cas_transition("r", 4, AwaitingCustomer, Record::new())
            .unwrap();
        assert_eq!(
            s.fire_timer(&h, &mut audit).unwrap(),
            TimerFire::SkippedStale { current_version: 5 }
        );
        assert_eq!(s.get("r").unwrap().state, AwaitingCustomer);
        assert_eq!(audit.count(Plane::StaleTimer), 1);
    }

    #[test]
    fn two_timers_same_version_one_applies() {
        let mut s = store_at(1);
        let mut audit = AuditTrail::new();
        let a = s
            .schedule_timer("r", LogicalTime(5), (AwaitingCustomer, Contracting))
            .unwrap();
        let b = s
            .schedule_timer("r", LogicalTime(6), (AwaitingCustomer, Churned))
            .unwrap();
        let due = s.due_timers(LogicalTime(10));
        assert_eq!(due, vec![a.clone(), b.clone()]);
        assert!(matches!(
            s.fire_timer(&a, &mut audit).unwrap(),
            TimerFire::Applied(_)
        ));
        assert!(matches!(
            s.fire_timer(&b, &mut audit).unwrap(),
            TimerFire::SkippedStale { .. }
        ));
        assert_eq!(s.get("r").unwrap().state, Contracting);
    }

    #[test]
    fn snapshots_are_written_on_schedule() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = StateStore::with_snapshots(SnapshotPolicy {
            dir: dir.path().into(),
            every: 2,
        });
        s.insert("row-1", Opened, Record::new()).unwrap();
        for v in 0..4 {
            s.cas_transition("row-1", v, AwaitingCustomer, Record::new())
                .unwrap();
        }
        assert!(dir.path().join("snapshot-row-1-2").exists());
        assert!(dir.path().join("snapshot-row-1-4").exists());
        assert!(!dir.path().join("snapshot-row-1-3").exists());
    }

    #[test]
    fn threaded_racers_have_one_winner() {
        let shared = SharedStateStore::new(store_at(0));
        let handles: Vec<_> = (0..10)
            .map(|_| {
                let s = shared.clone();
                std::thread::spawn(move || s.cas_transition("r", 0, Scoring, Record::new()).is_ok())
            })
            .collect();
        let wins = handles
            .into_iter()
            .map(|h| h.join().unwrap())
            .filter(|w| *w)
            .count();
        assert_eq!(wins, 1);
        assert_eq!(shared.read("r").unwrap().version, 1);
    }

    #[test]
    fn human_required_has_no_autonomous_exit() {
        assert!(HumanRequired.legal_next().is_empty());
        assert!(Opened.legal_next().contains(&HumanRequired));
    }
}
