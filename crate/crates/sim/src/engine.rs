//! The 90-day renewal workflow on a discrete-event agenda.
//!
//! Each renewal is a versioned row. Every agenda entry carries the version it
//! was scheduled against and is dropped when the row has moved on. Console
//! commands are drained at each day boundary, and a snapshot is published at
//! the end of every simulated day.

use std::collections::BTreeMap;

use sdb_console::{Command, ConsoleHandle, KillTokenView, Publish};
use sdb_core::audit::AuditEntry;
use sdb_core::control::{
    check_cancel, gate_check, revoke, supervise, ApprovalBook, ApprovalError, ApprovalRequest,
    CancelCheck, CancellationToken, ChildRun, Crash, EscalateOutcome, EscalationBook,
    EscalationError, GateDecision, GatePolicy, PolicyVersion, Resolution, SupervisionOutcome,
    Throttle, ThrottleCaps, ThrottleDecision,
};
use sdb_core::coordination::{
    delegate, scatter_gather, ConflictRule, CoordinationKind, ExternalStore, ExternalStores,
    FaultPlan, Peer, SagaError, SagaEventKind, SagaLog, SeededScheduler, SubAgent, SubTaskContract,
};
use sdb_core::observability::{
    audit_row, boundary_row, coordination_row, saga_row, Module, RowKind, TraceError, TraceRow,
    TraceStore,
};
use sdb_core::sdb::{
    repropose, Boundary, FnVerifier, ProposerConfig, RejectReason, RejectSignal, TraceVerdict,
};
use sdb_core::spine::{
    CasError, StateStore, TimerFire, TimerHandle, TransitionCause, WorkflowState,
};
use sdb_core::{record, AuditTrail, LogicalTime, Plane, Record, Scalar};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    builder_config, channel_config, drafter_config, int_of, keyed, keyed_unit, offer, risk_class,
    scorer_config, sub_agent_weights, text_of, BillingPeer, CrmPeer, ProposerAgent, BUILDER,
    DRAFTER, SCORER,
};
use crate::config::SimulationConfig;
use crate::report::{build_report, SimulationReport};
use crate::telco::{RenewalScenario, SignalKind, CONTRACT_END_DAY};

const DAY: u64 = LogicalTime::MILLIS_PER_DAY;
const HOUR: u64 = 3_600_000;

/// Request id of the fleet-wide kill token and its audit rows.
pub const KILL_TOKEN: &str = "renewal-fleet";
pub const EOL_REQUEST: &str = "eol-event";
pub const CONSOLE_REQUEST: &str = "console";

#[derive(Debug, Error)]
pub enum SimError {
    #[error("the observability console is not serving; start it before the simulation")]
    ConsoleNotServing,
    #[error("asked for {need} scenarios but only {have} were supplied")]
    TooFewScenarios { have: usize, need: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Cas(#[from] CasError),
    #[error(transparent)]
    Approval(#[from] ApprovalError),
    #[error(transparent)]
    Escalation(#[from] EscalationError),
    #[error(transparent)]
    Saga(#[from] SagaError),
}

impl SimError {
    /// Exit code the CLI reports for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::TooFewScenarios { .. } | SimError::Config(_) => 1,
            _ => 2,
        }
    }
}

/// A decision the engine observed from a call's return value, kept apart
/// from the audit trail so the two can be checked against each other.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub request_id: String,
    pub plane: Plane,
    pub decision: String,
    pub at: LogicalTime,
}

#[derive(Debug)]
pub struct SimulationOutcome {
    pub report: SimulationReport,
    pub trace: TraceStore,
    pub audit: AuditTrail,
    pub ledger: Vec<LedgerEntry>,
}

#[derive(Debug, Clone)]
enum Task {
    Open(usize),
    Signal(usize, SignalKind),
    Score(usize, u64),
    Outreach(usize, u64),
    ApprovalReply(usize),
    ApprovalExpire,
    CustomerReply(usize, u64),
    Timer(TimerHandle),
    Eol,
    Horizon,
}

struct Renewal {
    offer: Record,
    drafter_input: Record,
    /// Policy the current offer last passed.
    gated_under: Option<PolicyVersion>,
    closed: bool,
}

struct Engine<'a> {
    cfg: &'a SimulationConfig,
    console: &'a ConsoleHandle,
    scenarios: Vec<RenewalScenario>,
    renewals: Vec<Renewal>,
    index: BTreeMap<String, usize>,
    store: StateStore,
    audit: AuditTrail,
    audit_cursor: usize,
    history_cursor: usize,
    boundary: Boundary,
    boundary_cursor: usize,
    trace: TraceStore,
    published: usize,
    approvals: ApprovalBook,
    escalations: EscalationBook,
    throttle: Throttle,
    kill: CancellationToken,
    stores: ExternalStores,
    agenda: BTreeMap<(LogicalTime, u64), Task>,
    next_seq: u64,
    ledger: Vec<LedgerEntry>,
    drafter: ProposerConfig,
    scorer: ProposerConfig,
    builder: ProposerConfig,
    channel: ProposerConfig,
    killed_at: Option<LogicalTime>,
}

/// Runs the renewal workflow over `scenarios`. Refuses to start unless
/// `console` is serving.
pub fn run_simulation(
    scenarios: &[RenewalScenario],
    cfg: &SimulationConfig,
    console: &ConsoleHandle,
) -> Result<SimulationOutcome, SimError> {
    if !console.is_serving() {
        return Err(SimError::ConsoleNotServing);
    }
    if scenarios.len() < cfg.scenario_count {
        return Err(SimError::TooFewScenarios {
            have: scenarios.len(),
            need: cfg.scenario_count,
        });
    }
    ProposerConfig::new(cfg.proposer_sigma, cfg.divergence_rate_delta)
        .map_err(|e| SimError::Config(e.to_string()))?;
    if !(-(CONTRACT_END_DAY as i32)..=0).contains(&cfg.eol_event_day) {
        return Err(SimError::Config(format!(
            "eol_event_day {} must lie in [-90, 0]",
            cfg.eol_event_day
        )));
    }
    let scenarios = scenarios[..cfg.scenario_count].to_vec();
    let mut engine = Engine::new(cfg, console, scenarios)?;
    engine.run()?;
    let report = build_report(
        &engine.scenarios,
        engine.trace.rows(),
        cfg,
        engine.killed_at,
    )?;
    Ok(SimulationOutcome {
        report,
        trace: engine.trace,
        audit: engine.audit,
        ledger: engine.ledger,
    })
}

fn at_day(day: u64, hour: u64, offset_ms: u64) -> LogicalTime {
    LogicalTime(day * DAY + hour * HOUR + offset_ms)
}

fn terminal_for(offer: &Record) -> WorkflowState {
    match text_of(offer, "offer").as_str() {
        "restructure" => WorkflowState::Restructured,
        _ if int_of(offer, "discount_pct") > 0 => WorkflowState::RenewedWithOffer,
        _ => WorkflowState::Renewed,
    }
}

impl<'a> Engine<'a> {
    fn new(
        cfg: &'a SimulationConfig,
        console: &'a ConsoleHandle,
        scenarios: Vec<RenewalScenario>,
    ) -> Result<Self, SimError> {
        let mut billing = ExternalStore::new();
        let mut crm = ExternalStore::new();
        let mut index = BTreeMap::new();
        let mut renewals = Vec::new();
        for (i, s) in scenarios.iter().enumerate() {
            if index.insert(s.renewal_id.clone(), i).is_some() {
                return Err(SimError::Config(format!(
                    "duplicate renewal id `{}`",
                    s.renewal_id
                )));
            }
            billing = billing
                .with(&format!("{}.plan", s.renewal_id), "current")
                .with(&format!("{}.discount_pct", s.renewal_id), 0i64);
            crm = crm.with(&format!("{}.status", s.renewal_id), "active");
            renewals.push(Renewal {
                offer: Record::new(),
                drafter_input: record! { "request_id" => s.renewal_id.as_str(), "class" => risk_class(s) },
                gated_under: None,
                closed: false,
            });
        }
        let (sigma, delta) = (cfg.proposer_sigma, cfg.divergence_rate_delta);
        Ok(Self {
            cfg,
            console,
            scenarios,
            renewals,
            index,
            store: StateStore::new(),
            audit: AuditTrail::new(),
            audit_cursor: 0,
            history_cursor: 0,
            boundary: Boundary::new(),
            boundary_cursor: 0,
            trace: TraceStore::new(),
            published: 0,
            approvals: ApprovalBook::new(),
            escalations: EscalationBook::new(),
            throttle: Throttle::new(cfg.throttle),
            kill: CancellationToken::new(KILL_TOKEN).with_propagation(cfg.kill_propagation_ms),
            stores: [("billing".to_owned(), billing), ("crm".to_owned(), crm)].into(),
            agenda: BTreeMap::new(),
            next_seq: 0,
            ledger: Vec::new(),
            drafter: drafter_config(sigma, delta),
            scorer: scorer_config(sigma, delta),
            builder: builder_config(sigma, delta),
            channel: channel_config(sigma, delta),
            killed_at: None,
        })
    }

    fn rid(&self, i: usize) -> &str {
        &self.scenarios[i].renewal_id
    }

    /// Intra-day offset that keeps renewals ordered within a tick.
    fn off(i: usize) -> u64 {
        i as u64 * 1_000
    }

    fn schedule(&mut self, at: LogicalTime, task: Task) {
        self.agenda.insert((at, self.next_seq), task);
        self.next_seq += 1;
    }

    fn policy_at(&self, at: LogicalTime) -> &'a GatePolicy {
        if at >= self.cfg.eol_time() {
            &self.cfg.policy_after_eol
        } else {
            &self.cfg.policy_before_eol
        }
    }

    fn product_eol(&self, i: usize, at: LogicalTime) -> bool {
        at >= self.cfg.eol_time() && self.scenarios[i].has_signal(SignalKind::ProductEol)
    }

    fn note(&mut self, request_id: &str, plane: Plane, decision: &str, at: LogicalTime) {
        self.ledger.push(LedgerEntry {
            request_id: request_id.to_owned(),
            plane,
            decision: decision.to_owned(),
            at,
        });
    }

    fn emit(&mut self, row: TraceRow) -> Result<(), SimError> {
        Ok(self.trace.record(row)?)
    }

    /// Moves audit records, store transitions and boundary rows into the trace.
    fn sync(&mut self, at: LogicalTime) -> Result<(), SimError> {
        let history: Vec<_> = self.store.history()[self.history_cursor..].to_vec();
        self.history_cursor += history.len();
        for h in history {
            if h.cause == TransitionCause::Cas {
                let row =
                    TraceRow::new(h.row_id.clone(), Module::Spine, RowKind::CasTransition, at)
                        .with("from", h.from.as_str())
                        .with("to", h.to.as_str())
                        .with("version", h.version)
                        .with("retries", 0i64);
                self.emit(row)?;
            }
        }
        let boundary: Vec<_> = self.boundary.trace()[self.boundary_cursor..].to_vec();
        self.boundary_cursor += boundary.len();
        for b in boundary {
            if b.verdict == TraceVerdict::Accept {
                self.emit(boundary_row(&b, Some(self.cfg.model_version)))?;
            }
        }
        let audit: Vec<TraceRow> = self.audit.records()[self.audit_cursor..]
            .iter()
            .map(audit_row)
            .collect();
        self.audit_cursor += audit.len();
        for r in audit {
            self.emit(r)?;
        }
        Ok(())
    }

    fn cas(
        &mut self,
        i: usize,
        to: WorkflowState,
        delta: Record,
        at: LogicalTime,
    ) -> Result<u64, SimError> {
        let rid = self.rid(i).to_owned();
        let v = self
            .store
            .get(&rid)
            .ok_or_else(|| CasError::UnknownRow(rid.clone()))?
            .version;
        let row = self.store.cas_transition(&rid, v, to, delta)?;
        self.sync(at)?;
        Ok(row.version)
    }

    fn state(&self, i: usize) -> (WorkflowState, u64) {
        let row = self
            .store
            .get(self.rid(i))
            .expect("rows are inserted at open");
        (row.state, row.version)
    }

    fn run(&mut self) -> Result<(), SimError> {
        for i in 0..self.scenarios.len() {
            self.schedule(at_day(0, 0, Self::off(i)), Task::Open(i));
        }
        self.schedule(self.cfg.eol_time(), Task::Eol);
        let horizon = u64::from(CONTRACT_END_DAY);
        self.schedule(LogicalTime::from_days(horizon), Task::Horizon);

        for day in 0..=horizon {
            let tick = LogicalTime::from_days(day);
            for c in self.console.drain_commands() {
                self.apply_command(c, tick)?;
            }
            if self.killed_at.is_none() {
                let end = LogicalTime::from_days(day + 1);
                while let Some(entry) = self.agenda.first_entry() {
                    if entry.key().0 >= end {
                        break;
                    }
                    let ((at, _), task) = entry.remove_entry();
                    self.step(at, task)?;
                }
            }
            self.publish(LogicalTime::from_days(day + 1).saturating_sub(1));
            if self.killed_at.is_some() {
                break;
            }
            if self.cfg.tick_delay_ms > 0 {
                std::thread::sleep(std::time::Duration::from_millis(self.cfg.tick_delay_ms));
            }
        }
        Ok(())
    }

    fn publish(&mut self, as_of: LogicalTime) {
        let new_rows = self.trace.rows()[self.published..].to_vec();
        self.published = self.trace.len();
        self.console.publish(Publish {
            as_of,
            new_rows,
            approvals: self.approvals.all().cloned().collect(),
            escalations: self.escalations.rows().to_vec(),
            kill_tokens: vec![KillTokenView {
                token_id: self.kill.id().to_owned(),
                revoked_at: self.kill.revoked_at(),
            }],
            throttle: Some(self.throttle.caps()),
        });
    }

    fn apply_command(&mut self, c: Command, at: LogicalTime) -> Result<(), SimError> {
        match c {
            Command::ResolveApproval {
                request_id,
                approve,
            } => {
                let Some(&i) = self.index.get(&request_id) else {
                    return Ok(());
                };
                match self
                    .approvals
                    .resolve(&request_id, approve, at, &mut self.audit)
                {
                    Ok(res) => {
                        if res != Resolution::Approved {
                            let deadline =
                                self.approvals.get(&request_id).map_or(at, |a| a.deadline());
                            let when = if res == Resolution::SlaExpiredDenied {
                                deadline
                            } else {
                                at
                            };
                            self.note(&request_id, Plane::Approval, res.as_str(), when);
                        }
                        self.sync(at)?;
                        self.after_approval(i, res, at)?;
                    }
                    Err(ApprovalError::AlreadyResolved(_)) | Err(ApprovalError::Unknown(_)) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            Command::ResolveEscalation {
                escalation_id,
                next_state,
                resolver,
            } => {
                let Some(row_id) = self
                    .escalations
                    .get(escalation_id)
                    .map(|e| e.row_id.clone())
                else {
                    return Ok(());
                };
                match self.escalations.resolve(
                    &mut self.store,
                    escalation_id,
                    next_state,
                    &resolver,
                    at,
                    &mut self.audit,
                ) {
                    Ok(_) => {
                        self.sync(at)?;
                        if let Some(&i) = self.index.get(&row_id) {
                            self.close(i, next_state, at)?;
                        }
                    }
                    Err(EscalationError::AlreadyResolved(_))
                    | Err(EscalationError::Cas(CasError::Stale { .. })) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            Command::Throttle {
                per_minute,
                per_day,
                scope,
            } => {
                let caps = ThrottleCaps::new(per_minute, per_day, scope)
                    .map_err(|e| SimError::Config(e.to_string()))?;
                self.throttle.set_caps(caps);
                let row =
                    TraceRow::new(CONSOLE_REQUEST, Module::Control, RowKind::PolicyChanged, at)
                        .with("decision", "throttle_caps")
                        .with("per_minute", per_minute)
                        .with("per_day", per_day)
                        .with(
                            "scope",
                            serde_json::to_value(scope)
                                .ok()
                                .and_then(|v| v.as_str().map(str::to_owned))
                                .unwrap_or_default(),
                        );
                self.emit(row)?;
            }
            Command::Kill { token_id } => {
                if token_id == self.kill.id() {
                    self.kill_switch(at)?;
                }
            }
        }
        Ok(())
    }

    /// Revokes the fleet token and halts every in-flight renewal at its next
    /// tool boundary.
    fn kill_switch(&mut self, at: LogicalTime) -> Result<(), SimError> {
        let first = !self.kill.is_revoked();
        revoke(&self.kill, at, KILL_TOKEN, &mut self.audit);
        if first {
            self.note(KILL_TOKEN, Plane::Kill, "revoke", at);
        }
        self.sync(at)?;
        let mut t = at;
        while check_cancel(&self.kill, t) == CancelCheck::Continue {
            t = t + 1;
        }
        for i in 0..self.scenarios.len() {
            if self.renewals[i].closed {
                continue;
            }
            let rid = self.rid(i).to_owned();
            self.audit
                .append(AuditEntry::new(rid.clone(), Plane::Kill, "halt", t).detail(KILL_TOKEN));
            self.sync(t)?;
            let row = TraceRow::new(rid, Module::Workflow, RowKind::RenewalFailed, t)
                .with("reason", "kill_switch")
                .with(
                    "state",
                    self.store
                        .get(self.rid(i))
                        .map_or("not_opened", |r| r.state.as_str()),
                );
            self.emit(row)?;
            self.renewals[i].closed = true;
        }
        self.killed_at = Some(at);
        Ok(())
    }

    fn step(&mut self, at: LogicalTime, task: Task) -> Result<(), SimError> {
        match task {
            Task::Open(i) => self.open(i, at),
            Task::Signal(i, kind) => self.signal(i, kind, at),
            Task::Score(i, v) => self.score(i, v, at),
            Task::Outreach(i, v) => self.outreach(i, v, at),
            Task::ApprovalReply(i) => self.approval_reply(i, at),
            Task::ApprovalExpire => self.approval_expire(at),
            Task::CustomerReply(i, v) => self.customer_reply(i, v, at),
            Task::Timer(h) => self.timer(h, at),
            Task::Eol => self.eol(at),
            Task::Horizon => self.horizon(at),
        }
    }

    fn open(&mut self, i: usize, at: LogicalTime) -> Result<(), SimError> {
        let s = &self.scenarios[i];
        let rid = s.renewal_id.clone();
        let class = risk_class(s);
        let data = record! { "class" => class, "contract_end_day" => s.contract_end };
        let signals = s.signal_schedule.clone();
        self.store
            .insert(rid.clone(), WorkflowState::Opened, data)?;
        let row = TraceRow::new(rid.clone(), Module::Workflow, RowKind::RenewalOpened, at)
            .with("pii_redacted", true)
            .with("class", class)
            .with("contract_end_day", s.contract_end)
            .with("signals", signals.len() as u64);
        self.emit(row)?;
        for sig in signals {
            let day = (i64::from(CONTRACT_END_DAY) + i64::from(sig.offset)).max(0) as u64;
            self.schedule(at_day(day, 8, Self::off(i)), Task::Signal(i, sig.kind));
        }
        let score_day = 1 + keyed(self.cfg.seed, "score_day", &rid, 0) % 40;
        let v = self.state(i).1;
        self.schedule(at_day(score_day, 9, Self::off(i)), Task::Score(i, v));
        Ok(())
    }

    fn signal(&mut self, i: usize, kind: SignalKind, at: LogicalTime) -> Result<(), SimError> {
        let rid = self.rid(i).to_owned();
        self.emit(
            TraceRow::new(rid.clone(), Module::Workflow, RowKind::Signal, at)
                .with("signal", kind.as_str()),
        )?;
        if kind != SignalKind::ContractMerger
            || self.renewals[i].closed
            || self.state(i).0.is_terminal()
        {
            return Ok(());
        }
        self.escalate(i, "contract_merger signal", at)
    }

    fn escalate(&mut self, i: usize, reason: &str, at: LogicalTime) -> Result<(), SimError> {
        let rid = self.rid(i).to_owned();
        let out = self
            .escalations
            .escalate(&mut self.store, &rid, reason, at, &mut self.audit)?;
        if let EscalateOutcome::Escalated(_) = out {
            self.note(&rid, Plane::Escalation, "escalate", at);
        }
        self.sync(at)
    }

    fn score(&mut self, i: usize, v: u64, at: LogicalTime) -> Result<(), SimError> {
        if self.state(i) != (WorkflowState::Opened, v) {
            return Ok(());
        }
        let rid = self.rid(i).to_owned();
        self.cas(i, WorkflowState::Scoring, Record::new(), at)?;
        let task = self.renewals[i].drafter_input.clone();
        let (seed, mv) = (self.cfg.seed, self.cfg.model_version);
        let lat = |name: &str| 200 + keyed(seed, "latency", &rid, keyed(0, name, "", 0)) % 1_800;
        let mut agents: Vec<Box<dyn SubAgent>> = vec![
            Box::new(ProposerAgent::new(
                SCORER,
                self.scorer.clone(),
                seed,
                mv,
                lat(SCORER),
            )),
            Box::new(ProposerAgent::new(
                DRAFTER,
                self.drafter.clone(),
                seed,
                mv,
                lat(DRAFTER),
            )),
            Box::new(ProposerAgent::new(
                BUILDER,
                self.builder.clone(),
                seed,
                mv,
                lat(BUILDER),
            )),
        ];
        let contract =
            SubTaskContract::new("renewal_features", "proposal_fragment", 30 * 60_000).retries(1);
        let outcome = delegate(
            &task,
            &mut agents,
            &vec![contract; 3],
            &sub_agent_weights(),
            &[ConflictRule::HighestWeight],
            at,
        );
        for e in &outcome.trace {
            let mut row = coordination_row(&rid, e);
            if e.kind == CoordinationKind::ProposerInvoked {
                row = row.model(mv);
            }
            self.emit(row)?;
            if matches!(
                e.kind,
                CoordinationKind::Returned | CoordinationKind::SubTaskFailed
            ) {
                let tool =
                    TraceRow::new(rid.clone(), Module::Coordination, RowKind::ToolCall, e.at)
                        .with("tool", e.agent.clone().unwrap_or_default())
                        .with("latency_ms", e.at - at)
                        .with("ok", e.kind == CoordinationKind::Returned);
                self.emit(tool)?;
            }
        }
        let t = outcome.finished_at + 1;
        let merged = match outcome.result {
            Ok(m) => m.merged,
            Err(e) => return self.escalate(i, &format!("delegation failed: {e}"), t),
        };
        let drafted = offer(
            &text_of(&merged, "offer"),
            int_of(&merged, "discount_pct"),
            int_of(&merged, "term_months"),
        );
        let row = TraceRow::new(rid.clone(), Module::Workflow, RowKind::StrategyGenerated, t)
            .payload(drafted.clone())
            .with("churn_score", int_of(&merged, "churn_score"))
            .with("plan", text_of(&merged, "plan"))
            .model(mv);
        self.emit(row)?;
        self.renewals[i].offer = drafted.clone();
        self.cas(i, WorkflowState::Drafting, drafted, t)?;
        let t = t + 1;
        self.gate_offer(i, t, true)?;
        let t = t + 10;
        let current = self.renewals[i].offer.clone();
        if int_of(&current, "discount_pct") > self.cfg.approval_threshold_pct {
            self.request_approval(i, current, t)
        } else {
            let v = self.state(i).1;
            self.schedule(t + HOUR, Task::Outreach(i, v));
            Ok(())
        }
    }

    fn fallback_offer(&self, i: usize, at: LogicalTime) -> Record {
        let cur = &self.renewals[i].offer;
        let term = int_of(cur, "term_months").max(12);
        if self.product_eol(i, at) {
            offer("restructure", 5, 24)
        } else if int_of(cur, "discount_pct") > 0 && text_of(cur, "offer") == "discount" {
            offer("discount", int_of(cur, "discount_pct").min(10), term)
        } else {
            offer("standard", 0, term)
        }
    }

    /// Gates the current offer under the policy in force at `at`. A deny
    /// asks the drafter again (when allowed), then falls back to a
    /// conservative offer. Returns whether the offer changed.
    fn gate_offer(
        &mut self,
        i: usize,
        at: LogicalTime,
        repropose_on_deny: bool,
    ) -> Result<bool, SimError> {
        let rid = self.rid(i).to_owned();
        let policy = self.policy_at(at);
        let ctx = record! { "product_eol" => self.product_eol(i, at) };
        let original = self.renewals[i].offer.clone();
        let mut candidate = original.clone();
        let mut t = at;
        let attempts = if repropose_on_deny { 3 } else { 1 };
        let mut fallback = false;
        for attempt in 0..=attempts {
            if attempt == attempts {
                candidate = self.fallback_offer(i, t);
                fallback = true;
            }
            let mut action = candidate.clone();
            action.insert("action".into(), "offer".into());
            match gate_check(&action, &ctx, policy, &rid, t, &mut self.audit) {
                GateDecision::Allow => {
                    let row = TraceRow::new(rid.clone(), Module::Control, RowKind::GateAllow, t)
                        .payload(candidate.clone())
                        .with("decision", "allow")
                        .with("gate_latency_ms", 0i64)
                        .with("action_latency_ms", 1_000i64)
                        .with("fallback", fallback)
                        .policy(&policy.policy_version);
                    self.emit(row)?;
                    let r = &mut self.renewals[i];
                    r.offer = candidate.clone();
                    r.gated_under = Some(policy.policy_version.clone());
                    self.sync(t)?;
                    return Ok(candidate != original);
                }
                GateDecision::Deny { .. } => {
                    self.note(&rid, Plane::Gate, "deny", t);
                    self.sync(t)?;
                    if fallback {
                        return Err(SimError::Invariant(format!(
                            "fallback offer for {rid} denied under {}",
                            policy.policy_version
                        )));
                    }
                    if attempt + 1 < attempts {
                        let input = self.renewals[i].drafter_input.clone();
                        candidate = repropose(
                            &input,
                            &self.drafter,
                            self.cfg.seed,
                            self.cfg.model_version,
                            attempt + 1,
                        )
                        .content;
                    }
                }
            }
            t = t + 1;
        }
        unreachable!("the fallback attempt always returns")
    }

    fn request_approval(
        &mut self,
        i: usize,
        payload: Record,
        at: LogicalTime,
    ) -> Result<(), SimError> {
        let rid = self.rid(i).to_owned();
        let policy = self.policy_at(at).policy_version.clone();
        let req =
            ApprovalRequest::new(&rid, payload.clone(), at, self.cfg.approval_sla)?.under(&policy);
        let deadline = req.deadline();
        self.approvals.submit(req)?;
        self.audit.append(
            AuditEntry::new(rid.clone(), Plane::Approval, "requested", at)
                .policy(&policy)
                .detail(format!("discount_pct {}", int_of(&payload, "discount_pct"))),
        );
        self.cas(i, WorkflowState::AwaitingApproval, Record::new(), at)?;
        let overloaded = keyed_unit(self.cfg.seed, "approver_overload", &rid, 0)
            < self.cfg.approver_overload_rate;
        let reply_at = at + if overloaded { 3 * DAY } else { DAY };
        self.schedule(reply_at, Task::ApprovalReply(i));
        self.schedule(deadline, Task::ApprovalExpire);
        Ok(())
    }

    fn approval_reply(&mut self, i: usize, at: LogicalTime) -> Result<(), SimError> {
        let rid = self.rid(i).to_owned();
        let Some(req) = self.approvals.get(&rid) else {
            return Ok(());
        };
        if req.is_resolved() {
            return Ok(());
        }
        let deadline = req.deadline();
        let approve = int_of(&req.payload, "discount_pct") <= self.cfg.discount_cap_pct / 2;
        let res = self.approvals.resolve(&rid, approve, at, &mut self.audit)?;
        if res != Resolution::Approved {
            let when = if res == Resolution::SlaExpiredDenied {
                deadline
            } else {
                at
            };
            self.note(&rid, Plane::Approval, res.as_str(), when);
        }
        self.sync(at)?;
        self.after_approval(i, res, at.min(deadline))
    }

    fn approval_expire(&mut self, at: LogicalTime) -> Result<(), SimError> {
        let expired = self.approvals.expire_due(at, &mut self.audit);
        self.sync(at)?;
        for rid in expired {
            let deadline = self.approvals.get(&rid).map_or(at, |a| a.deadline());
            self.note(
                &rid,
                Plane::Approval,
                Resolution::SlaExpiredDenied.as_str(),
                deadline,
            );
            if let Some(&i) = self.index.get(&rid) {
                self.after_approval(i, Resolution::SlaExpiredDenied, at)?;
            }
        }
        Ok(())
    }

    fn after_approval(
        &mut self,
        i: usize,
        res: Resolution,
        at: LogicalTime,
    ) -> Result<(), SimError> {
        let (state, v) = self.state(i);
        if state != WorkflowState::AwaitingApproval || self.renewals[i].closed {
            return Ok(());
        }
        if res != Resolution::Approved {
            self.renewals[i].offer = self.fallback_offer(i, at);
            self.renewals[i].gated_under = None;
        }
        self.schedule(at + HOUR, Task::Outreach(i, v));
        Ok(())
    }

    fn outreach(&mut self, i: usize, v: u64, at: LogicalTime) -> Result<(), SimError> {
        let (state, version) = self.state(i);
        let ready = matches!(
            state,
            WorkflowState::Drafting | WorkflowState::AwaitingApproval
        );
        if version != v || !ready || self.renewals[i].closed {
            return Ok(());
        }
        let rid = self.rid(i).to_owned();
        let mut t = at;
        if self.renewals[i].gated_under.as_ref() != Some(&self.policy_at(t).policy_version) {
            self.gate_offer(i, t, false)?;
            t = t + 10;
        }
        if let ThrottleDecision::Refused(_) =
            self.throttle.admit("renewals", &rid, t, &mut self.audit)
        {
            self.note(&rid, Plane::Throttle, "refuse", t);
            self.sync(t)?;
            self.schedule(t + DAY, Task::Outreach(i, v));
            return Ok(());
        }
        if check_cancel(&self.kill, t) == CancelCheck::Halt {
            return Ok(());
        }
        let (seed, mv) = (self.cfg.seed, self.cfg.model_version);
        let input = record! { "request_id" => rid.as_str(), "purpose" => "outreach" };
        let channel_cfg = self.channel.clone();
        let verifier = FnVerifier::new("channel_consent", |p: &sdb_core::sdb::Proposal| {
            match p.content.get("channel").and_then(Scalar::as_text) {
                Some("sms") => Err(RejectSignal::new(
                    RejectReason::PolicyViolation,
                    "sms outreach needs recorded consent",
                )),
                Some(_) => Ok(()),
                None => Err(RejectSignal::new(
                    RejectReason::SchemaViolation,
                    "channel missing",
                )),
            }
        });
        let committed = self.boundary.verify_and_commit(
            &rid,
            t,
            |ctx| repropose(&input, &channel_cfg, seed, mv, ctx.attempt),
            &verifier,
            2,
            &mut self.audit,
        );
        let (channel, commit_seq) = match committed {
            Ok(c) => (text_of(&c.committed_value, "channel"), Some(c.commit_seq)),
            Err(_) => ("email".to_owned(), None),
        };
        self.sync(t + 3)?;
        if let Some(seq) = commit_seq {
            self.emit(
                TraceRow::new(rid.clone(), Module::Sdb, RowKind::Commit, t + 3)
                    .with("commit_seq", seq)
                    .with("status", "completed"),
            )?;
        }
        let t = t + 5;
        let latency = 400 + keyed(seed, "outreach_latency", &rid, v) % 2_000;
        let offer = self.renewals[i].offer.clone();
        let policy = self.policy_at(t).policy_version.clone();
        self.emit(
            TraceRow::new(rid.clone(), Module::Workflow, RowKind::OutreachSent, t)
                .payload(offer.clone())
                .with("channel", channel.as_str())
                .policy(&policy)
                .model(mv),
        )?;
        self.emit(
            TraceRow::new(rid.clone(), Module::Workflow, RowKind::ToolCall, t)
                .with("tool", "outreach")
                .with("latency_ms", latency)
                .with("ok", true),
        )?;
        let mut delta = offer;
        delta.insert("channel".into(), channel.into());
        let t = t + latency;
        let new_v = self.cas(i, WorkflowState::AwaitingCustomer, delta, t)?;

        let deadline = at_day(u64::from(CONTRACT_END_DAY) - 5, 12, Self::off(i)).max(t + HOUR);
        let handle = self.store.schedule_timer(
            &rid,
            deadline,
            (WorkflowState::AwaitingCustomer, WorkflowState::Churned),
        )?;
        self.schedule(deadline, Task::Timer(handle));
        if !self.scenarios[i].churn_label {
            let wait = (3 + keyed(seed, "reply", &rid, new_v) % 10) * DAY;
            let cap = at_day(u64::from(CONTRACT_END_DAY) - 6, 11, Self::off(i)).max(t + HOUR);
            self.schedule((t + wait).min(cap), Task::CustomerReply(i, new_v));
        }
        Ok(())
    }

    fn customer_reply(&mut self, i: usize, v: u64, at: LogicalTime) -> Result<(), SimError> {
        if self.state(i) != (WorkflowState::AwaitingCustomer, v) || self.renewals[i].closed {
            return Ok(());
        }
        self.cas(
            i,
            WorkflowState::Contracting,
            record! { "customer_reply" => "accepted" },
            at,
        )?;
        self.contract(i, at + 1)
    }

    /// Writes the renewal into billing and CRM as a saga, under a supervisor.
    fn contract(&mut self, i: usize, at: LogicalTime) -> Result<(), SimError> {
        let rid = self.rid(i).to_owned();
        let offer = self.renewals[i].offer.clone();
        let terminal = terminal_for(&offer);
        let seed = self.cfg.seed;
        let fragile = keyed_unit(seed, "fragile_billing", &rid, 0) < self.cfg.fragile_billing_rate;
        let failure_rate = self.cfg.billing_failure_rate;
        let plan = if text_of(&offer, "offer") == "restructure" {
            "restructured"
        } else {
            "renewal"
        };
        let stores = &mut self.stores;
        let mut rows: Vec<TraceRow> = Vec::new();
        let mut saga_error: Option<SagaError> = None;
        let child = |run: ChildRun| -> Result<(), Crash> {
            let fail = if fragile {
                Some("billing ledger rejected plan code".to_owned())
            } else if keyed_unit(seed, "billing_failure", &rid, u64::from(run.attempt))
                < failure_rate
            {
                Some(format!("billing timeout on attempt {}", run.attempt))
            } else {
                None
            };
            let mut peers: Vec<Box<dyn Peer>> = vec![
                Box::new(BillingPeer {
                    renewal_id: rid.clone(),
                    plan: plan.to_owned(),
                    discount_pct: int_of(&offer, "discount_pct"),
                    fail,
                }),
                Box::new(CrmPeer {
                    renewal_id: rid.clone(),
                    status: terminal.as_str().to_owned(),
                }),
            ];
            let contracts = vec![SubTaskContract::new("contract_terms", "ack", 60_000); 2];
            let mut saga = SagaLog::new(format!("{rid}-contract-{}", run.attempt));
            let before = stores["billing"].data().clone();
            let sched =
                SeededScheduler::new(keyed(seed, "scheduler", &rid, u64::from(run.attempt)));
            let result = scatter_gather(
                &offer,
                &mut peers,
                &contracts,
                &mut saga,
                stores,
                sched,
                &FaultPlan::default(),
                run.at,
            );
            let order: Vec<u32> = result
                .as_ref()
                .map(|g| g.completion_order.clone())
                .unwrap_or_default();
            for e in &saga.events {
                let mut row = saga_row(&rid, &saga.saga_id, e);
                match e.kind {
                    SagaEventKind::Compensated => {
                        if let Some(rank) = e
                            .step_index
                            .and_then(|s| order.iter().position(|x| *x == s))
                        {
                            row = row.with("completion_rank", rank as u64);
                        }
                    }
                    SagaEventKind::Aborted => {
                        row = row.with("clean", stores["billing"].data() == &before);
                    }
                    _ => {}
                }
                rows.push(row);
            }
            match result {
                Ok(g) if g.committed => Ok(()),
                Ok(g) => {
                    let why = g
                        .failures
                        .values()
                        .next()
                        .cloned()
                        .unwrap_or_else(|| "peer failed".into());
                    Err(Crash::Transient(why))
                }
                Err(e) => {
                    let msg = e.to_string();
                    saga_error = Some(e);
                    Err(Crash::Permanent(msg))
                }
            }
        };
        let report = supervise(&rid, child, &self.cfg.supervisor, at, &mut self.audit);
        for r in rows {
            self.emit(r)?;
        }
        for t in &report.restarts {
            self.note(&rid, Plane::Supervisor, "restart", *t);
        }
        let done = report.finished_at + 100;
        match report.outcome {
            SupervisionOutcome::Completed(()) => {
                self.sync(done)?;
                self.cas(
                    i,
                    terminal,
                    record! { "terminal" => terminal.as_str() },
                    done,
                )?;
                self.close(i, terminal, done)
            }
            SupervisionOutcome::Escalated { reason } => {
                self.note(&rid, Plane::Supervisor, "escalate", report.finished_at);
                self.sync(done)?;
                if let Some(e) = saga_error {
                    return Err(e.into());
                }
                self.escalate(i, &format!("contract saga failed: {reason}"), done)
            }
        }
    }

    fn timer(&mut self, h: TimerHandle, at: LogicalTime) -> Result<(), SimError> {
        let Some(&i) = self.index.get(&h.row_id) else {
            return Ok(());
        };
        match self.store.fire_timer(&h, &mut self.audit)? {
            TimerFire::Applied(row) => {
                self.emit(
                    TraceRow::new(h.row_id.clone(), Module::Spine, RowKind::TimerFired, at)
                        .with("timer_id", h.timer_id)
                        .with("scheduled_version", h.scheduled_version)
                        .with("applied_over_version", row.version - 1)
                        .with("to", row.state.as_str()),
                )?;
                self.sync(at)?;
                self.close(i, row.state, at)
            }
            TimerFire::SkippedStale { .. } => self.sync(at),
        }
    }

    fn eol(&mut self, at: LogicalTime) -> Result<(), SimError> {
        let (from, to) = (
            &self.cfg.policy_before_eol.policy_version,
            &self.cfg.policy_after_eol.policy_version,
        );
        let row = TraceRow::new(EOL_REQUEST, Module::Control, RowKind::PolicyChanged, at)
            .with("decision", "product_end_of_life")
            .with("from", from.as_str())
            .with("to", to.as_str())
            .policy(to);
        self.emit(row)?;
        for i in 0..self.scenarios.len() {
            let (state, _) = self.state(i);
            if state != WorkflowState::AwaitingCustomer || self.renewals[i].closed {
                continue;
            }
            let t = at + Self::off(i);
            if !self.gate_offer(i, t, false)? {
                continue;
            }
            let offer = self.renewals[i].offer.clone();
            let v = self.cas(i, WorkflowState::Drafting, offer, t + 1)?;
            self.schedule(t + HOUR, Task::Outreach(i, v));
        }
        Ok(())
    }

    fn horizon(&mut self, at: LogicalTime) -> Result<(), SimError> {
        self.approval_expire(at)?;
        for i in 0..self.scenarios.len() {
            if self.renewals[i].closed {
                continue;
            }
            let (state, _) = self.state(i);
            if state.is_terminal() {
                continue;
            }
            let t = at + Self::off(i);
            let rid = self.rid(i).to_owned();
            if state != WorkflowState::HumanRequired {
                self.escalate(i, &format!("contract end reached in {state}"), t)?;
            }
            let pending = self
                .escalations
                .pending()
                .find(|e| e.row_id == rid)
                .map(|e| e.escalation_id);
            let Some(id) = pending else {
                return Err(SimError::Invariant(format!(
                    "{rid} is human_required without a pending escalation"
                )));
            };
            self.escalations.resolve(
                &mut self.store,
                id,
                WorkflowState::Escalated,
                "fallback",
                t,
                &mut self.audit,
            )?;
            self.sync(t)?;
            self.close(i, WorkflowState::Escalated, t)?;
        }
        Ok(())
    }

    fn close(
        &mut self,
        i: usize,
        terminal: WorkflowState,
        at: LogicalTime,
    ) -> Result<(), SimError> {
        if self.renewals[i].closed {
            return Ok(());
        }
        self.renewals[i].closed = true;
        let rid = self.rid(i).to_owned();
        let mut row = TraceRow::new(rid, Module::Workflow, RowKind::RenewalClosed, at)
            .with("terminal", terminal.as_str())
            .with("decision", terminal.as_str());
        if let Some(p) = &self.renewals[i].gated_under {
            row = row.policy(p);
        }
        self.emit(row)
    }
}
