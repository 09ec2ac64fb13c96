use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AuditEntry, AuditTrail, Plane};
use crate::clock::LogicalTime;
use crate::sdb::{propose, ModelVersion, Proposal, ProposerConfig};
use crate::value::{Record, Scalar};

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("malformed log line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("offsets are not dense: expected {expected}, found {found}")]
    Gap { expected: u64, found: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub offset: u64,
    pub event_time: LogicalTime,
    pub ingest_time: LogicalTime,
    pub payload: Record,
    pub producer: String,
}

/// Append-only log. Records are never mutated once appended.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    records: Vec<EventRecord>,
    ingest_clock: LogicalTime,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ingest time stamped on subsequent appends. Never moves backwards.
    pub fn set_ingest_time(&mut self, t: LogicalTime) {
        self.ingest_clock = self.ingest_clock.max(t);
    }

    pub fn append(
        &mut self,
        producer: impl Into<String>,
        payload: Record,
        event_time: LogicalTime,
    ) -> &EventRecord {
        let offset = self.records.len() as u64;
        self.records.push(EventRecord {
            offset,
            event_time,
            ingest_time: self.ingest_clock,
            payload,
            producer: producer.into(),
        });
        &self.records[offset as usize]
    }

    pub fn records(&self) -> &[EventRecord] {
        &self.records
    }

    pub fn get(&self, offset: u64) -> Option<&EventRecord> {
        self.records.get(offset as usize)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(input: &str) -> Result<Self, LogError> {
        let mut log = EventLog::new();
        for (i, line) in input
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let rec: EventRecord =
                serde_json::from_str(line).map_err(|source| LogError::Parse {
                    line: i + 1,
                    source,
                })?;
            let expected = log.records.len() as u64;
            if rec.offset != expected {
                return Err(LogError::Gap {
                    expected,
                    found: rec.offset,
                });
            }
            log.ingest_clock = log.ingest_clock.max(rec.ingest_time);
            log.records.push(rec);
        }
        Ok(log)
    }

    /// Writes the log to `path` and its seed schedule to `path.seeds.json`.
    pub fn save(&self, path: &Path, seeds: &SeedSchedule) -> Result<(), LogError> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        fs::write(path, buf)?;
        fs::write(
            SeedSchedule::sidecar(path),
            serde_json::to_vec_pretty(seeds).expect("serializable"),
        )?;
        Ok(())
    }

    /// Loads a log and, when present, its seed schedule sidecar.
    pub fn load(path: &Path) -> Result<(Self, SeedSchedule), LogError> {
        let log = Self::read_jsonl(&fs::read_to_string(path)?)?;
        let sidecar = SeedSchedule::sidecar(path);
        let seeds = if sidecar.exists() {
            serde_json::from_slice(&fs::read(&sidecar)?)
                .map_err(|source| LogError::Parse { line: 0, source })?
        } else {
            SeedSchedule::default()
        };
        Ok((log, seeds))
    }
}

/// Per-offset proposer seeds, persisted next to the log so replays pin the
/// same stochastic draws.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSchedule {
    pub seeds: BTreeMap<u64, u64>,
}

impl SeedSchedule {
    /// Schedule assigning `base + offset` to each of the first `n` offsets.
    pub fn sequential(base: u64, n: usize) -> Self {
        Self {
            seeds: (0..n as u64).map(|o| (o, base.wrapping_add(o))).collect(),
        }
    }

    /// Seed for `offset`; unpinned offsets fall back to the offset itself.
    pub fn seed_for(&self, offset: u64) -> u64 {
        self.seeds.get(&offset).copied().unwrap_or(offset)
    }

    pub fn pin(&mut self, offset: u64, seed: u64) {
        self.seeds.insert(offset, seed);
    }

    fn sidecar(path: &Path) -> PathBuf {
        let mut p = path.as_os_str().to_owned();
        p.push(".seeds.json");
        PathBuf::from(p)
    }
}

/// Lower bound on event time; anything older is late.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Watermark {
    pub low_water: LogicalTime,
}

impl Watermark {
    pub fn new(low_water: LogicalTime) -> Self {
        Self { low_water }
    }

    pub fn advance_to(&mut self, t: LogicalTime) {
        self.low_water = self.low_water.max(t);
    }

    /// Equality is on time.
    pub fn admits(&self, event_time: LogicalTime) -> bool {
        event_time >= self.low_water
    }
}

/// Handed to a consumer while it folds one event.
pub struct FoldContext {
    model_version: ModelVersion,
    seed: u64,
    proposer_calls: u32,
}

impl FoldContext {
    pub fn model_version(&self) -> ModelVersion {
        self.model_version
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Calls the simulated proposer with this event's pinned seed.
    pub fn propose(&mut self, input: &Record, cfg: &ProposerConfig) -> Proposal {
        self.proposer_calls += 1;
        propose(input, cfg, self.seed, self.model_version)
    }

    pub fn proposer_calls(&self) -> u32 {
        self.proposer_calls
    }
}

/// A subscriber folding the log into a projection.
pub trait Consumer {
    fn id(&self) -> &str;

    /// How far the watermark trails the newest applied event time, if the
    /// consumer advances it automatically.
    fn watermark_lag(&self) -> Option<u64> {
        None
    }

    fn initial_state(&self) -> Record {
        Record::new()
    }

    fn apply(&self, state: &mut Record, event: &EventRecord, ctx: &mut FoldContext);
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Projection {
    pub consumer_id: String,
    pub model_version: ModelVersion,
    pub state: Record,
    pub last_offset: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConsumeReport {
    pub applied: Vec<u64>,
    pub late: Vec<u64>,
    /// Offsets whose fold called the proposer.
    pub proposer_touched: Vec<u64>,
}

/// A consumer's live position in a log.
pub struct Subscription<'c, C: Consumer + ?Sized> {
    consumer: &'c C,
    watermark: Watermark,
    projection: Projection,
    next_offset: u64,
}

impl<'c, C: Consumer + ?Sized> Subscription<'c, C> {
    pub fn new(consumer: &'c C, model_version: ModelVersion, watermark: Watermark) -> Self {
        Self {
            consumer,
            watermark,
            projection: Projection {
                consumer_id: consumer.id().to_owned(),
                model_version,
                state: consumer.initial_state(),
                last_offset: None,
            },
            next_offset: 0,
        }
    }

    pub fn watermark(&self) -> Watermark {
        self.watermark
    }

    pub fn advance_watermark(&mut self, t: LogicalTime) {
        self.watermark.advance_to(t);
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn into_projection(self) -> Projection {
        self.projection
    }

    /// Folds the next unread event, if any.
    fn step(
        &mut self,
        log: &EventLog,
        seeds: &SeedSchedule,
        audit: &mut AuditTrail,
        report: &mut ConsumeReport,
    ) -> bool {
        let Some(event) = log.get(self.next_offset) else {
            return false;
        };
        self.next_offset += 1;
        self.projection.last_offset = Some(event.offset);
        if !self.watermark.admits(event.event_time) {
            let request_id = match event.payload.get("request_id") {
                Some(Scalar::Text(id)) => id.clone(),
                _ => format!("offset-{}", event.offset),
            };
            audit.append(
                AuditEntry::new(
                    request_id,
                    Plane::LateEvent,
                    "late_event",
                    event.ingest_time,
                )
                .model(self.projection.model_version)
                .detail(format!(
                    "consumer {} offset {} event_time {} < low_water {}",
                    self.consumer.id(),
                    event.offset,
                    event.event_time.millis(),
                    self.watermark.low_water.millis()
                )),
            );
            report.late.push(event.offset);
            return true;
        }
        let mut ctx = FoldContext {
            model_version: self.projection.model_version,
            seed: seeds.seed_for(event.offset),
            proposer_calls: 0,
        };
        self.consumer
            .apply(&mut self.projection.state, event, &mut ctx);
        report.applied.push(event.offset);
        if ctx.proposer_calls > 0 {
            report.proposer_touched.push(event.offset);
        }
        if let Some(lag) = self.consumer.watermark_lag() {
            self.watermark
                .advance_to(event.event_time.saturating_sub(lag));
        }
        true
    }

    /// Folds every unread event. Late events go to the audit trail.
    pub fn consume(
        &mut self,
        log: &EventLog,
        seeds: &SeedSchedule,
        audit: &mut AuditTrail,
    ) -> ConsumeReport {
        let mut report = ConsumeReport::default();
        while self.step(log, seeds, audit, &mut report) {}
        report
    }
}

/// One-shot consume with an explicit starting watermark.
pub fn consume<C: Consumer + ?Sized>(
    log: &EventLog,
    consumer: &C,
    watermark: Watermark,
    model_version: ModelVersion,
    seeds: &SeedSchedule,
    audit: &mut AuditTrail,
) -> (Projection, ConsumeReport) {
    let mut sub = Subscription::new(consumer, model_version, watermark);
    let report = sub.consume(log, seeds, audit);
    (sub.into_projection(), report)
}

/// Rebuilds the projection from offset 0.
pub fn replay<C: Consumer + ?Sized>(
    log: &EventLog,
    consumer: &C,
    model_version: ModelVersion,
    seeds: &SeedSchedule,
) -> Projection {
    consume(
        log,
        consumer,
        Watermark::default(),
        model_version,
        seeds,
        &mut AuditTrail::new(),
    )
    .0
}

/// Projection state after each offset, in order.
pub fn replay_states<C: Consumer + ?Sized>(
    log: &EventLog,
    consumer: &C,
    model_version: ModelVersion,
    seeds: &SeedSchedule,
) -> Vec<Record> {
    let mut sub = Subscription::new(consumer, model_version, Watermark::default());
    let mut audit = AuditTrail::new();
    let mut report = ConsumeReport::default();
    let mut states = Vec::with_capacity(log.len());
    while sub.step(log, seeds, &mut audit, &mut report) {
        states.push(sub.projection.state.clone());
    }
    states
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldDiff {
    pub field: String,
    pub a: Option<Scalar>,
    pub b: Option<Scalar>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub diverged: bool,
    pub first_divergent_offset: Option<u64>,
    /// Fields that differ at the first divergent offset.
    pub field_diff: Vec<FieldDiff>,
    pub version_a: ModelVersion,
    pub version_b: ModelVersion,
    pub projection_a: Projection,
    pub projection_b: Projection,
}

fn diff_fields(a: &Record, b: &Record) -> Vec<FieldDiff> {
    let keys: std::collections::BTreeSet<&String> = a.keys().chain(b.keys()).collect();
    keys.into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| FieldDiff {
            field: k.clone(),
            a: a.get(k).cloned(),
            b: b.get(k).cloned(),
        })
        .collect()
}

/// Replays under two model versions and compares the folded state offset by
/// offset.
pub fn detect_divergence<C: Consumer + ?Sized>(
    log: &EventLog,
    consumer: &C,
    version_a: ModelVersion,
    version_b: ModelVersion,
    seeds: &SeedSchedule,
) -> DivergenceReport {
    let states_a = replay_states(log, consumer, version_a, seeds);
    let states_b = replay_states(log, consumer, version_b, seeds);
    let first = states_a.iter().zip(&states_b).position(|(a, b)| a != b);
    let field_diff = first
        .map(|i| diff_fields(&states_a[i], &states_b[i]))
        .unwrap_or_default();
    DivergenceReport {
        diverged: first.is_some(),
        first_divergent_offset: first.map(|i| log.records()[i].offset),
        field_diff,
        version_a,
        version_b,
        projection_a: replay(log, consumer, version_a, seeds),
        projection_b: replay(log, consumer, version_b, seeds),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplayClass {
    /// Both versions agree and each re-replays identically.
    Consistent,
    /// Each version is self-consistent but the two disagree.
    ReplayDivergence,
    /// A single version does not reproduce itself.
    Variance,
}

/// Separates cross-version divergence from run-to-run variance by replaying
/// each version twice.
pub fn classify_replay<C: Consumer + ?Sized>(
    log: &EventLog,
    consumer: &C,
    version_a: ModelVersion,
    version_b: ModelVersion,
    seeds: &SeedSchedule,
) -> ReplayClass {
    let bytes = |v| serde_json::to_vec(&replay(log, consumer, v, seeds)).expect("serializable");
    let (a1, a2) = (bytes(version_a), bytes(version_a));
    let (b1, b2) = (bytes(version_b), bytes(version_b));
    if a1 != a2 || b1 != b2 {
        ReplayClass::Variance
    } else if a1 != b1 {
        ReplayClass::ReplayDivergence
    } else {
        ReplayClass::Consistent
    }
}
