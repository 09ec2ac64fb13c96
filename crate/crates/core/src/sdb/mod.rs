//! The proposer → verifier → commit / reject boundary.
//!
//! A [`Proposal`] is a sample, never a decision. It only becomes a
//! [`CommitRecord`] after a deterministic [`Verifier`] accepts it; otherwise
//! the proposer gets a typed [`RejectSignal`] back and may try again while the
//! caller-owned retry budget lasts.

mod proposer;

use std::fmt;
use std::io::{self, Write};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::audit::{AuditEntry, AuditTrail, Plane};
use crate::clock::LogicalTime;
use crate::value::Record;

pub(crate) use proposer::{keyed_rng, unit};
pub use proposer::{propose, repropose, OutputDistribution, ProposerConfig, WeightedOption};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdbError {
    #[error("invalid proposer config: {0}")]
    InvalidConfig(String),
    #[error("proposal content is empty")]
    EmptyProposal,
    #[error("invalid model version tag `{0}`")]
    BadVersion(String),
}

/// Totally ordered model version, written `v1`, `v2`, ...
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct ModelVersion(pub u32);

impl fmt::Display for ModelVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl FromStr for ModelVersion {
    type Err = SdbError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.trim().strip_prefix('v').unwrap_or(s.trim());
        digits
            .parse()
            .map(ModelVersion)
            .map_err(|_| SdbError::BadVersion(s.to_owned()))
    }
}

impl Serialize for ModelVersion {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ModelVersion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerMeta {
    pub model_version: ModelVersion,
    pub seed: u64,
    pub temperature_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub request_id: String,
    pub content: Record,
    pub proposer_meta: ProposerMeta,
}

impl Proposal {
    pub fn new(
        request_id: impl Into<String>,
        content: Record,
        proposer_meta: ProposerMeta,
    ) -> Result<Self, SdbError> {
        if content.is_empty() {
            return Err(SdbError::EmptyProposal);
        }
        Ok(Self {
            request_id: request_id.into(),
            content,
            proposer_meta,
        })
    }
}

/// Status tag of a reject. Only one value exists, and it is never the commit
/// tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectStatus {
    #[default]
    Incomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitStatus {
    #[default]
    Completed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    SchemaViolation,
    PolicyViolation,
    IllegalTransition,
    BudgetExhausted,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::SchemaViolation => "schema_violation",
            RejectReason::PolicyViolation => "policy_violation",
            RejectReason::IllegalTransition => "illegal_transition",
            RejectReason::BudgetExhausted => "budget_exhausted",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectSignal {
    pub status: RejectStatus,
    pub reason_code: RejectReason,
    pub detail: String,
}

impl RejectSignal {
    pub fn new(reason_code: RejectReason, detail: impl Into<String>) -> Self {
        Self {
            status: RejectStatus::Incomplete,
            reason_code,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for RejectSignal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.reason_code, self.detail)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum Outcome {
    Accept,
    Reject { signal: RejectSignal },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    #[serde(flatten)]
    pub outcome: Outcome,
    pub verifier_id: String,
    pub checked_at: LogicalTime,
}

impl Verdict {
    pub fn is_accept(&self) -> bool {
        matches!(self.outcome, Outcome::Accept)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitRecord {
    pub request_id: String,
    pub committed_value: Record,
    pub status: CommitStatus,
    pub commit_seq: u64,
    /// Sequence number of the accepting row in the boundary trace.
    pub audit_ref: u64,
}

/// A deterministic check on a proposal. Implementations must be pure.
pub trait Verifier {
    fn id(&self) -> &str;

    fn check(&self, proposal: &Proposal) -> Result<(), RejectSignal>;

    fn verify(&self, proposal: &Proposal, at: LogicalTime) -> Verdict {
        let outcome = match self.check(proposal) {
            Ok(()) => Outcome::Accept,
            Err(signal) => Outcome::Reject { signal },
        };
        Verdict {
            outcome,
            verifier_id: self.id().to_owned(),
            checked_at: at,
        }
    }
}

/// Verifier backed by a plain function.
pub struct FnVerifier<F> {
    id: String,
    f: F,
}

impl<F> FnVerifier<F>
where
    F: Fn(&Proposal) -> Result<(), RejectSignal>,
{
    pub fn new(id: impl Into<String>, f: F) -> Self {
        Self { id: id.into(), f }
    }
}

impl<F> Verifier for FnVerifier<F>
where
    F: Fn(&Proposal) -> Result<(), RejectSignal>,
{
    fn id(&self) -> &str {
        &self.id
    }

    fn check(&self, proposal: &Proposal) -> Result<(), RejectSignal> {
        (self.f)(proposal)
    }
}

/// What the proposer sees on each attempt.
#[derive(Debug, Clone, Default)]
pub struct ProposerContext {
    pub attempt: u32,
    pub rejects: Vec<RejectSignal>,
}

impl ProposerContext {
    pub fn last_reject(&self) -> Option<&RejectSignal> {
        self.rejects.last()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceVerdict {
    Accept,
    Reject,
    BudgetExhausted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TraceStatus {
    Completed(CommitStatus),
    Incomplete(RejectStatus),
}

/// One line of the boundary trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundaryTraceRow {
    pub request_id: String,
    pub attempt: u32,
    pub verdict: TraceVerdict,
    pub status: TraceStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    pub logical_time: LogicalTime,
}

/// Runs the boundary for a stream of requests and keeps its trace.
#[derive(Debug, Default)]
pub struct Boundary {
    next_commit_seq: u64,
    trace: Vec<BoundaryTraceRow>,
    commits: Vec<CommitRecord>,
}

impl Boundary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Proposes, verifies, and commits or feeds the reject back, at most
    /// `retry_budget + 1` times. Attempt `k` is stamped at `at + k` ms.
    pub fn verify_and_commit<P, V>(
        &mut self,
        request_id: &str,
        at: LogicalTime,
        mut proposer: P,
        verifier: &V,
        retry_budget: u32,
        audit: &mut AuditTrail,
    ) -> Result<CommitRecord, RejectSignal>
    where
        P: FnMut(&ProposerContext) -> Proposal,
        V: Verifier + ?Sized,
    {
        let mut ctx = ProposerContext::default();
        for attempt in 0..=retry_budget {
            ctx.attempt = attempt;
            let t = at + u64::from(attempt);
            let proposal = proposer(&ctx);
            let verdict = verifier.verify(&proposal, t);
            match verdict.outcome {
                Outcome::Accept => {
                    let audit_ref = self.trace.len() as u64;
                    self.trace.push(BoundaryTraceRow {
                        request_id: request_id.to_owned(),
                        attempt,
                        verdict: TraceVerdict::Accept,
                        status: TraceStatus::Completed(CommitStatus::Completed),
                        reason: None,
                        logical_time: t,
                    });
                    let commit = CommitRecord {
                        request_id: request_id.to_owned(),
                        committed_value: proposal.content,
                        status: CommitStatus::Completed,
                        commit_seq: self.next_commit_seq,
                        audit_ref,
                    };
                    self.next_commit_seq += 1;
                    self.commits.push(commit.clone());
                    return Ok(commit);
                }
                Outcome::Reject { signal } => {
                    self.trace.push(BoundaryTraceRow {
                        request_id: request_id.to_owned(),
                        attempt,
                        verdict: TraceVerdict::Reject,
                        status: TraceStatus::Incomplete(RejectStatus::Incomplete),
                        reason: Some(signal.reason_code),
                        logical_time: t,
                    });
                    audit.append(
                        AuditEntry::new(
                            request_id,
                            Plane::Reject,
                            signal.reason_code.to_string(),
                            t,
                        )
                        .model(proposal.proposer_meta.model_version)
                        .detail(signal.detail.clone()),
                    );
                    ctx.rejects.push(signal);
                }
            }
        }
        let t = at + u64::from(retry_budget);
        let last = ctx.last_reject().map(|r| r.to_string()).unwrap_or_default();
        let exhausted = RejectSignal::new(
            RejectReason::BudgetExhausted,
            format!("{} attempts rejected; last: {last}", retry_budget + 1),
        );
        self.trace.push(BoundaryTraceRow {
            request_id: request_id.to_owned(),
            attempt: retry_budget,
            verdict: TraceVerdict::BudgetExhausted,
            status: TraceStatus::Incomplete(RejectStatus::Incomplete),
            reason: Some(RejectReason::BudgetExhausted),
            logical_time: t,
        });
        audit.append(
            AuditEntry::new(request_id, Plane::Reject, "budget_exhausted", t)
                .detail(exhausted.detail.clone()),
        );
        Err(exhausted)
    }

    pub fn trace(&self) -> &[BoundaryTraceRow] {
        &self.trace
    }

    pub fn commits(&self) -> &[CommitRecord] {
        &self.commits
    }

    pub fn write_trace_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for row in &self.trace {
            serde_json::to_writer(&mut out, row)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Trace scan for the boundary's two structural guarantees: every commit has
/// an accepting row for the same request, and no reject row carries the
/// commit status.
pub fn check_trace(rows: &[BoundaryTraceRow], commits: &[CommitRecord]) -> Result<(), String> {
    for row in rows {
        let rejected = row.verdict != TraceVerdict::Accept;
        if rejected && matches!(row.status, TraceStatus::Completed(_)) {
            return Err(format!(
                "rejected row for {} carries status completed",
                row.request_id
            ));
        }
    }
    for c in commits {
        let row = rows
            .get(c.audit_ref as usize)
            .ok_or_else(|| format!("commit {} has dangling audit_ref", c.commit_seq))?;
        if row.verdict != TraceVerdict::Accept || row.request_id != c.request_id {
            return Err(format!(
                "commit {} has no matching accept verdict",
                c.commit_seq
            ));
        }
    }
    let mut seqs = commits.iter().map(|c| c.commit_seq);
    if let Some(mut prev) = seqs.next() {
        for s in seqs {
            if s <= prev {
                return Err(format!("commit_seq {s} does not increase"));
            }
            prev = s;
        }
    }
    Ok(())
}
