use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::clock::LogicalTime;
use crate::observability::{RowKind, TraceRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pattern {
    P1,
    P2,
    P3,
    P4,
    P5,
    P6,
}

type Matcher = fn(&[TraceRow]) -> Vec<MatchWindow>;

/// A symptom matcher plus what it means and what to change.
#[derive(Clone)]
pub struct FailureSignature {
    pub signature_id: &'static str,
    pub pattern: Pattern,
    pub symptom: &'static str,
    pub cause: &'static str,
    pub correction: &'static str,
    matcher: Matcher,
}

impl std::fmt::Debug for FailureSignature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FailureSignature")
            .field("signature_id", &self.signature_id)
            .finish_non_exhaustive()
    }
}

impl FailureSignature {
    pub fn matches(&self, trace: &[TraceRow]) -> Vec<MatchWindow> {
        (self.matcher)(trace)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchWindow {
    pub from: LogicalTime,
    pub to: LogicalTime,
    pub request_ids: Vec<String>,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureMatch {
    pub signature_id: String,
    pub pattern: Pattern,
    pub window: MatchWindow,
    pub correction: String,
}

/// Merges decided over one dominance window.
const MERGE_WINDOW: usize = 100;
/// Smallest window evaluated when fewer merges exist.
const MIN_MERGES: usize = 10;
const APPROVAL_BATCH: usize = 10;

pub fn catalog() -> Vec<FailureSignature> {
    vec![
        FailureSignature {
            signature_id: "p1.merge_dominance",
            pattern: Pattern::P1,
            symptom: "one sub-agent wins merged conflicts far more often than its declared weight allows",
            cause: "the merge is decided by a model rather than by code",
            correction: "decide merges in deterministic code; sub-agents only propose",
            matcher: merge_dominance,
        },
        FailureSignature {
            signature_id: "p1.retry_after_deadline",
            pattern: Pattern::P1,
            symptom: "proposer retries by a sub-agent appear after the parent's deadline",
            cause: "sub-agents run retry loops of their own",
            correction: "set sub-agent retries to zero; only the parent spends the retry budget",
            matcher: |t| singles(t, RowKind::RetryAfterDeadline),
        },
        FailureSignature {
            signature_id: "p2.unclean_compensation",
            pattern: Pattern::P2,
            symptom: "compensations ran yet external state differs from the pre-scatter snapshot",
            cause: "a compensation is not idempotent or ran out of order",
            correction: "make each compensation idempotent and run them strictly in reverse completion order",
            matcher: unclean_compensation,
        },
        FailureSignature {
            signature_id: "p2.oversized_compensation",
            pattern: Pattern::P2,
            symptom: "a compensation needs more steps than the write it undoes",
            cause: "the forward step is too coarse",
            correction: "break the write into finer steps, each with a narrow undo",
            matcher: |t| singles(t, RowKind::CompensationAlarm),
        },
        FailureSignature {
            signature_id: "p3.replay_divergence",
            pattern: Pattern::P3,
            symptom: "replaying the same events under a newer model version yields a different projection",
            cause: "model-backed consumers read the log differently per version",
            correction: "Consider migrating from P3 to P5 so the projection read downstream stops depending on model version",
            matcher: |t| singles(t, RowKind::ReplayDivergence),
        },
        FailureSignature {
            signature_id: "p3.late_event_misapplied",
            pattern: Pattern::P3,
            symptom: "events older than the watermark were folded into state",
            cause: "the consumer ignores the watermark",
            correction: "watermark each event and send anything older to the audit trail instead of applying it",
            matcher: late_misapplied,
        },
        FailureSignature {
            signature_id: "p4.repeated_crash",
            pattern: Pattern::P4,
            symptom: "a child is restarted and fails with the identical crash each time",
            cause: "the failure is deterministic, so backoff cannot help",
            correction: "cap restarts and escalate to a person once max_restarts is reached",
            matcher: repeated_crash,
        },
        FailureSignature {
            signature_id: "p4.gate_latency",
            pattern: Pattern::P4,
            symptom: "a gate decision takes longer than the action it gates",
            cause: "the gate consults a model",
            correction: "evaluate policy as pure rules with no proposer call",
            matcher: gate_latency,
        },
        FailureSignature {
            signature_id: "p5.cas_retry_storm",
            pattern: Pattern::P5,
            symptom: "CAS retries per transition exceed 3 at p99",
            cause: "too many workflows contend for one coarse row",
            correction: "split the row into per-concern sub-state machines",
            matcher: cas_retry_storm,
        },
        FailureSignature {
            signature_id: "p5.stale_timer_transition",
            pattern: Pattern::P5,
            symptom: "a timer fired over a newer row version and moved state anyway",
            cause: "the fire path ignores the version the timer was scheduled at",
            correction: "Every timer fire is a CAS against its scheduled version",
            matcher: stale_timer,
        },
        FailureSignature {
            signature_id: "p6.approval_sla_deny",
            pattern: Pattern::P6,
            symptom: "a whole batch of approvals resolves by SLA fallback denial",
            cause: "reviewers are overloaded or have no service level",
            correction: "staff or schedule the review queue; the audit trail only makes the gap visible",
            matcher: approval_sla_deny,
        },
        FailureSignature {
            signature_id: "p6.kill_switch_leak",
            pattern: Pattern::P6,
            symptom: "tool calls keep starting after the kill switch was revoked",
            cause: "workers check the cancellation token only at workflow start",
            correction: "check the cancellation token at every tool boundary",
            matcher: |t| singles(t, RowKind::KillSwitchLeak),
        },
    ]
}

/// Runs every matcher in catalog order.
pub fn match_signatures(trace: &[TraceRow], catalog: &[FailureSignature]) -> Vec<SignatureMatch> {
    catalog
        .iter()
        .flat_map(|s| {
            s.matches(trace).into_iter().map(|window| SignatureMatch {
                signature_id: s.signature_id.to_owned(),
                pattern: s.pattern,
                window,
                correction: s.correction.to_owned(),
            })
        })
        .collect()
}

fn window_of<'a>(
    rows: impl IntoIterator<Item = &'a TraceRow>,
    evidence: String,
) -> Option<MatchWindow> {
    let rows: Vec<&TraceRow> = rows.into_iter().collect();
    let from = rows.iter().map(|r| r.logical_time).min()?;
    let to = rows.iter().map(|r| r.logical_time).max()?;
    let mut ids: Vec<String> = rows.iter().map(|r| r.request_id.clone()).collect();
    ids.sort();
    ids.dedup();
    Some(MatchWindow {
        from,
        to,
        request_ids: ids,
        evidence,
    })
}

/// One window covering every row of `kind`.
fn singles(trace: &[TraceRow], kind: RowKind) -> Vec<MatchWindow> {
    let hits: Vec<&TraceRow> = trace.iter().filter(|r| r.kind == kind).collect();
    let n = hits.len();
    window_of(hits, format!("{n} {} row(s)", kind.as_str()))
        .into_iter()
        .collect()
}

fn merge_dominance(trace: &[TraceRow]) -> Vec<MatchWindow> {
    let merges: Vec<&TraceRow> = trace
        .iter()
        .filter(|r| r.kind == RowKind::ConflictResolved)
        .collect();
    if merges.len() < MIN_MERGES {
        return Vec::new();
    }
    let mut out = Vec::new();
    let chunks: Vec<&[&TraceRow]> = if merges.len() < MERGE_WINDOW {
        vec![&merges[..]]
    } else {
        merges
            .chunks(MERGE_WINDOW)
            .filter(|c| c.len() == MERGE_WINDOW)
            .collect()
    };
    for chunk in chunks {
        let mut wins: BTreeMap<&str, (usize, i64)> = BTreeMap::new();
        for r in chunk {
            let Some(agent) = r.text("agent") else {
                continue;
            };
            let e = wins
                .entry(agent)
                .or_insert((0, r.int("weight_ppm").unwrap_or(0)));
            e.0 += 1;
        }
        for (agent, (n, weight_ppm)) in wins {
            let share_ppm = n as i64 * 1_000_000 / chunk.len() as i64;
            if share_ppm > 2 * weight_ppm {
                let ev = format!(
                    "{agent} won {n}/{} merges against declared weight {weight_ppm} ppm",
                    chunk.len()
                );
                out.extend(window_of(chunk.iter().copied(), ev));
            }
        }
    }
    out
}

fn unclean_compensation(trace: &[TraceRow]) -> Vec<MatchWindow> {
    let mut out = Vec::new();
    let dirty: Vec<&TraceRow> = trace
        .iter()
        .filter(|r| {
            r.kind == RowKind::SagaAborted && r.payload.contains_key("clean") && !r.flag("clean")
        })
        .collect();
    let n = dirty.len();
    out.extend(window_of(
        dirty,
        format!("{n} aborted saga(s) left external state dirty"),
    ));

    // Compensation order must strictly reverse completion rank within a saga.
    let mut ranks: BTreeMap<&str, Vec<&TraceRow>> = BTreeMap::new();
    for r in trace.iter().filter(|r| r.kind == RowKind::Compensated) {
        if let (Some(s), Some(_)) = (r.text("saga_id"), r.int("completion_rank")) {
            ranks.entry(s).or_default().push(r);
        }
    }
    for (saga, rows) in ranks {
        let seq: Vec<i64> = rows
            .iter()
            .filter_map(|r| r.int("completion_rank"))
            .collect();
        if seq.windows(2).any(|w| w[0] <= w[1]) {
            out.extend(window_of(
                rows,
                format!("saga {saga} compensated out of reverse order: {seq:?}"),
            ));
        }
    }
    out
}

fn late_misapplied(trace: &[TraceRow]) -> Vec<MatchWindow> {
    let hits: Vec<&TraceRow> = trace
        .iter()
        .filter(|r| {
            r.kind == RowKind::EventApplied
                && (r.flag("late") || matches!((r.int("event_time"), r.int("low_water")), (Some(e), Some(w)) if e < w))
        })
        .collect();
    let n = hits.len();
    window_of(hits, format!("{n} event(s) applied below the watermark"))
        .into_iter()
        .collect()
}

fn repeated_crash(trace: &[TraceRow]) -> Vec<MatchWindow> {
    let mut by_req: BTreeMap<&str, Vec<&TraceRow>> = BTreeMap::new();
    for r in trace
        .iter()
        .filter(|r| r.kind == RowKind::SupervisorRestart)
    {
        by_req.entry(&r.request_id).or_default().push(r);
    }
    let mut out = Vec::new();
    for (req, rows) in by_req {
        if rows.len() < 2 {
            continue;
        }
        let reason = |r: &TraceRow| {
            r.text("reason").map(str::to_owned).or_else(|| {
                r.text("detail")
                    .map(|d| d.split_once(": ").map_or(d, |(_, b)| b).to_owned())
            })
        };
        let first = reason(rows[0]);
        if first.is_some() && rows.iter().all(|r| reason(r) == first) {
            let n = rows.len();
            out.extend(window_of(
                rows,
                format!("{req}: {n} restarts with the same crash"),
            ));
        }
    }
    out
}

fn gate_latency(trace: &[TraceRow]) -> Vec<MatchWindow> {
    let hits: Vec<&TraceRow> = trace
        .iter()
        .filter(|r| {
            matches!(r.kind, RowKind::GateAllow | RowKind::GateDeny)
                && matches!((r.int("gate_latency_ms"), r.int("action_latency_ms")), (Some(g), Some(a)) if g > a)
        })
        .collect();
    let n = hits.len();
    window_of(
        hits,
        format!("{n} gate decision(s) slower than their action"),
    )
    .into_iter()
    .collect()
}

fn cas_retry_storm(trace: &[TraceRow]) -> Vec<MatchWindow> {
    let rows: Vec<&TraceRow> = trace
        .iter()
        .filter(|r| r.kind == RowKind::CasTransition && r.payload.contains_key("retries"))
        .collect();
    let mut retries: Vec<u64> = rows
        .iter()
        .filter_map(|r| r.int("retries"))
        .map(|v| v.max(0) as u64)
        .collect();
    retries.sort_unstable();
    let p99 = crate::observability::nearest_rank(&retries, 99);
    if p99 > 3 {
        window_of(rows, format!("CAS retries p99 = {p99}"))
            .into_iter()
            .collect()
    } else {
        Vec::new()
    }
}

fn stale_timer(trace: &[TraceRow]) -> Vec<MatchWindow> {
    let hits: Vec<&TraceRow> = trace
        .iter()
        .filter(|r| {
            r.kind == RowKind::TimerFired
                && matches!((r.int("scheduled_version"), r.int("applied_over_version")), (Some(s), Some(a)) if s != a)
        })
        .collect();
    let n = hits.len();
    window_of(
        hits,
        format!("{n} timer fire(s) applied over a newer version"),
    )
    .into_iter()
    .collect()
}

fn approval_sla_deny(trace: &[TraceRow]) -> Vec<MatchWindow> {
    let resolved: Vec<&TraceRow> = trace
        .iter()
        .filter(|r| r.kind == RowKind::ApprovalResolved)
        .collect();
    resolved
        .chunks(APPROVAL_BATCH)
        .filter(|c| {
            c.len() == APPROVAL_BATCH
                && c.iter()
                    .all(|r| r.text("decision") == Some("sla_expired_denied"))
        })
        .filter_map(|c| {
            window_of(
                c.iter().copied(),
                format!("{APPROVAL_BATCH} consecutive SLA fallback denials"),
            )
        })
        .collect()
}
