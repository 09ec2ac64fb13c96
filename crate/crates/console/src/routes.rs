use std::convert::Infallible;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use sdb_core::control::{ThrottleCaps, ThrottleScope};
use sdb_core::observability::{project, Lens, TraceRow};
use sdb_core::spine::WorkflowState;
use sdb_core::LogicalTime;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

use crate::{Command, Shared};

pub(crate) fn router(shared: Arc<Shared>) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/lens/{name}", get(lens))
        .route("/v1/trace/{request_id}", get(trace))
        .route("/v1/approvals/pending", get(pending_approvals))
        .route("/v1/approvals/{id}/resolve", post(resolve_approval))
        .route("/v1/escalations", get(escalations))
        .route("/v1/escalations/{id}/resolution", post(resolve_escalation))
        .route("/v1/adr", get(adr))
        .route("/v1/kill", post(kill))
        .route("/v1/throttle", post(throttle))
        .route("/v1/events", get(events))
        .with_state(shared)
}

type AppState = State<Arc<Shared>>;

fn error(status: StatusCode, msg: impl Into<String>) -> Response {
    (status, Json(json!({ "error": msg.into() }))).into_response()
}

fn accepted(command: &Command, as_of: LogicalTime) -> Response {
    (
        StatusCode::ACCEPTED,
        Json(json!({ "accepted": command, "as_of": as_of, "applies": "next_tick" })),
    )
        .into_response()
}

fn enqueue(s: &Shared, c: Command) -> Result<(), Box<Response>> {
    s.commands
        .lock()
        .expect("command lock")
        .send(c)
        .map_err(|_| {
            Box::new(error(
                StatusCode::SERVICE_UNAVAILABLE,
                "simulation is not accepting commands",
            ))
        })
}

async fn health(State(s): AppState) -> Json<serde_json::Value> {
    let snap = s.snapshot.read().expect("snapshot lock");
    Json(
        json!({ "serving": s.serving.load(std::sync::atomic::Ordering::SeqCst), "as_of": snap.as_of, "rows": snap.rows.len() }),
    )
}

#[derive(Deserialize)]
struct AsOf {
    as_of: Option<u64>,
}

async fn lens(State(s): AppState, Path(name): Path<String>, Query(q): Query<AsOf>) -> Response {
    let Some(lens) = Lens::parse(&name) else {
        return error(StatusCode::NOT_FOUND, format!("unknown lens `{name}`"));
    };
    let snap = s.snapshot.read().expect("snapshot lock");
    let as_of = q.as_of.map_or(snap.as_of, LogicalTime);
    Json(project(&snap.rows, lens, as_of)).into_response()
}

async fn trace(State(s): AppState, Path(request_id): Path<String>) -> Response {
    let snap = s.snapshot.read().expect("snapshot lock");
    let mut rows: Vec<&TraceRow> = snap
        .rows
        .iter()
        .filter(|r| r.request_id == request_id)
        .collect();
    if rows.is_empty() {
        return error(StatusCode::NOT_FOUND, format!("no rows for `{request_id}`"));
    }
    rows.sort_by_key(|r| r.logical_time);
    Json(json!({ "request_id": request_id, "rows": rows })).into_response()
}

#[derive(Serialize)]
struct PendingView<'a> {
    request_id: &'a str,
    payload: &'a sdb_core::Record,
    requested_at: LogicalTime,
    deadline: LogicalTime,
    remaining_ms: u64,
    policy_version: Option<&'a str>,
}

async fn pending_approvals(State(s): AppState) -> Response {
    let snap = s.snapshot.read().expect("snapshot lock");
    let items: Vec<PendingView> = snap
        .approvals
        .iter()
        .filter(|a| !a.is_resolved())
        .map(|a| PendingView {
            request_id: &a.request_id,
            payload: &a.payload,
            requested_at: a.requested_at,
            deadline: a.deadline(),
            remaining_ms: a.deadline().0.saturating_sub(snap.as_of.0),
            policy_version: a.policy_version.as_ref().map(|p| p.as_str()),
        })
        .collect();
    Json(json!({ "as_of": snap.as_of, "pending": items })).into_response()
}

#[derive(Deserialize)]
struct ApprovalBody {
    decision: String,
}

async fn resolve_approval(
    State(s): AppState,
    Path(id): Path<String>,
    Json(body): Json<ApprovalBody>,
) -> Response {
    let approve = match body.decision.as_str() {
        "approved" | "approve" => true,
        "denied" | "deny" => false,
        other => {
            return error(
                StatusCode::BAD_REQUEST,
                format!("decision must be approved or denied, got `{other}`"),
            )
        }
    };
    let as_of = {
        let snap = s.snapshot.read().expect("snapshot lock");
        match snap.approvals.iter().find(|a| a.request_id == id) {
            None => return error(StatusCode::NOT_FOUND, format!("unknown approval `{id}`")),
            Some(a) if a.is_resolved() => {
                return error(
                    StatusCode::CONFLICT,
                    format!("approval `{id}` is already resolved"),
                );
            }
            Some(_) => snap.as_of,
        }
    };
    if !s
        .claims
        .lock()
        .expect("claims lock")
        .insert(format!("approval:{id}"))
    {
        return error(
            StatusCode::CONFLICT,
            format!("approval `{id}` already has a resolution queued"),
        );
    }
    let c = Command::ResolveApproval {
        request_id: id,
        approve,
    };
    if let Err(r) = enqueue(&s, c.clone()) {
        return *r;
    }
    accepted(&c, as_of)
}

async fn escalations(State(s): AppState) -> Response {
    let snap = s.snapshot.read().expect("snapshot lock");
    Json(json!({ "as_of": snap.as_of, "escalations": snap.escalations })).into_response()
}

#[derive(Deserialize)]
struct EscalationBody {
    next_state: WorkflowState,
    #[serde(default = "console_resolver")]
    resolver: String,
}

fn console_resolver() -> String {
    "console".into()
}

async fn resolve_escalation(
    State(s): AppState,
    Path(id): Path<u64>,
    Json(body): Json<EscalationBody>,
) -> Response {
    if !body.next_state.is_terminal() {
        return error(
            StatusCode::BAD_REQUEST,
            format!("next_state must be terminal, got `{}`", body.next_state),
        );
    }
    let as_of = {
        let snap = s.snapshot.read().expect("snapshot lock");
        match snap.escalations.iter().find(|e| e.escalation_id == id) {
            None => return error(StatusCode::NOT_FOUND, format!("unknown escalation {id}")),
            Some(e) if e.resolution.is_some() => {
                return error(
                    StatusCode::CONFLICT,
                    format!("escalation {id} is already resolved"),
                );
            }
            Some(_) => snap.as_of,
        }
    };
    if !s
        .claims
        .lock()
        .expect("claims lock")
        .insert(format!("escalation:{id}"))
    {
        return error(
            StatusCode::CONFLICT,
            format!("escalation {id} already has a resolution queued"),
        );
    }
    let c = Command::ResolveEscalation {
        escalation_id: id,
        next_state: body.next_state,
        resolver: body.resolver,
    };
    if let Err(r) = enqueue(&s, c.clone()) {
        return *r;
    }
    accepted(&c, as_of)
}

async fn adr(State(s): AppState) -> Response {
    let snap = s.snapshot.read().expect("snapshot lock");
    match &snap.adr {
        Some(a) => Json(json!({ "adr": a, "table": a.to_table() })).into_response(),
        None => error(StatusCode::NOT_FOUND, "no ADR published"),
    }
}

#[derive(Deserialize)]
struct KillBody {
    token_id: String,
}

async fn kill(State(s): AppState, Json(body): Json<KillBody>) -> Response {
    let as_of = {
        let snap = s.snapshot.read().expect("snapshot lock");
        if !snap.kill_tokens.iter().any(|t| t.token_id == body.token_id) {
            return error(
                StatusCode::NOT_FOUND,
                format!("unknown token `{}`", body.token_id),
            );
        }
        snap.as_of
    };
    let c = Command::Kill {
        token_id: body.token_id,
    };
    if let Err(r) = enqueue(&s, c.clone()) {
        return *r;
    }
    accepted(&c, as_of)
}

#[derive(Deserialize)]
struct ThrottleBody {
    per_minute: u32,
    per_day: u32,
    #[serde(default)]
    scope: Option<ThrottleScope>,
}

async fn throttle(State(s): AppState, Json(body): Json<ThrottleBody>) -> Response {
    let (as_of, current) = {
        let snap = s.snapshot.read().expect("snapshot lock");
        (snap.as_of, snap.throttle)
    };
    let scope = body
        .scope
        .or(current.map(|c| c.scope))
        .unwrap_or(ThrottleScope::Global);
    if let Err(e) = ThrottleCaps::new(body.per_minute, body.per_day, scope) {
        return error(StatusCode::BAD_REQUEST, e.to_string());
    }
    let c = Command::Throttle {
        per_minute: body.per_minute,
        per_day: body.per_day,
        scope,
    };
    if let Err(r) = enqueue(&s, c.clone()) {
        return *r;
    }
    accepted(&c, as_of)
}

async fn events(State(s): AppState) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = s.events.subscribe();
    let stream = stream::unfold(rx, |mut rx| async move {
        match rx.recv().await {
            Ok(line) => Some((Ok(Event::default().event("row").data(line)), rx)),
            Err(RecvError::Lagged(n)) => {
                Some((Ok(Event::default().event("lagged").data(n.to_string())), rx))
            }
            Err(RecvError::Closed) => None,
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::default())
}
