use std::net::SocketAddr;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use sdb_console::{Command, ConsoleHandle, KillTokenView, Publish};
use sdb_core::control::{ApprovalRequest, ThrottleScope};
use sdb_core::observability::{Module, RowKind, TraceRow};
use sdb_core::spine::WorkflowState;
use sdb_core::{LogicalTime, Record};
use serde_json::{json, Value};

fn start() -> (ConsoleHandle, String, Client) {
    let h = ConsoleHandle::start("127.0.0.1:0".parse::<SocketAddr>().unwrap()).unwrap();
    let base = h.base_url().unwrap();
    (h, base, Client::new())
}

fn seed(h: &ConsoleHandle) {
    let rows = vec![
        TraceRow::new(
            "R-2",
            Module::Workflow,
            RowKind::RenewalOpened,
            LogicalTime(5),
        ),
        TraceRow::new(
            "R-1",
            Module::Workflow,
            RowKind::RenewalOpened,
            LogicalTime(3),
        ),
        TraceRow::new(
            "R-1",
            Module::Control,
            RowKind::ApprovalRequested,
            LogicalTime(1),
        ),
    ];
    h.publish(Publish {
        as_of: LogicalTime(10),
        new_rows: rows,
        approvals: vec![
            ApprovalRequest::new("R-1", Record::new(), LogicalTime(0), 100).unwrap(),
            ApprovalRequest::new("R-2", Record::new(), LogicalTime(0), 100).unwrap(),
        ],
        escalations: vec![],
        kill_tokens: vec![KillTokenView {
            token_id: "sim".into(),
            revoked_at: None,
        }],
        throttle: None,
    });
}

#[test]
fn offline_handle_is_not_serving() {
    assert!(!ConsoleHandle::offline().is_serving());
}

#[test]
fn double_resolution_is_409_and_unknown_is_404() {
    let (h, base, c) = start();
    assert!(h.is_serving());
    seed(&h);
    let url = format!("{base}/approvals/R-1/resolve");
    let first = c
        .post(&url)
        .json(&json!({"decision": "approved"}))
        .send()
        .unwrap();
    assert_eq!(first.status(), StatusCode::ACCEPTED);
    let second = c
        .post(&url)
        .json(&json!({"decision": "denied"}))
        .send()
        .unwrap();
    assert_eq!(second.status(), StatusCode::CONFLICT);
    let unknown = c
        .post(format!("{base}/approvals/nope/resolve"))
        .json(&json!({"decision": "approved"}))
        .send()
        .unwrap();
    assert_eq!(unknown.status(), StatusCode::NOT_FOUND);
    let bad = c
        .post(format!("{base}/approvals/R-2/resolve"))
        .json(&json!({"decision": "maybe"}))
        .send()
        .unwrap();
    assert_eq!(bad.status(), StatusCode::BAD_REQUEST);
    assert_eq!(
        h.drain_commands(),
        vec![Command::ResolveApproval {
            request_id: "R-1".into(),
            approve: true
        }]
    );
    assert!(h.drain_commands().is_empty());
}

#[test]
fn reads_serve_snapshots() {
    let (h, base, c) = start();
    seed(&h);
    let t: Value = c
        .get(format!("{base}/trace/R-1"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let times: Vec<u64> = t["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["logical_time"].as_u64().unwrap())
        .collect();
    assert_eq!(times, vec![1, 3]);
    assert_eq!(
        c.get(format!("{base}/trace/none")).send().unwrap().status(),
        StatusCode::NOT_FOUND
    );

    let lens: Value = c
        .get(format!("{base}/lens/business"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(lens["aggregates"]["opened"], 2);
    let early: Value = c
        .get(format!("{base}/lens/business?as_of=4"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(early["aggregates"]["opened"], 1);
    assert_eq!(
        c.get(format!("{base}/lens/finance"))
            .send()
            .unwrap()
            .status(),
        StatusCode::NOT_FOUND
    );

    let p: Value = c
        .get(format!("{base}/approvals/pending"))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(p["pending"].as_array().unwrap().len(), 2);
    assert_eq!(p["pending"][0]["remaining_ms"], 90);
    assert_eq!(
        c.get(format!("{base}/adr")).send().unwrap().status(),
        StatusCode::NOT_FOUND
    );
}

#[test]
fn control_commands_queue() {
    let (h, base, c) = start();
    seed(&h);
    assert_eq!(
        c.post(format!("{base}/kill"))
            .json(&json!({"token_id": "x"}))
            .send()
            .unwrap()
            .status(),
        StatusCode::NOT_FOUND
    );
    assert_eq!(
        c.post(format!("{base}/kill"))
            .json(&json!({"token_id": "sim"}))
            .send()
            .unwrap()
            .status(),
        StatusCode::ACCEPTED
    );
    let zero = c
        .post(format!("{base}/throttle"))
        .json(&json!({"per_minute": 0, "per_day": 5}))
        .send()
        .unwrap();
    assert_eq!(zero.status(), StatusCode::BAD_REQUEST);
    let ok = c
        .post(format!("{base}/throttle"))
        .json(&json!({"per_minute": 3, "per_day": 5}))
        .send()
        .unwrap();
    assert_eq!(ok.status(), StatusCode::ACCEPTED);
    let esc = c
        .post(format!("{base}/escalations/0/resolution"))
        .json(&json!({"next_state": "renewed"}))
        .send()
        .unwrap();
    assert_eq!(esc.status(), StatusCode::NOT_FOUND);
    assert_eq!(
        h.drain_commands(),
        vec![
            Command::Kill {
                token_id: "sim".into()
            },
            Command::Throttle {
                per_minute: 3,
                per_day: 5,
                scope: ThrottleScope::Global
            },
        ]
    );
    let _ = WorkflowState::Renewed;
}

#[test]
fn shutdown_stops_serving() {
    let (h, base, c) = start();
    assert_eq!(
        c.get(format!("{base}/health")).send().unwrap().status(),
        StatusCode::OK
    );
    h.shutdown();
    assert!(c.get(format!("{base}/health")).send().is_err());
}
