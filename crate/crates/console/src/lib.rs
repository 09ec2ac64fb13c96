//! Versioned HTTP surface over a running simulation.
//!
//! The server only reads immutable snapshots published by the simulation
//! loop and enqueues commands; the loop drains the queue at its next tick.
//!
//! | Method | Path | |
//! |---|---|---|
//! | GET | `/v1/lens/{operational,business,compliance}` | lens snapshot, `?as_of=<ms>` |
//! | GET | `/v1/trace/{request_id}` | rows for one request, time ordered |
//! | GET | `/v1/approvals/pending` | approval inbox with SLA remaining |
//! | GET | `/v1/escalations` | escalation rows |
//! | GET | `/v1/adr` | the architecture decision record |
//! | GET | `/v1/events` | server-sent stream of new trace rows |
//! | GET | `/v1/health` | serving flag and current logical time |
//! | POST | `/v1/approvals/{id}/resolve` | `{"decision": "approved" \| "denied"}` |
//! | POST | `/v1/kill` | `{"token_id": ...}` |
//! | POST | `/v1/throttle` | `{"per_minute", "per_day", "scope"}` |
//! | POST | `/v1/escalations/{id}/resolution` | `{"next_state", "resolver"}` |

mod routes;

use std::collections::BTreeSet;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;

use sdb_core::control::{ApprovalRequest, EscalationRow, ThrottleCaps, ThrottleScope};
use sdb_core::observability::TraceRow;
use sdb_core::selector::AdrRecord;
use sdb_core::spine::WorkflowState;
use sdb_core::LogicalTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

use routes::router;

#[derive(Debug, Error)]
pub enum ConsoleError {
    #[error("bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("runtime: {0}")]
    Runtime(#[source] std::io::Error),
}

/// A command accepted over HTTP, applied by the simulation at its next tick.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    ResolveApproval {
        request_id: String,
        approve: bool,
    },
    Kill {
        token_id: String,
    },
    Throttle {
        per_minute: u32,
        per_day: u32,
        scope: ThrottleScope,
    },
    ResolveEscalation {
        escalation_id: u64,
        next_state: WorkflowState,
        resolver: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KillTokenView {
    pub token_id: String,
    pub revoked_at: Option<LogicalTime>,
}

/// Everything the read endpoints serve.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Snapshot {
    pub as_of: LogicalTime,
    pub rows: Vec<TraceRow>,
    pub approvals: Vec<ApprovalRequest>,
    pub escalations: Vec<EscalationRow>,
    pub kill_tokens: Vec<KillTokenView>,
    pub throttle: Option<ThrottleCaps>,
    pub adr: Option<AdrRecord>,
}

/// One publish from the simulation: new rows are appended, the rest replaces.
#[derive(Debug, Clone, Default)]
pub struct Publish {
    pub as_of: LogicalTime,
    pub new_rows: Vec<TraceRow>,
    pub approvals: Vec<ApprovalRequest>,
    pub escalations: Vec<EscalationRow>,
    pub kill_tokens: Vec<KillTokenView>,
    pub throttle: Option<ThrottleCaps>,
}

pub(crate) struct Shared {
    pub(crate) snapshot: RwLock<Snapshot>,
    pub(crate) commands: Mutex<Sender<Command>>,
    /// Approval and escalation ids with a command already queued.
    pub(crate) claims: Mutex<BTreeSet<String>>,
    pub(crate) events: broadcast::Sender<String>,
    pub(crate) serving: AtomicBool,
}

/// Owner side of a running console surface.
pub struct ConsoleHandle {
    shared: Arc<Shared>,
    commands: Mutex<Receiver<Command>>,
    addr: Option<SocketAddr>,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ConsoleHandle {
    /// Binds `addr` and serves on a background thread. Port 0 picks a free port.
    pub fn start(addr: SocketAddr) -> Result<Self, ConsoleError> {
        let listener = std::net::TcpListener::bind(addr)
            .map_err(|source| ConsoleError::Bind { addr, source })?;
        listener
            .set_nonblocking(true)
            .map_err(ConsoleError::Runtime)?;
        let local = listener.local_addr().map_err(ConsoleError::Runtime)?;
        let (mut handle, shared) = Self::detached();
        let app = router(shared.clone());
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .map_err(ConsoleError::Runtime)?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let listener = {
            let _g = rt.enter();
            tokio::net::TcpListener::from_std(listener).map_err(ConsoleError::Runtime)?
        };
        shared.serving.store(true, Ordering::SeqCst);
        let flag = shared.clone();
        let thread = std::thread::Builder::new()
            .name("console".into())
            .spawn(move || {
                rt.block_on(async move {
                    let _ = axum::serve(listener, app)
                        .with_graceful_shutdown(async {
                            let _ = rx.await;
                        })
                        .await;
                });
                flag.serving.store(false, Ordering::SeqCst);
            })
            .map_err(ConsoleError::Runtime)?;
        handle.addr = Some(local);
        handle.shutdown = Some(tx);
        handle.thread = Some(thread);
        Ok(handle)
    }

    /// A handle with no server behind it. It never reports serving.
    pub fn offline() -> Self {
        Self::detached().0
    }

    fn detached() -> (Self, Arc<Shared>) {
        let (tx, rx) = mpsc::channel();
        let (events, _) = broadcast::channel(4096);
        let shared = Arc::new(Shared {
            snapshot: RwLock::new(Snapshot::default()),
            commands: Mutex::new(tx),
            claims: Mutex::new(BTreeSet::new()),
            events,
            serving: AtomicBool::new(false),
        });
        (
            Self {
                shared: shared.clone(),
                commands: Mutex::new(rx),
                addr: None,
                shutdown: None,
                thread: None,
            },
            shared,
        )
    }

    pub fn is_serving(&self) -> bool {
        self.shared.serving.load(Ordering::SeqCst)
    }

    pub fn addr(&self) -> Option<SocketAddr> {
        self.addr
    }

    pub fn base_url(&self) -> Option<String> {
        self.addr.map(|a| format!("http://{a}/v1"))
    }

    pub fn set_adr(&self, adr: AdrRecord) {
        self.shared.snapshot.write().expect("snapshot lock").adr = Some(adr);
    }

    pub fn publish(&self, p: Publish) {
        for row in &p.new_rows {
            if let Ok(line) = serde_json::to_string(row) {
                let _ = self.shared.events.send(line);
            }
        }
        let mut s = self.shared.snapshot.write().expect("snapshot lock");
        s.as_of = s.as_of.max(p.as_of);
        s.rows.extend(p.new_rows);
        s.approvals = p.approvals;
        s.escalations = p.escalations;
        s.kill_tokens = p.kill_tokens;
        s.throttle = p.throttle;
    }

    /// Commands queued since the last drain, in arrival order.
    pub fn drain_commands(&self) -> Vec<Command> {
        self.commands
            .lock()
            .expect("command lock")
            .try_iter()
            .collect()
    }

    /// Queues a command as if it had arrived over HTTP.
    pub fn enqueue(&self, c: Command) {
        let _ = self.shared.commands.lock().expect("command lock").send(c);
    }

    pub fn snapshot(&self) -> Snapshot {
        self.shared.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
        self.shared.serving.store(false, Ordering::SeqCst);
    }
}

impl Drop for ConsoleHandle {
    fn drop(&mut self) {
        self.stop();
    }
}
