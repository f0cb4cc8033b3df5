//! The teacher-side daemon: frame port for returning agents and pull
//! requests, plus the admin and publication HTTP API.

use std::collections::{BTreeMap, BTreeSet};
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mage_core::agent::{step_agent, RandomIds};
use mage_core::clock::{Clock, SystemClock};
use mage_core::samples::builtin;
use mage_core::server::{
    load_test_repository, ExamSession, InstallRecord, NewSession, RejectedTest, RosterEntry,
    ServerConfig, ServerError, ServerNode,
};
use mage_core::wire::{Courier, RetryPolicy};
use mage_core::{
    AgentEvent, AgentId, AgentStatus, EndpointAddress, InstallReportEntry, SessionMode, TestGraph,
};
use serde::{Deserialize, Serialize};

use crate::api::ApiError;
use crate::tcp::{serve_frames, TcpTransport};
use crate::{parse_body, serve_http, StartError};

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub frame_addr: SocketAddr,
    pub http_addr: SocketAddr,
    /// Where hosts send agents home. Defaults to loopback on the bound
    /// frame port.
    pub advertise: Option<EndpointAddress>,
    pub tests_dir: Option<PathBuf>,
    /// Generated tests to serve alongside the repository, e.g. `adaptive`
    /// or `linear-5`.
    pub builtin_tests: Vec<String>,
    pub data_dir: PathBuf,
    pub policy: RetryPolicy,
    /// How often overdue agents are swept to EXPIRED.
    pub sweep_every: Duration,
}

impl ServerOptions {
    pub fn new(data_dir: PathBuf) -> Self {
        ServerOptions {
            frame_addr: SocketAddr::from(([0, 0, 0, 0], mage_core::wire::DEFAULT_SERVER_PORT)),
            http_addr: SocketAddr::from(([127, 0, 0, 1], 8400)),
            advertise: None,
            tests_dir: None,
            builtin_tests: Vec::new(),
            data_dir,
            policy: RetryPolicy::default(),
            sweep_every: Duration::from_secs(1),
        }
    }
}

/// State shared by the frame port, the HTTP handlers and the background
/// workers. Every mutation goes through the one node lock.
pub struct ServerShared {
    node: Mutex<ServerNode>,
    rejected: Vec<RejectedTest>,
    policy: RetryPolicy,
    seeds: AtomicU64,
}

impl ServerShared {
    pub fn lock(&self) -> MutexGuard<'_, ServerNode> {
        self.node.lock().unwrap_or_else(|p| p.into_inner())
    }

    fn courier(&self) -> Courier<TcpTransport, SystemClock> {
        let seed = self.seeds.fetch_add(1, Ordering::Relaxed);
        Courier::new(TcpTransport::default(), SystemClock, self.policy, seed)
    }

    /// Creates the session's agents and sends each from its own thread.
    /// Outcomes land in the journal as they come in.
    pub fn dispatch_session(self: &Arc<Self>, session_id: &str) -> Result<Vec<Dispatched>, ServerError> {
        let batch = self.lock().prepare_dispatch(session_id)?;
        let mut out = Vec::with_capacity(batch.len());
        for d in batch {
            out.push(Dispatched {
                student_id: d.student_id.clone(),
                agent_id: d.snapshot.agent_id,
                target: d.target.clone(),
            });
            let shared = Arc::clone(self);
            thread::spawn(move || {
                let outcome = shared
                    .courier()
                    .dispatch(&d.target, &d.snapshot)
                    .map(|ack| ack.seq)
                    .map_err(|e| e.to_string());
                if let Err(e) = &outcome {
                    log::warn!("dispatch to {} ({}) failed: {e}", d.student_id, d.target);
                }
                if let Err(e) = shared.lock().record_dispatch(&d.session_id, &d.student_id, outcome) {
                    log::error!("recording dispatch of {}: {e}", d.student_id);
                }
            });
        }
        Ok(out)
    }

    /// Sends an install agent on its way and waits for it to come home.
    ///
    /// A first hop that cannot be reached within the hop budget is skipped
    /// here; later hops are the hosts' business. Returns the record as it
    /// stands when the report arrives or the agent is given up on.
    pub fn install(
        &self,
        payload: BTreeMap<String, String>,
        hosts: Vec<EndpointAddress>,
    ) -> Result<InstallRecord, ServerError> {
        let clock = SystemClock;
        let mut snapshot = self.lock().dispatch_install(payload, hosts, clock.now_ms())?;
        let id = snapshot.agent_id;
        let mut courier = self.courier();
        loop {
            if snapshot.status == AgentStatus::Returning {
                self.lock().ingest_return(&snapshot)?;
                break;
            }
            let Some(hop) = snapshot.current_hop().cloned() else {
                break;
            };
            let give_up = clock.now_ms() + self.policy.install_hop_budget_ms;
            match courier.dispatch_until(&hop, &snapshot, give_up) {
                Ok(_) => break,
                Err(e) => {
                    log::warn!("install hop {hop} skipped: {e}");
                    snapshot = step_agent(
                        &snapshot,
                        AgentEvent::HopDone(InstallReportEntry::skipped(hop)),
                    )?;
                }
            }
        }
        let until = self.policy.give_up_at(snapshot.deadline);
        loop {
            let record = self
                .lock()
                .install(&id)
                .cloned()
                .ok_or(ServerError::UnknownAgent(id))?;
            if record.report.is_some() || clock.now_ms() >= until {
                return Ok(record);
            }
            thread::sleep(Duration::from_millis(50));
        }
    }
}

/// One agent sent out by `POST /sessions/{id}/dispatch`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dispatched {
    pub student_id: String,
    pub agent_id: AgentId,
    pub target: EndpointAddress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchReply {
    pub session_id: String,
    pub dispatched: Vec<Dispatched>,
}

/// Body of `POST /sessions`. Give either an absolute `deadline` (ms since
/// the Unix epoch) or a `duration_ms` counted from now.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub test_id: String,
    #[serde(default = "push")]
    pub mode: SessionMode,
    #[serde(default)]
    pub roster: Vec<RosterEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deadline: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_ms: Option<u64>,
}

fn push() -> SessionMode {
    SessionMode::Push
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentView {
    pub student_id: String,
    pub endpoint: Option<EndpointAddress>,
    pub agent_id: Option<AgentId>,
    pub status: AgentStatus,
    pub last_seq: u64,
    pub failure: Option<String>,
}

/// `GET /sessions/{id}`: the session without its grade book.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub test_id: String,
    pub mode: SessionMode,
    pub deadline: u64,
    pub dispatched: bool,
    pub published: bool,
    pub self_assessment: bool,
    pub returned: usize,
    pub students: Vec<StudentView>,
}

impl SessionView {
    pub fn of(s: &ExamSession) -> Self {
        let mut ids: BTreeSet<&String> = s.per_student.keys().collect();
        ids.extend(s.roster.iter().map(|r| &r.student_id));
        let students = ids
            .into_iter()
            .map(|id| {
                let entry = s.per_student.get(id);
                StudentView {
                    student_id: id.clone(),
                    endpoint: s.endpoint_of(id).cloned(),
                    agent_id: entry.and_then(|e| e.agent_id),
                    status: entry.map_or(AgentStatus::Created, |e| e.status),
                    last_seq: entry.map_or(0, |e| e.last_seq),
                    failure: entry.and_then(|e| e.failure.clone()),
                }
            })
            .collect();
        SessionView {
            session_id: s.session_id.clone(),
            test_id: s.test_id.clone(),
            mode: s.mode,
            deadline: s.deadline,
            dispatched: s.dispatched,
            published: s.published,
            self_assessment: s.self_assessment,
            returned: s.returned_count(),
            students,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestInfo {
    pub test_id: String,
    pub title: String,
    pub version: u32,
    pub questions: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectedInfo {
    pub path: String,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestsView {
    pub tests: Vec<TestInfo>,
    pub rejected: Vec<RejectedInfo>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstallRequest {
    pub payload: BTreeMap<String, String>,
    pub hosts: Vec<EndpointAddress>,
}

pub fn admin_router(shared: Arc<ServerShared>) -> Router {
    Router::new()
        .route("/tests", get(list_tests))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/dispatch", post(dispatch))
        .route("/sessions/{id}/results", get(results))
        .route("/sessions/{id}/publish", post(publish))
        .route("/install", post(install))
        .with_state(shared)
}

type Shared = State<Arc<ServerShared>>;

async fn list_tests(State(s): Shared) -> Json<TestsView> {
    let tests = s
        .lock()
        .tests()
        .values()
        .map(|g| TestInfo {
            test_id: g.test_id.clone(),
            title: g.title.clone(),
            version: g.version,
            questions: g.nodes.len(),
        })
        .collect();
    let rejected = s
        .rejected
        .iter()
        .map(|r| RejectedInfo {
            path: r.path.display().to_string(),
            reasons: r.reasons.clone(),
        })
        .collect();
    Json(TestsView { tests, rejected })
}

async fn create_session(State(s): Shared, body: Bytes) -> Result<Response, ApiError> {
    let req: CreateSession = parse_body(&body)?;
    let deadline = match (req.deadline, req.duration_ms) {
        (Some(d), None) => d,
        (None, Some(ms)) => SystemClock.now_ms() + ms,
        _ => return Err(ApiError::bad_request("give exactly one of deadline, duration_ms")),
    };
    let session = s.lock().create_session(NewSession {
        test_id: req.test_id,
        mode: req.mode,
        roster: req.roster,
        deadline,
    })?;
    Ok((StatusCode::CREATED, Json(SessionView::of(&session))).into_response())
}

async fn get_session(State(s): Shared, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(SessionView::of(s.lock().session(&id)?)))
}

async fn dispatch(State(s): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let dispatched = s.dispatch_session(&id)?;
    let reply = DispatchReply {
        session_id: id,
        dispatched,
    };
    Ok((StatusCode::ACCEPTED, Json(reply)).into_response())
}

fn report(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

/// The published file once there is one, otherwise a live compile.
async fn results(State(s): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    let node = s.lock();
    let bytes = match node.published_report(&id)? {
        Some(b) => b,
        None => node.report_bytes(&id)?,
    };
    Ok(report(bytes))
}

async fn publish(State(s): Shared, Path(id): Path<String>) -> Result<Response, ApiError> {
    Ok(report(s.lock().publish_results(&id)?))
}

async fn install(State(s): Shared, body: Bytes) -> Result<Response, ApiError> {
    let req: InstallRequest = parse_body(&body)?;
    let record = tokio::task::spawn_blocking(move || s.install(req.payload, req.hosts))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "INTERNAL", e.to_string()))??;
    let status = if record.report.is_some() {
        StatusCode::OK
    } else {
        StatusCode::ACCEPTED
    };
    Ok((status, Json(record)).into_response())
}

pub struct RunningServer {
    pub frame_addr: SocketAddr,
    pub http_addr: SocketAddr,
    pub home: EndpointAddress,
    pub shared: Arc<ServerShared>,
}

fn load_tests(opts: &ServerOptions) -> Result<(BTreeMap<String, TestGraph>, Vec<RejectedTest>), StartError> {
    let mut tests = BTreeMap::new();
    let mut rejected = Vec::new();
    if let Some(dir) = &opts.tests_dir {
        let repo = load_test_repository(dir)
            .map_err(|e| StartError::Config(format!("tests dir {}: {e}", dir.display())))?;
        tests = repo.tests;
        rejected = repo.rejected;
    }
    for id in &opts.builtin_tests {
        let graph = builtin(id).ok_or_else(|| StartError::Config(format!("no built-in test {id:?}")))?;
        tests.insert(graph.test_id.clone(), graph);
    }
    Ok((tests, rejected))
}

/// Binds both ports, recovers state from the data dir and starts serving
/// in background threads.
pub fn start_server(opts: ServerOptions) -> Result<RunningServer, StartError> {
    let (tests, rejected) = load_tests(&opts)?;
    std::fs::create_dir_all(&opts.data_dir)?;
    let frames = TcpListener::bind(opts.frame_addr)?;
    let frame_port = frames.local_addr()?.port();
    let home = opts
        .advertise
        .clone()
        .unwrap_or_else(|| EndpointAddress::new("127.0.0.1", frame_port));
    let mut config = ServerConfig::new(home.clone());
    config.policy = opts.policy;
    let node = ServerNode::open(config, tests, &opts.data_dir, Box::new(RandomIds))?;
    let shared = Arc::new(ServerShared {
        node: Mutex::new(node),
        rejected,
        policy: opts.policy,
        seeds: AtomicU64::new(SystemClock.now_ms()),
    });

    let handler = Arc::clone(&shared);
    let frame_addr = serve_frames(frames, move |msg| {
        handler.lock().handle_message(msg, SystemClock.now_ms())
    })?;

    let sweeper = Arc::clone(&shared);
    let every = opts.sweep_every;
    thread::Builder::new().name("expiry-sweep".into()).spawn(move || loop {
        thread::sleep(every);
        match sweeper.lock().expire_overdue(SystemClock.now_ms()) {
            Ok(expired) => {
                for (session, student) in expired {
                    log::info!("session {session}: {student} expired");
                }
            }
            Err(e) => log::error!("expiry sweep: {e}"),
        }
    })?;

    let http_addr = serve_http(opts.http_addr, admin_router(Arc::clone(&shared)))?;
    log::info!("server frames on {frame_addr}, admin api on {http_addr}, home {home}");
    Ok(RunningServer {
        frame_addr,
        http_addr,
        home,
        shared,
    })
}
