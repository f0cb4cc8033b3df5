//! The student-side daemon: frame port for arriving agents and the local
//! exam API the student client talks to.

use std::collections::BTreeSet;
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};
use mage_core::clock::{Clock, SystemClock};
use mage_core::host::{ExamStatus, ExamSummary, ExamView, HostError, HostPlatform, Outbound};
use mage_core::wire::{Courier, PullRequest, RetryPolicy, WireError};
use mage_core::{AgentId, AgentSnapshot, AnswerPayload, EndpointAddress, QuestionId};
use serde::{Deserialize, Serialize};

use crate::api::ApiError;
use crate::tcp::{serve_frames, TcpTransport};
use crate::{parse_body, serve_http, StartError};

#[derive(Debug, Clone)]
pub struct HostOptions {
    pub frame_addr: SocketAddr,
    pub api_addr: SocketAddr,
    /// The address agents are dispatched to. Defaults to loopback on the
    /// bound frame port. Install itineraries must name this address.
    pub advertise: Option<EndpointAddress>,
    pub data_dir: PathBuf,
    pub policy: RetryPolicy,
    /// Period of the deadline and outbound check.
    pub tick: Duration,
}

impl HostOptions {
    pub fn new(data_dir: PathBuf) -> Self {
        HostOptions {
            frame_addr: SocketAddr::from(([0, 0, 0, 0], mage_core::wire::DEFAULT_HOST_PORT)),
            api_addr: SocketAddr::from(([127, 0, 0, 1], 8401)),
            advertise: None,
            data_dir,
            policy: RetryPolicy::default(),
            tick: Duration::from_millis(250),
        }
    }
}

pub struct HostShared {
    platform: Mutex<HostPlatform>,
    /// Agents with a sender thread running.
    busy: Mutex<BTreeSet<AgentId>>,
    /// Returns that ran out of retries; picked up again after a restart.
    abandoned: Mutex<BTreeSet<AgentId>>,
    policy: RetryPolicy,
    seeds: AtomicU64,
}

fn guard<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|p| p.into_inner())
}

impl HostShared {
    pub fn lock(&self) -> MutexGuard<'_, HostPlatform> {
        guard(&self.platform)
    }

    fn courier(&self) -> Courier<TcpTransport, SystemClock> {
        let seed = self.seeds.fetch_add(1, Ordering::Relaxed);
        Courier::new(TcpTransport::default(), SystemClock, self.policy, seed)
    }

    /// Cuts overdue exams, then starts a sender for every agent waiting to
    /// leave that does not already have one.
    pub fn tick(self: &Arc<Self>) {
        let outbound = {
            let mut p = self.lock();
            let now = p.now();
            match p.enforce_deadline(now) {
                Ok(cut) => {
                    for id in cut {
                        log::info!("agent {id} reached its deadline");
                    }
                }
                Err(e) => log::error!("deadline check: {e}"),
            }
            p.outbound()
        };
        for out in outbound {
            let id = out.agent_id();
            if guard(&self.abandoned).contains(&id) || !guard(&self.busy).insert(id) {
                continue;
            }
            let me = Arc::clone(self);
            thread::spawn(move || me.send(out));
        }
    }

    fn send(self: Arc<Self>, out: Outbound) {
        let id = out.agent_id();
        let mut courier = self.courier();
        let result = match out {
            Outbound::Return { home, snapshot } => match courier.return_agent(&home, &snapshot) {
                Ok(_) => self.lock().on_return_acked(&id),
                Err(e) => {
                    log::warn!("return of {id} to {home} abandoned: {e}");
                    guard(&self.abandoned).insert(id);
                    Ok(())
                }
            },
            Outbound::Forward { to, snapshot } => {
                let give_up = SystemClock.now_ms() + self.policy.install_hop_budget_ms;
                match courier.dispatch_until(&to, &snapshot, give_up) {
                    Ok(_) => self.lock().on_forwarded(&id),
                    Err(e) => {
                        log::warn!("hop {to} skipped for {id}: {e}");
                        self.lock().on_forward_failed(&id)
                    }
                }
            }
        };
        if let Err(e) = result {
            log::error!("after sending {id}: {e}");
        }
        guard(&self.busy).remove(&id);
        self.tick();
    }
}

/// Body of `POST /exam/answer`. `question_id`, when present, must name the
/// question being answered; it guards against double submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnswerRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<QuestionId>,
    pub answer: AnswerPayload,
}

pub fn exam_router(shared: Arc<HostShared>) -> Router {
    Router::new()
        .route("/exam", get(exam))
        .route("/exam/question", get(question))
        .route("/exam/answer", post(answer))
        .route("/exam/status", get(status))
        .with_state(shared)
}

type Shared = State<Arc<HostShared>>;

async fn exam(State(s): Shared) -> Result<Json<ExamSummary>, ApiError> {
    Ok(Json(s.lock().exam_summary()?))
}

fn active(p: &HostPlatform) -> Result<AgentId, HostError> {
    p.active_exam()
        .map(|a| a.agent_id)
        .ok_or(HostError::NoActiveExam)
}

async fn question(State(s): Shared) -> Result<Json<ExamView>, ApiError> {
    let p = s.lock();
    Ok(Json(p.current_question(&active(&p)?)?))
}

async fn answer(State(s): Shared, body: Bytes) -> Result<Json<ExamView>, ApiError> {
    let req: AnswerRequest = parse_body(&body)?;
    let result = {
        let mut p = s.lock();
        active(&p).and_then(|id| p.submit_answer(&id, req.question_id.as_ref(), req.answer))
    };
    s.tick();
    Ok(Json(result?))
}

async fn status(State(s): Shared) -> Result<Json<ExamStatus>, ApiError> {
    Ok(Json(s.lock().exam_status()?))
}

pub struct RunningHost {
    pub frame_addr: SocketAddr,
    pub api_addr: SocketAddr,
    pub endpoint: EndpointAddress,
    pub shared: Arc<HostShared>,
}

pub fn start_host(opts: HostOptions) -> Result<RunningHost, StartError> {
    std::fs::create_dir_all(&opts.data_dir)?;
    let frames = TcpListener::bind(opts.frame_addr)?;
    let port = frames.local_addr()?.port();
    let endpoint = opts
        .advertise
        .clone()
        .unwrap_or_else(|| EndpointAddress::new("127.0.0.1", port));
    let platform = HostPlatform::open(endpoint.clone(), &opts.data_dir, Arc::new(SystemClock))?;
    let shared = Arc::new(HostShared {
        platform: Mutex::new(platform),
        busy: Mutex::new(BTreeSet::new()),
        abandoned: Mutex::new(BTreeSet::new()),
        policy: opts.policy,
        seeds: AtomicU64::new(SystemClock.now_ms()),
    });

    let handler = Arc::clone(&shared);
    let frame_addr = serve_frames(frames, move |msg| {
        let reply = handler.lock().handle_message(msg);
        handler.tick();
        reply
    })?;

    let ticker = Arc::clone(&shared);
    let every = opts.tick;
    thread::Builder::new().name("host-tick".into()).spawn(move || loop {
        ticker.tick();
        thread::sleep(every);
    })?;

    let api_addr = serve_http(opts.api_addr, exam_router(Arc::clone(&shared)))?;
    log::info!("host {endpoint}: frames on {frame_addr}, exam api on {api_addr}");
    Ok(RunningHost {
        frame_addr,
        api_addr,
        endpoint,
        shared,
    })
}

/// Asks `server` for a self-assessment agent and hands it to the host
/// platform listening at `local`.
pub fn pull(
    server: &EndpointAddress,
    local: &EndpointAddress,
    student_id: &str,
    test_id: &str,
) -> Result<AgentSnapshot, WireError> {
    let mut courier = Courier::new(
        TcpTransport::default(),
        SystemClock,
        RetryPolicy::default(),
        SystemClock.now_ms(),
    );
    let snapshot = courier.send_pull_request(
        server,
        PullRequest {
            student_id: student_id.to_owned(),
            test_id: test_id.to_owned(),
            reply: local.clone(),
        },
    )?;
    courier.dispatch(local, &snapshot)?;
    Ok(snapshot)
}
