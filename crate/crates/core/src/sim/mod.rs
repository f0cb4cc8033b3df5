//! Deterministic discrete-event campaign simulator.
//!
//! Runs the real [`ServerNode`](crate::server::ServerNode) and
//! [`HostPlatform`](crate::host::HostPlatform) code on one logical clock,
//! with frames encoded by the real codec and carried over lossy in-process
//! links. A client-server baseline runs the same engine on the server
//! side, one round trip per question, for comparison.

mod baseline;
mod campaign;
mod install;
mod net;
mod policy;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::AgentError;
use crate::canonical;
use crate::host::HostError;
use crate::server::{CompiledResults, ServerError};
use crate::wire::{RetryPolicy, WireError};

pub use campaign::run_campaign;
pub use install::{run_install, InstallCampaign, InstallOutcome};
pub use policy::{correct_answer, wrong_answer, AnswerPolicy};

/// Link name of the server in partitions and traces.
pub const SERVER_LINK: &str = "server";

/// A window during which every frame to or from `link` is lost.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Partition {
    pub link: String,
    pub start_ms: u64,
    /// Exclusive.
    pub end_ms: u64,
}

impl Partition {
    /// Parses `link:t0:t1`.
    pub fn parse(s: &str) -> Option<Partition> {
        let mut it = s.rsplitn(3, ':');
        let end_ms = it.next()?.parse().ok()?;
        let start_ms = it.next()?.parse().ok()?;
        let link = it.next()?.to_owned();
        Some(Partition {
            link,
            start_ms,
            end_ms,
        })
    }
}

/// Links are named after what sits at their far end: `server`, a student
/// id, or an install host name. A frame takes the latency of the host link
/// it crosses and is lost when either end is partitioned at send time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkModel {
    pub latency_ms: u64,
    #[serde(default)]
    pub link_latency_ms: BTreeMap<String, u64>,
    pub drop_probability: f64,
    #[serde(default)]
    pub partitions: Vec<Partition>,
    pub seed: u64,
}

impl NetworkModel {
    pub fn clean(latency_ms: u64, seed: u64) -> Self {
        NetworkModel {
            latency_ms,
            link_latency_ms: BTreeMap::new(),
            drop_probability: 0.0,
            partitions: Vec::new(),
            seed,
        }
    }

    fn validate(&self, links: &[String]) -> Result<(), SimError> {
        if !(0.0..=1.0).contains(&self.drop_probability) {
            return Err(SimError::InvalidConfig(format!(
                "drop probability {} is outside [0, 1]",
                self.drop_probability
            )));
        }
        let known = |l: &String| l == SERVER_LINK || links.contains(l);
        for p in &self.partitions {
            if p.start_ms > p.end_ms {
                return Err(SimError::InvalidConfig(format!(
                    "partition on {} ends before it starts",
                    p.link
                )));
            }
            if !known(&p.link) {
                return Err(SimError::InvalidConfig(format!("unknown link {}", p.link)));
            }
        }
        if let Some(l) = self.link_latency_ms.keys().find(|l| !known(l)) {
            return Err(SimError::InvalidConfig(format!("unknown link {l}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimMode {
    /// Mobile evaluation agents: dispatch, local execution, return.
    Agent,
    /// One request/response per question, graded on the server.
    Baseline,
    /// The whole questionnaire is downloaded once and submitted once; the
    /// server replays the answers along the adaptive path.
    BaselineStatic,
}

impl SimMode {
    pub fn parse(s: &str) -> Option<SimMode> {
        match s {
            "agent" => Some(SimMode::Agent),
            "baseline" => Some(SimMode::Baseline),
            "baseline-static" => Some(SimMode::BaselineStatic),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SimMode::Agent => "agent",
            SimMode::Baseline => "baseline",
            SimMode::BaselineStatic => "baseline-static",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub n_students: usize,
    pub policy: AnswerPolicy,
    pub network: NetworkModel,
    /// Absolute logical time; the campaign starts at 0.
    pub deadline_ms: u64,
    pub mode: SimMode,
    /// Time a student spends on each question.
    pub think_ms: u64,
    /// Lose the first RETURN_ACK sent to each student so every RETURN is
    /// delivered twice. Agent mode only.
    pub force_duplicate_return: bool,
    pub retry: RetryPolicy,
}

impl CampaignConfig {
    pub fn new(n_students: usize, mode: SimMode) -> Self {
        CampaignConfig {
            n_students,
            policy: AnswerPolicy::AlwaysCorrect,
            network: NetworkModel::clean(20, 1),
            deadline_ms: 3_600_000,
            mode,
            think_ms: 5_000,
            force_duplicate_return: false,
            retry: RetryPolicy::default(),
        }
    }

    /// Student ids `s001`, `s002`, ... padded so they sort numerically.
    pub fn student_ids(&self) -> Vec<String> {
        let width = self.n_students.to_string().len().max(3);
        (1..=self.n_students)
            .map(|i| format!("s{i:0width$}"))
            .collect()
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.n_students == 0 {
            return Err(SimError::InvalidConfig("no students".into()));
        }
        if self.n_students > 60_000 {
            return Err(SimError::InvalidConfig("at most 60000 students".into()));
        }
        if self.force_duplicate_return && self.mode != SimMode::Agent {
            return Err(SimError::InvalidConfig(
                "forced duplicate returns need agent mode".into(),
            ));
        }
        self.network.validate(&self.student_ids())
    }
}

/// One entry of the event trace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TraceEvent {
    /// A frame put on a link; `arrives_at` is null when it was lost.
    Frame {
        at: u64,
        from: String,
        to: String,
        msg: String,
        bytes: u64,
        arrives_at: Option<u64>,
    },
    /// The server graded answers.
    Graded { at: u64, student: String, ops: u64 },
    /// A student answered a question.
    Answered { at: u64, student: String },
    /// The server first recorded a student's results.
    Ingested { at: u64, student: String },
    /// An exchange ran out of retries.
    GaveUp { at: u64, from: String, to: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignMetrics {
    pub mode: SimMode,
    pub test_id: String,
    pub n_students: u64,
    pub frames_total: u64,
    pub bytes_total: u64,
    pub frames_sent_by_server: u64,
    pub server_grading_ops: u64,
    pub answers_recorded: u64,
    pub returns_delivered: u64,
    /// When the server first held each student's results; null if never.
    pub completion_ms: BTreeMap<String, Option<u64>>,
}

impl CampaignMetrics {
    /// Recomputes every counter from a trace.
    pub fn from_trace(mode: SimMode, test_id: &str, students: &[String], trace: &[TraceEvent]) -> Self {
        let mut m = CampaignMetrics {
            mode,
            test_id: test_id.to_owned(),
            n_students: students.len() as u64,
            frames_total: 0,
            bytes_total: 0,
            frames_sent_by_server: 0,
            server_grading_ops: 0,
            answers_recorded: 0,
            returns_delivered: 0,
            completion_ms: students.iter().map(|s| (s.clone(), None)).collect(),
        };
        for e in trace {
            match e {
                TraceEvent::Frame { from, bytes, .. } => {
                    m.frames_total += 1;
                    m.bytes_total += bytes;
                    if from == SERVER_LINK {
                        m.frames_sent_by_server += 1;
                    }
                }
                TraceEvent::Graded { ops, .. } => m.server_grading_ops += ops,
                TraceEvent::Answered { .. } => m.answers_recorded += 1,
                TraceEvent::Ingested { at, student } => {
                    m.returns_delivered += 1;
                    m.completion_ms.insert(student.clone(), Some(*at));
                }
                TraceEvent::GaveUp { .. } => {}
            }
        }
        m
    }

    pub fn to_canonical(&self) -> Vec<u8> {
        canonical::to_bytes(self)
    }
}

/// Everything a campaign produced.
#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub metrics: CampaignMetrics,
    pub results: CompiledResults,
    /// The published report, canonical.
    pub report: Vec<u8>,
    /// The session's grade book, canonical.
    pub grade_book: Vec<u8>,
    pub trace: Vec<TraceEvent>,
}

impl CampaignOutcome {
    /// The trace as canonical JSON, one event per line.
    pub fn trace_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.trace {
            out.extend_from_slice(&canonical::to_bytes(e));
            out.push(b'\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub field: String,
    pub a: u64,
    pub b: u64,
    /// `a / b`; 1.0 when both are zero, null when only `b` is.
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub mode_a: SimMode,
    pub mode_b: SimMode,
    pub rows: Vec<ComparisonRow>,
}

impl Comparison {
    pub fn render(&self) -> String {
        let mut out = format!(
            "{:<24}{:>14}{:>14}{:>10}\n",
            "field",
            self.mode_a.as_str(),
            self.mode_b.as_str(),
            "ratio"
        );
        for r in &self.rows {
            let ratio = r.ratio.map_or_else(|| "-".to_owned(), |x| format!("{x:.3}"));
            let _ = writeln!(out, "{:<24}{:>14}{:>14}{:>10}", r.field, r.a, r.b, ratio);
        }
        out
    }
}

/// Field-by-field comparison of two campaigns of the same shape.
pub fn compare(a: &CampaignMetrics, b: &CampaignMetrics) -> Result<Comparison, SimError> {
    if a.test_id != b.test_id || a.n_students != b.n_students {
        return Err(SimError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.test_id, a.n_students, b.test_id, b.n_students
        )));
    }
    let last = |m: &CampaignMetrics| m.completion_ms.values().flatten().max().copied().unwrap_or(0);
    let fields = [
        ("frames_total", a.frames_total, b.frames_total),
        ("bytes_total", a.bytes_total, b.bytes_total),
        ("frames_sent_by_server", a.frames_sent_by_server, b.frames_sent_by_server),
        ("server_grading_ops", a.server_grading_ops, b.server_grading_ops),
        ("answers_recorded", a.answers_recorded, b.answers_recorded),
        ("returns_delivered", a.returns_delivered, b.returns_delivered),
        ("last_completion_ms", last(a), last(b)),
    ];
    let rows = fields
        .into_iter()
        .map(|(field, x, y)| ComparisonRow {
            field: field.to_owned(),
            a: x,
            b: y,
            ratio: match (x, y) {
                (0, 0) => Some(1.0),
                (_, 0) => None,
                _ => Some(x as f64 / y as f64),
            },
        })
        .collect();
    Ok(Comparison {
        mode_a: a.mode,
        mode_b: b.mode,
        rows,
    })
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("INVALID_CONFIG: {0}")]
    InvalidConfig(String),
    #[error("SHAPE_MISMATCH: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Host(#[from] HostError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

impl SimError {
    pub fn code(&self) -> &str {
        match self {
            SimError::InvalidConfig(_) => "INVALID_CONFIG",
            SimError::ShapeMismatch(_) => "SHAPE_MISMATCH",
            SimError::Server(e) => e.code(),
            SimError::Host(e) => e.code(),
            SimError::Agent(e) => e.code(),
            SimError::Wire(e) => e.code(),
        }
    }
}
