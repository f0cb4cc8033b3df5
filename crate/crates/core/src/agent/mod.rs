//! Mobile agents as data.
//!
//! Every platform embeds the same engine, so migrating an agent means
//! shipping its snapshot: identity, payload, execution state and results.

mod codec;
mod lifecycle;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Answer, EvalState, FinalResult, TestGraph, ValidationReport};

pub use codec::{decode_snapshot, encode_snapshot, SNAPSHOT_SCHEMA_VERSION};
pub use lifecycle::{create_evaluation_agent, create_install_agent, step_agent, EvaluationSpec};

/// 128-bit agent identity, rendered as a lowercase hyphenated UUID.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(uuid::Uuid);

impl AgentId {
    pub fn random() -> Self {
        AgentId(uuid::Uuid::new_v4())
    }

    /// Version-4 id built from the next 16 bytes of `rng`.
    pub fn from_rng(rng: &mut impl RngCore) -> Self {
        let mut bytes = [0u8; 16];
        rng.fill_bytes(&mut bytes);
        AgentId(uuid::Builder::from_random_bytes(bytes).into_uuid())
    }

    /// Deterministic version-4 id, handy in tests and fixtures.
    pub fn from_u128(n: u128) -> Self {
        AgentId(uuid::Builder::from_random_bytes(n.to_be_bytes()).into_uuid())
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.hyphenated().fmt(f)
    }
}

impl FromStr for AgentId {
    type Err = uuid::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        uuid::Uuid::parse_str(s).map(AgentId)
    }
}

/// Source of fresh agent ids. Production uses OS randomness; simulations
/// use a seeded stream so runs are reproducible.
pub trait IdSource {
    fn next_id(&mut self) -> AgentId;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct RandomIds;

impl IdSource for RandomIds {
    fn next_id(&mut self) -> AgentId {
        AgentId::random()
    }
}

pub struct SeededIds(rand_chacha::ChaCha8Rng);

impl SeededIds {
    pub fn new(seed: u64) -> Self {
        use rand::SeedableRng;
        SeededIds(rand_chacha::ChaCha8Rng::seed_from_u64(seed))
    }
}

impl IdSource for SeededIds {
    fn next_id(&mut self) -> AgentId {
        AgentId::from_rng(&mut self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AgentKind {
    Evaluation,
    Install,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AgentStatus {
    Created,
    InTransit,
    Executing,
    Returning,
    Completed,
    /// Server-side bookkeeping only: the agent never came back.
    Expired,
}

impl AgentStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentStatus::Created => "CREATED",
            AgentStatus::InTransit => "IN_TRANSIT",
            AgentStatus::Executing => "EXECUTING",
            AgentStatus::Returning => "RETURNING",
            AgentStatus::Completed => "COMPLETED",
            AgentStatus::Expired => "EXPIRED",
        }
    }
}

impl fmt::Display for AgentStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Teacher-initiated exam or student-initiated self-assessment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionMode {
    Push,
    Pull,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndpointAddress {
    pub host: String,
    pub port: u16,
}

impl EndpointAddress {
    pub fn new(host: impl Into<String>, port: u16) -> Self {
        EndpointAddress {
            host: host.into(),
            port,
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.host.is_empty() && self.port != 0
    }
}

impl fmt::Display for EndpointAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.host, self.port)
    }
}

impl FromStr for EndpointAddress {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (host, port) = s
            .rsplit_once(':')
            .ok_or_else(|| format!("expected host:port, got {s:?}"))?;
        let port: u16 = port.parse().map_err(|_| format!("bad port in {s:?}"))?;
        let addr = EndpointAddress::new(host, port);
        if !addr.is_valid() {
            return Err(format!("invalid endpoint {s:?}"));
        }
        Ok(addr)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InstallOutcome {
    Applied,
    Skipped,
}

/// One hop of an install agent's itinerary, as recorded by whoever handled it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstallReportEntry {
    pub host: EndpointAddress,
    pub outcome: InstallOutcome,
    /// Config version on the host after applying; absent when skipped.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub applied_at: Option<u64>,
}

impl InstallReportEntry {
    pub fn applied(host: EndpointAddress, version: u64, applied_at: u64) -> Self {
        InstallReportEntry {
            host,
            outcome: InstallOutcome::Applied,
            version: Some(version),
            applied_at: Some(applied_at),
        }
    }

    pub fn skipped(host: EndpointAddress) -> Self {
        InstallReportEntry {
            host,
            outcome: InstallOutcome::Skipped,
            version: None,
            applied_at: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentState {
    Evaluation(EvalState),
    Install(Vec<InstallReportEntry>),
}

/// The whole of a mobile agent. Migration is the transfer of this value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSnapshot {
    pub agent_id: AgentId,
    pub kind: AgentKind,
    pub session_id: String,
    /// Empty for install agents.
    pub student_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<SessionMode>,
    pub home: EndpointAddress,
    pub itinerary: Vec<EndpointAddress>,
    pub hop_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<TestGraph>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_payload: Option<BTreeMap<String, String>>,
    pub state: AgentState,
    pub deadline: u64,
    pub status: AgentStatus,
    pub partial: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<FinalResult>,
    pub seq: u64,
    pub schema: u32,
}

impl AgentSnapshot {
    pub fn eval_state(&self) -> Option<&EvalState> {
        match &self.state {
            AgentState::Evaluation(s) => Some(s),
            AgentState::Install(_) => None,
        }
    }

    pub fn install_report(&self) -> Option<&[InstallReportEntry]> {
        match &self.state {
            AgentState::Install(r) => Some(r),
            AgentState::Evaluation(_) => None,
        }
    }

    /// Endpoint the agent should be at (or travelling to) for its current hop.
    pub fn current_hop(&self) -> Option<&EndpointAddress> {
        self.itinerary.get(self.hop_index as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AgentEvent {
    Dispatched,
    Arrived,
    AnswerRecorded(Answer),
    DeadlineReached,
    HopDone(InstallReportEntry),
    EvalDone,
    ReturnAcked,
}

impl AgentEvent {
    pub fn name(&self) -> &'static str {
        match self {
            AgentEvent::Dispatched => "DISPATCHED",
            AgentEvent::Arrived => "ARRIVED",
            AgentEvent::AnswerRecorded(_) => "ANSWER_RECORDED",
            AgentEvent::DeadlineReached => "DEADLINE_REACHED",
            AgentEvent::HopDone(_) => "HOP_DONE",
            AgentEvent::EvalDone => "EVAL_DONE",
            AgentEvent::ReturnAcked => "RETURN_ACKED",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("INVALID_GRAPH: {0}")]
    InvalidGraph(ValidationReport),
    #[error("EMPTY_ITINERARY")]
    EmptyItinerary,
    #[error("ILLEGAL_TRANSITION({status}, {event})")]
    IllegalTransition {
        status: AgentStatus,
        event: &'static str,
    },
    #[error(transparent)]
    Engine(#[from] crate::engine::EngineError),
}

impl AgentError {
    pub fn code(&self) -> &'static str {
        match self {
            AgentError::InvalidGraph(_) => "INVALID_GRAPH",
            AgentError::EmptyItinerary => "EMPTY_ITINERARY",
            AgentError::IllegalTransition { .. } => "ILLEGAL_TRANSITION",
            AgentError::Engine(e) => e.code(),
        }
    }
}
