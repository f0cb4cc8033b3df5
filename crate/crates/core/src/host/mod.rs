//! The Student Agent's platform: accepts evaluation agents, runs them one
//! answer at a time behind a question-only view, and sends them home.
//! Install agents are applied on arrival and passed along their itinerary.

mod platform;
mod view;

use std::io;

use thiserror::Error;

use crate::agent::{AgentError, AgentId};
use crate::engine::{EngineError, QuestionId};

pub use platform::{AgentRecord, AppliedConfig, HostPlatform, Outbound};
pub use view::{ExamStatus, ExamSummary, ExamView, QuestionView};

#[derive(Debug, Error)]
pub enum HostError {
    #[error("UNKNOWN_AGENT: {0}")]
    UnknownAgent(AgentId),
    #[error("DUPLICATE_AGENT: {0}")]
    DuplicateAgent(AgentId),
    #[error("WRONG_HOP: agent is for {expected}, this is {here}")]
    WrongHop { expected: String, here: String },
    #[error("DEADLINE_PASSED: {0}")]
    DeadlinePassed(AgentId),
    #[error("WRONG_QUESTION: current question is {expected}, got {got}")]
    WrongQuestion { expected: QuestionId, got: QuestionId },
    #[error("TERMINAL: agent {0} has finished")]
    Finished(AgentId),
    #[error("NO_ACTIVE_EXAM")]
    NoActiveExam,
    #[error(transparent)]
    Engine(EngineError),
    #[error(transparent)]
    Agent(AgentError),
    #[error("STORAGE_FAILURE: {0}")]
    Storage(#[from] io::Error),
    #[error("CORRUPT_STATE: {0}")]
    Corrupt(String),
    #[error("BAD_MESSAGE: {0}")]
    BadMessage(String),
    #[error("INJECTED_CRASH")]
    InjectedCrash,
}

impl HostError {
    pub fn code(&self) -> &'static str {
        match self {
            HostError::UnknownAgent(_) => "UNKNOWN_AGENT",
            HostError::DuplicateAgent(_) => "DUPLICATE_AGENT",
            HostError::WrongHop { .. } => "WRONG_HOP",
            HostError::DeadlinePassed(_) => "DEADLINE_PASSED",
            HostError::WrongQuestion { .. } => "WRONG_QUESTION",
            HostError::Finished(_) => "TERMINAL",
            HostError::NoActiveExam => "NO_ACTIVE_EXAM",
            HostError::Engine(e) => e.code(),
            HostError::Agent(e) => e.code(),
            HostError::Storage(_) => "STORAGE_FAILURE",
            HostError::Corrupt(_) => "CORRUPT_STATE",
            HostError::BadMessage(_) => "BAD_MESSAGE",
            HostError::InjectedCrash => "INJECTED_CRASH",
        }
    }
}
