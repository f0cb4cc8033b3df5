//! The Teacher Agent's platform: test repository, exam sessions, dispatch
//! bookkeeping, idempotent result ingestion, compilation and publication.

mod journal;
mod node;
mod repository;
mod results;
mod session;

use std::io;

use thiserror::Error;

use crate::agent::{AgentError, AgentId};

pub use journal::{Journal, ServerEvent, ServerState, LOG_FILE, SNAPSHOT_FILE};
pub use node::{Dispatch, NewSession, ServerConfig, ServerNode};
pub use repository::{load_test_repository, store_test, RejectedTest, TestRepository};
pub use results::{
    aggregate, compile_results, Aggregates, CompiledResults, Difficulty, MissingRow, ResultRow,
};
pub use session::{AgentEntry, ExamSession, InstallRecord, RosterEntry};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("UNKNOWN_TEST: {0}")]
    UnknownTest(String),
    #[error("EMPTY_ROSTER: a PUSH session needs at least one student")]
    EmptyRoster,
    #[error("INVALID_ROSTER: {0}")]
    InvalidRoster(String),
    #[error("INVALID_ENDPOINT: {0}")]
    InvalidEndpoint(String),
    #[error("UNKNOWN_SESSION: {0}")]
    UnknownSession(String),
    #[error("ALREADY_DISPATCHED: {0}")]
    AlreadyDispatched(String),
    #[error("NOT_PUSH: session {0} is not a PUSH session")]
    NotPush(String),
    #[error("UNKNOWN_AGENT: {0}")]
    UnknownAgent(AgentId),
    #[error("UNKNOWN_STUDENT: {0}")]
    UnknownStudent(String),
    #[error("SESSION_CLOSED: {0}")]
    SessionClosed(String),
    #[error("INVALID_AGENT: {0}")]
    InvalidAgent(String),
    #[error("BAD_MESSAGE: {0}")]
    BadMessage(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error("STORAGE_FAILURE: {0}")]
    Storage(#[from] io::Error),
    #[error("CORRUPT_LOG: {0}")]
    CorruptLog(String),
}

impl ServerError {
    pub fn code(&self) -> &'static str {
        match self {
            ServerError::UnknownTest(_) => "UNKNOWN_TEST",
            ServerError::EmptyRoster => "EMPTY_ROSTER",
            ServerError::InvalidRoster(_) => "INVALID_ROSTER",
            ServerError::InvalidEndpoint(_) => "INVALID_ENDPOINT",
            ServerError::UnknownSession(_) => "UNKNOWN_SESSION",
            ServerError::AlreadyDispatched(_) => "ALREADY_DISPATCHED",
            ServerError::NotPush(_) => "NOT_PUSH",
            ServerError::UnknownAgent(_) => "UNKNOWN_AGENT",
            ServerError::UnknownStudent(_) => "UNKNOWN_STUDENT",
            ServerError::SessionClosed(_) => "SESSION_CLOSED",
            ServerError::InvalidAgent(_) => "INVALID_AGENT",
            ServerError::BadMessage(_) => "BAD_MESSAGE",
            ServerError::Agent(e) => e.code(),
            ServerError::Storage(_) => "STORAGE_FAILURE",
            ServerError::CorruptLog(_) => "CORRUPT_LOG",
        }
    }
}
