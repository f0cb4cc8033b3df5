//! Mobile evaluation agents.
//!
//! A server-side teacher platform compiles an adaptive test into an
//! evaluation agent, ships the agent's snapshot to each student's host
//! platform, and collects the graded results when the agent comes home.
//! The crate holds every piece that does not need a socket: the test
//! engine, the agent model and its canonical encoding, the framed wire
//! protocol, both platforms as transport-agnostic state machines, and a
//! deterministic campaign simulator built on top of them.

pub mod agent;
pub mod canonical;
pub mod clock;
pub mod engine;
pub mod fsutil;
pub mod host;
pub mod server;
pub mod samples;
pub mod sim;
pub mod wire;

pub use agent::{
    AgentEvent, AgentId, AgentKind, AgentSnapshot, AgentState, AgentStatus, EndpointAddress,
    InstallOutcome, InstallReportEntry, SessionMode,
};
pub use engine::{
    Answer, AnswerPayload, EvalState, FinalResult, Guard, Next, Percent, QuestionId, QuestionKind,
    QuestionNode, ResultRecord, TestGraph, Transition,
};

pub use wire::{MsgType, RetryPolicy};
