use serde::{Deserialize, Serialize};

use crate::agent::{AgentId, AgentSnapshot, AgentStatus, SessionMode};
use crate::engine::{Choice, FinalResult, Next, QuestionId, QuestionKind};

/// What the student sees of one question. Carries no answer key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionView {
    pub agent_id: AgentId,
    pub question_id: QuestionId,
    pub prompt: String,
    pub kind: QuestionKind,
    pub choices: Vec<Choice>,
    pub points: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum ExamView {
    Question { question: QuestionView },
    Terminal { agent_id: AgentId, partial: bool },
}

impl ExamView {
    pub fn of(snapshot: &AgentSnapshot) -> Option<ExamView> {
        let state = snapshot.eval_state()?;
        let graph = snapshot.graph.as_ref()?;
        let terminal = ExamView::Terminal {
            agent_id: snapshot.agent_id,
            partial: snapshot.partial,
        };
        if snapshot.status != AgentStatus::Executing {
            return Some(terminal);
        }
        match &state.current {
            Next::End => Some(terminal),
            Next::Question(q) => {
                let node = graph.node(q)?;
                Some(ExamView::Question {
                    question: QuestionView {
                        agent_id: snapshot.agent_id,
                        question_id: node.id.clone(),
                        prompt: node.prompt.clone(),
                        kind: node.kind,
                        choices: node.choices.clone(),
                        points: node.points,
                    },
                })
            }
        }
    }
}

/// Summary of the exam a host is running, for `GET /exam`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExamSummary {
    pub agent_id: AgentId,
    pub session_id: String,
    pub student_id: String,
    pub test_id: String,
    pub title: String,
    pub mode: Option<SessionMode>,
    pub status: AgentStatus,
    pub deadline: u64,
    /// Present for self-assessments once the agent has finished.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub results: Option<FinalResult>,
}

/// Progress numbers for `GET /exam/status`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExamStatus {
    pub agent_id: AgentId,
    pub status: AgentStatus,
    pub deadline: u64,
    pub remaining_ms: u64,
    pub answered: u32,
    pub presented: u32,
    pub partial: bool,
}

impl ExamSummary {
    pub fn of(snapshot: &AgentSnapshot) -> Option<ExamSummary> {
        let graph = snapshot.graph.as_ref()?;
        let finished = matches!(
            snapshot.status,
            AgentStatus::Returning | AgentStatus::Completed
        );
        Some(ExamSummary {
            agent_id: snapshot.agent_id,
            session_id: snapshot.session_id.clone(),
            student_id: snapshot.student_id.clone(),
            test_id: graph.test_id.clone(),
            title: graph.title.clone(),
            mode: snapshot.mode,
            status: snapshot.status,
            deadline: snapshot.deadline,
            results: if finished && snapshot.mode == Some(SessionMode::Pull) {
                snapshot.results.clone()
            } else {
                None
            },
        })
    }
}

impl ExamStatus {
    pub fn of(snapshot: &AgentSnapshot, now: u64) -> Option<ExamStatus> {
        let state = snapshot.eval_state()?;
        Some(ExamStatus {
            agent_id: snapshot.agent_id,
            status: snapshot.status,
            deadline: snapshot.deadline,
            remaining_ms: snapshot.deadline.saturating_sub(now),
            answered: state.answer_log.len() as u32,
            presented: state.presented.len() as u32,
            partial: snapshot.partial,
        })
    }
}
