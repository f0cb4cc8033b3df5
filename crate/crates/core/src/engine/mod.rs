//! Adaptive test engine carried inside an evaluation agent.
//!
//! A test is an acyclic graph of questions. Each question lists guarded
//! transitions; after grading an answer the first guard that matches picks
//! the next question. Grading is exact-match only.

mod finalize;
mod grade;
mod graph;
mod normalize;
mod paths;
mod validate;

use thiserror::Error;

pub use finalize::{finalize, FinalResult, Percent, ResultRecord};
pub use grade::{apply_answer, check_shape, grade_answer, grading_ops_on_thread, next_question};
pub use graph::{
    Answer, AnswerPayload, Choice, EvalState, Guard, LoggedAnswer, Next, QuestionId, QuestionKind,
    QuestionNode, TestGraph, Transition,
};
pub use normalize::{normalize_text, simple_fold};
pub use paths::{enumerate_paths, PathOutcome, ORACLE_MAX_NODES};
pub use validate::{validate_graph, ValidationReport, Violation};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("SHAPE_MISMATCH on {question}: {detail}")]
    ShapeMismatch { question: QuestionId, detail: String },
    #[error("answer for {got} but current question is {expected}")]
    WrongQuestion { expected: Next, got: QuestionId },
    #[error("unknown question {0}")]
    UnknownQuestion(QuestionId),
    #[error("evaluation already reached END")]
    Terminal,
    #[error("NOT_TERMINAL: evaluation has not reached END")]
    NotTerminal,
    #[error("question {0} would be presented twice")]
    Revisit(QuestionId),
    #[error("TOO_LARGE: {nodes} nodes exceeds oracle limit {limit}")]
    TooLarge { nodes: usize, limit: usize },
}

impl EngineError {
    pub fn code(&self) -> &'static str {
        match self {
            EngineError::ShapeMismatch { .. } => "SHAPE_MISMATCH",
            EngineError::WrongQuestion { .. } => "WRONG_QUESTION",
            EngineError::UnknownQuestion(_) => "UNKNOWN_QUESTION",
            EngineError::Terminal => "TERMINAL",
            EngineError::NotTerminal => "NOT_TERMINAL",
            EngineError::Revisit(_) => "REVISIT",
            EngineError::TooLarge { .. } => "TOO_LARGE",
        }
    }
}

/// Runs a full answer sequence from the entry question.
///
/// Stops early and returns the state reached if the sequence runs out.
pub fn run(
    graph: &TestGraph,
    answers: impl IntoIterator<Item = Answer>,
) -> Result<EvalState, EngineError> {
    let mut state = EvalState::start(graph);
    for answer in answers {
        if state.is_terminal() {
            break;
        }
        state = apply_answer(graph, &state, answer)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_question_graph() -> TestGraph {
        TestGraph {
            test_id: "t".into(),
            title: "t".into(),
            entry: "q1".into(),
            nodes: vec![
                QuestionNode {
                    id: "q1".into(),
                    prompt: "capital of France".into(),
                    kind: QuestionKind::ShortText,
                    choices: vec![],
                    correct: vec!["paris".into()],
                    points: 2,
                    transitions: vec![Transition::new(Guard::Default, Next::question("q2"))],
                },
                QuestionNode {
                    id: "q2".into(),
                    prompt: "pick b".into(),
                    kind: QuestionKind::SingleChoice,
                    choices: vec![Choice::new("a", "A"), Choice::new("b", "B")],
                    correct: vec!["b".into()],
                    points: 3,
                    transitions: vec![Transition::new(Guard::Default, Next::End)],
                },
            ],
            version: 1,
        }
    }

    #[test]
    fn finalize_complete_run() {
        let g = two_question_graph();
        let st = run(
            &g,
            [
                Answer::new("q1", AnswerPayload::text(" Paris"), 10),
                Answer::new("q2", AnswerPayload::choices(["a"]), 20),
            ],
        )
        .unwrap();
        let res = finalize(&g, &st, false).unwrap();
        assert_eq!((res.raw, res.max_on_path), (2, 5));
        assert_eq!(res.percent.to_string(), "40.0");
        assert_eq!(
            res.records[0].normalized_answer,
            Some(AnswerPayload::text("paris"))
        );
    }

    #[test]
    fn finalize_requires_terminal_unless_partial() {
        let g = two_question_graph();
        let st = run(&g, [Answer::new("q1", AnswerPayload::text("paris"), 1)]).unwrap();
        assert_eq!(finalize(&g, &st, false), Err(EngineError::NotTerminal));
        let res = finalize(&g, &st, true).unwrap();
        // q2 was presented but never answered.
        assert_eq!(res.records.len(), 2);
        assert_eq!(res.records[1].points_earned, 0);
        assert_eq!(res.records[1].answered_at, None);
        assert_eq!((res.raw, res.max_on_path), (2, 5));
        assert!(res.partial);
    }

    #[test]
    fn finalize_empty_presented() {
        let g = two_question_graph();
        let st = EvalState {
            current: Next::question("q1"),
            answer_log: vec![],
            raw_score: 0,
            presented: vec![],
        };
        let res = finalize(&g, &st, true).unwrap();
        assert_eq!((res.raw, res.max_on_path), (0, 0));
        assert_eq!(res.percent, Percent::ZERO);
        assert_eq!(res.percent.to_string(), "0.0");
    }

    #[test]
    fn single_correct_is_full_percent() {
        let mut g = two_question_graph();
        g.nodes[0].transitions = vec![Transition::new(Guard::Default, Next::End)];
        g.nodes[0].points = 1;
        g.nodes.truncate(1);
        let st = run(&g, [Answer::new("q1", AnswerPayload::text("PARIS"), 0)]).unwrap();
        assert_eq!(finalize(&g, &st, false).unwrap().percent.to_string(), "100.0");
    }

    #[test]
    fn answering_after_end_is_refused() {
        let g = two_question_graph();
        let st = run(
            &g,
            [
                Answer::new("q1", AnswerPayload::text("x"), 0),
                Answer::new("q2", AnswerPayload::choices(["b"]), 0),
            ],
        )
        .unwrap();
        assert!(st.is_terminal());
        let again = apply_answer(&g, &st, Answer::new("q2", AnswerPayload::choices(["b"]), 0));
        assert_eq!(again, Err(EngineError::Terminal));
    }
}
