use std::collections::BTreeSet;

use super::graph::{
    Answer, AnswerPayload, EvalState, Guard, LoggedAnswer, Next, QuestionKind, QuestionNode,
    TestGraph,
};
use super::normalize::normalize_text;
use super::EngineError;

thread_local! {
    static GRADING_OPS: std::cell::Cell<u64> = const { std::cell::Cell::new(0) };
}

/// Number of `grade_answer` calls made on the current thread so far.
///
/// Callers measure a component's grading work as the difference across a
/// call into it.
pub fn grading_ops_on_thread() -> u64 {
    GRADING_OPS.with(|c| c.get())
}

/// Checks that the payload has the shape the question kind requires.
///
/// Single choice takes exactly one known choice id; multi choice any subset
/// of known ids; short text a string.
pub fn check_shape(node: &QuestionNode, payload: &AnswerPayload) -> Result<(), EngineError> {
    let mismatch = |detail: &str| EngineError::ShapeMismatch {
        question: node.id.clone(),
        detail: detail.to_owned(),
    };
    match (node.kind, payload) {
        (QuestionKind::ShortText, AnswerPayload::Text(_)) => Ok(()),
        (QuestionKind::ShortText, AnswerPayload::Choices(_)) => {
            Err(mismatch("short text question answered with choices"))
        }
        (_, AnswerPayload::Text(_)) => Err(mismatch("choice question answered with text")),
        (kind, AnswerPayload::Choices(selected)) => {
            if kind == QuestionKind::SingleChoice && selected.len() != 1 {
                return Err(mismatch("single choice needs exactly one selection"));
            }
            let known: BTreeSet<&str> = node.choice_ids().collect();
            match selected.iter().find(|s| !known.contains(s.as_str())) {
                Some(_) => Err(mismatch("unknown choice id")),
                None => Ok(()),
            }
        }
    }
}

/// Points earned for one answer. Exact match only: either full points or zero.
pub fn grade_answer(node: &QuestionNode, answer: &Answer) -> Result<u32, EngineError> {
    if answer.question_id != node.id {
        return Err(EngineError::WrongQuestion {
            expected: Next::Question(node.id.clone()),
            got: answer.question_id.clone(),
        });
    }
    check_shape(node, &answer.payload)?;
    GRADING_OPS.with(|c| c.set(c.get() + 1));
    let correct = match &answer.payload {
        AnswerPayload::Choices(selected) => {
            let expected: BTreeSet<&str> = node.correct_set();
            selected.len() == expected.len()
                && selected.iter().all(|s| expected.contains(s.as_str()))
        }
        AnswerPayload::Text(raw) => {
            let norm = normalize_text(raw);
            node.correct.contains(&norm)
        }
    };
    Ok(if correct { node.points } else { 0 })
}

/// Selects the next question: the first transition whose guard matches.
///
/// `state.raw_score` must already include `points_earned`.
pub fn next_question(
    node: &QuestionNode,
    state: &EvalState,
    answer: &Answer,
    points_earned: u32,
) -> Next {
    for t in &node.transitions {
        let hit = match &t.guard {
            Guard::OnCorrect => points_earned == node.points,
            Guard::OnIncorrect => points_earned == 0,
            Guard::OnChoice(set) => match &answer.payload {
                AnswerPayload::Choices(selected) => selected.iter().any(|s| set.contains(s)),
                AnswerPayload::Text(_) => false,
            },
            Guard::OnScoreAtLeast(threshold) => state.raw_score >= *threshold,
            Guard::Default => true,
        };
        if hit {
            return t.target.clone();
        }
    }
    // Unreachable on a validated graph; a graph without a Default ends here.
    Next::End
}

/// Grades `answer` against the current question and returns the advanced state.
pub fn apply_answer(
    graph: &TestGraph,
    state: &EvalState,
    answer: Answer,
) -> Result<EvalState, EngineError> {
    let current = match &state.current {
        Next::Question(q) => q,
        Next::End => return Err(EngineError::Terminal),
    };
    if &answer.question_id != current {
        return Err(EngineError::WrongQuestion {
            expected: state.current.clone(),
            got: answer.question_id,
        });
    }
    let node = graph
        .node(current)
        .ok_or_else(|| EngineError::UnknownQuestion(current.clone()))?;
    let points = grade_answer(node, &answer)?;

    let mut next_state = state.clone();
    next_state.raw_score += points;
    let next = next_question(node, &next_state, &answer, points);
    if let Next::Question(q) = &next {
        if next_state.presented.contains(q) {
            return Err(EngineError::Revisit(q.clone()));
        }
        next_state.presented.push(q.clone());
    }
    next_state.current = next;
    next_state.answer_log.push(LoggedAnswer {
        answer,
        points_earned: points,
    });
    Ok(next_state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::graph::{Choice, Transition};

    fn node(kind: QuestionKind, correct: &[&str], points: u32) -> QuestionNode {
        let choices = if kind.is_choice() {
            ["a", "b", "c"].iter().map(|c| Choice::new(*c, c.to_uppercase())).collect()
        } else {
            vec![]
        };
        QuestionNode {
            id: "q".into(),
            prompt: "?".into(),
            kind,
            choices,
            correct: correct.iter().map(|s| s.to_string()).collect(),
            points,
            transitions: vec![
                Transition::new(Guard::OnCorrect, Next::question("q2")),
                Transition::new(Guard::Default, Next::question("q3")),
            ],
        }
    }

    fn answer(payload: AnswerPayload) -> Answer {
        Answer::new("q", payload, 0)
    }

    #[test]
    fn single_choice_exact_match() {
        let n = node(QuestionKind::SingleChoice, &["b"], 2);
        assert_eq!(grade_answer(&n, &answer(AnswerPayload::choices(["b"]))).unwrap(), 2);
        assert_eq!(grade_answer(&n, &answer(AnswerPayload::choices(["a"]))).unwrap(), 0);
    }

    #[test]
    fn multi_choice_has_no_partial_credit() {
        let n = node(QuestionKind::MultiChoice, &["a", "c"], 3);
        assert_eq!(grade_answer(&n, &answer(AnswerPayload::choices(["a"]))).unwrap(), 0);
        assert_eq!(
            grade_answer(&n, &answer(AnswerPayload::choices(["a", "b", "c"]))).unwrap(),
            0
        );
        assert_eq!(
            grade_answer(&n, &answer(AnswerPayload::choices(["c", "a"]))).unwrap(),
            3
        );
    }

    #[test]
    fn short_text_is_normalized_before_compare() {
        let n = node(QuestionKind::ShortText, &["paris"], 1);
        assert_eq!(grade_answer(&n, &answer(AnswerPayload::text("  PARIS "))).unwrap(), 1);
        assert_eq!(grade_answer(&n, &answer(AnswerPayload::text("pari s"))).unwrap(), 0);
    }

    #[test]
    fn shape_mismatches() {
        let single = node(QuestionKind::SingleChoice, &["b"], 1);
        let text = node(QuestionKind::ShortText, &["x"], 1);
        for (n, p) in [
            (&single, AnswerPayload::text("b")),
            (&single, AnswerPayload::choices(["a", "b"])),
            (&single, AnswerPayload::choices(["z"])),
            (&text, AnswerPayload::choices(["a"])),
        ] {
            assert!(matches!(
                grade_answer(n, &answer(p)),
                Err(EngineError::ShapeMismatch { .. })
            ));
        }
    }

    #[test]
    fn first_matching_transition_wins() {
        let n = node(QuestionKind::SingleChoice, &["b"], 2);
        let st = EvalState {
            current: Next::question("q"),
            answer_log: vec![],
            raw_score: 2,
            presented: vec!["q".into()],
        };
        let a = answer(AnswerPayload::choices(["b"]));
        assert_eq!(next_question(&n, &st, &a, 2), Next::question("q2"));
        assert_eq!(next_question(&n, &st, &a, 0), Next::question("q3"));
    }

    #[test]
    fn score_threshold_and_choice_guards() {
        let mut n = node(QuestionKind::MultiChoice, &["a"], 1);
        n.transitions = vec![
            Transition::new(Guard::OnChoice(["c".to_string()].into()), Next::question("qc")),
            Transition::new(Guard::OnScoreAtLeast(3), Next::question("qHard")),
            Transition::new(Guard::Default, Next::question("qEasy")),
        ];
        let mut st = EvalState {
            current: Next::question("q"),
            answer_log: vec![],
            raw_score: 3,
            presented: vec!["q".into()],
        };
        let a = answer(AnswerPayload::choices(["a"]));
        assert_eq!(next_question(&n, &st, &a, 1), Next::question("qHard"));
        st.raw_score = 2;
        assert_eq!(next_question(&n, &st, &a, 1), Next::question("qEasy"));
        let b = answer(AnswerPayload::choices(["b", "c"]));
        assert_eq!(next_question(&n, &st, &b, 0), Next::question("qc"));
    }
}
