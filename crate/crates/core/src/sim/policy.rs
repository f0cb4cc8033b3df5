use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{stream, ANSWER_STREAM};
use crate::engine::{normalize_text, AnswerPayload, QuestionKind, QuestionNode};

/// How scripted students answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum AnswerPolicy {
    AlwaysCorrect,
    AlwaysWrong,
    /// Each answer is correct with probability one half.
    Random { seed: u64 },
    /// The k-th answer a student gives is `answers[k]`; choice ids are
    /// comma separated. Past the end of the list answers are wrong.
    Scripted { answers: Vec<String> },
}

impl AnswerPolicy {
    /// Parses `always-correct`, `always-wrong`, `random[:seed]` or
    /// `scripted:a|b|c`.
    pub fn parse(s: &str, default_seed: u64) -> Option<AnswerPolicy> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name.to_ascii_lowercase().replace('_', "-").as_str(), arg) {
            ("always-correct", None) => Some(AnswerPolicy::AlwaysCorrect),
            ("always-wrong", None) => Some(AnswerPolicy::AlwaysWrong),
            ("random", None) => Some(AnswerPolicy::Random { seed: default_seed }),
            ("random", Some(a)) => a.parse().ok().map(|seed| AnswerPolicy::Random { seed }),
            ("scripted", Some(a)) => Some(AnswerPolicy::Scripted {
                answers: a.split('|').map(str::to_owned).collect(),
            }),
            _ => None,
        }
    }
}

/// The answering behaviour of one simulated student.
pub(crate) struct Student {
    policy: AnswerPolicy,
    rng: ChaCha8Rng,
    given: usize,
}

impl Student {
    /// Each student draws from its own slice of the policy's stream, so
    /// answers do not depend on how events interleave across students.
    pub fn new(policy: &AnswerPolicy, index: usize) -> Self {
        let seed = match policy {
            AnswerPolicy::Random { seed } => *seed,
            _ => 0,
        };
        let mut rng = stream(seed, ANSWER_STREAM);
        rng.set_word_pos((index as u128) << 40);
        Student {
            policy: policy.clone(),
            rng,
            given: 0,
        }
    }

    pub fn answer(&mut self, node: &QuestionNode) -> AnswerPayload {
        let k = self.given;
        self.given += 1;
        match &self.policy {
            AnswerPolicy::AlwaysCorrect => correct_answer(node),
            AnswerPolicy::AlwaysWrong => wrong_answer(node),
            AnswerPolicy::Random { .. } => {
                if self.rng.random_bool(0.5) {
                    correct_answer(node)
                } else {
                    wrong_answer(node)
                }
            }
            AnswerPolicy::Scripted { answers } => match answers.get(k) {
                Some(a) if node.kind == QuestionKind::ShortText => AnswerPayload::text(a.clone()),
                Some(a) => AnswerPayload::choices(
                    a.split(',').map(str::trim).filter(|s| !s.is_empty()),
                ),
                None => wrong_answer(node),
            },
        }
    }
}

pub fn correct_answer(node: &QuestionNode) -> AnswerPayload {
    match node.kind {
        QuestionKind::ShortText => AnswerPayload::text(node.correct[0].clone()),
        _ => AnswerPayload::choices(node.correct.iter().cloned()),
    }
}

/// A well-shaped answer that earns nothing.
pub fn wrong_answer(node: &QuestionNode) -> AnswerPayload {
    let correct: BTreeSet<&str> = node.correct.iter().map(String::as_str).collect();
    match node.kind {
        QuestionKind::ShortText => {
            let accepted: BTreeSet<String> = node.correct.iter().map(|c| normalize_text(c)).collect();
            let mut guess = String::from("no idea");
            while accepted.contains(&normalize_text(&guess)) {
                guess.push('?');
            }
            AnswerPayload::text(guess)
        }
        QuestionKind::SingleChoice => {
            let pick = node
                .choice_ids()
                .find(|c| !correct.contains(c))
                .or_else(|| node.choice_ids().next())
                .unwrap_or_default();
            AnswerPayload::choices([pick])
        }
        QuestionKind::MultiChoice => {
            if correct.is_empty() {
                AnswerPayload::choices(node.choice_ids().take(1))
            } else {
                AnswerPayload::choices(Vec::<String>::new())
            }
        }
    }
}
