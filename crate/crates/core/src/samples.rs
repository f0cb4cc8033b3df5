//! Built-in tests used by the simulator, the daemons' `--builtin-tests`
//! flag and the test suites.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::engine::{Choice, Guard, Next, QuestionId, QuestionKind, QuestionNode, TestGraph, Transition};

/// Accepted answer of every question in [`linear_test`].
pub const LINEAR_ANSWER: &str = "42";

/// `q` short-text questions in a chain, one point each.
pub fn linear_test(test_id: &str, q: usize) -> TestGraph {
    let q = q.max(1);
    let nodes = (1..=q)
        .map(|i| {
            let target = if i == q {
                Next::End
            } else {
                Next::question(format!("q{}", i + 1))
            };
            QuestionNode {
                id: QuestionId::new(format!("q{i}")),
                prompt: format!("Question {i}: what is six times seven?"),
                kind: QuestionKind::ShortText,
                choices: vec![],
                correct: vec![LINEAR_ANSWER.into()],
                points: 1,
                transitions: vec![Transition::new(Guard::Default, target)],
            }
        })
        .collect();
    TestGraph {
        test_id: test_id.into(),
        title: format!("Linear test with {q} questions"),
        entry: "q1".into(),
        nodes,
        version: 1,
    }
}

/// Parses `linear-<Q>` into a linear test.
pub fn builtin(test_id: &str) -> Option<TestGraph> {
    if test_id == "adaptive" {
        return Some(adaptive_test());
    }
    let q: usize = test_id.strip_prefix("linear-")?.parse().ok()?;
    (1..=1000).contains(&q).then(|| linear_test(test_id, q))
}

/// Three questions on every path; the second depends on the first.
pub fn adaptive_test() -> TestGraph {
    let choice = |id: &str, text: &str| Choice::new(id, text);
    TestGraph {
        test_id: "adaptive".into(),
        title: "Adaptive sample".into(),
        entry: "q1".into(),
        nodes: vec![
            QuestionNode {
                id: "q1".into(),
                prompt: "Which planet is closest to the sun?".into(),
                kind: QuestionKind::SingleChoice,
                choices: vec![choice("a", "Mercury"), choice("b", "Venus"), choice("c", "Mars")],
                correct: vec!["a".into()],
                points: 1,
                transitions: vec![
                    Transition::new(Guard::OnCorrect, Next::question("hard")),
                    Transition::new(Guard::Default, Next::question("easy")),
                ],
            },
            QuestionNode {
                id: "hard".into(),
                prompt: "Select every gas giant.".into(),
                kind: QuestionKind::MultiChoice,
                choices: vec![
                    choice("j", "Jupiter"),
                    choice("s", "Saturn"),
                    choice("e", "Earth"),
                ],
                correct: vec!["j".into(), "s".into()],
                points: 3,
                transitions: vec![Transition::new(Guard::Default, Next::question("last"))],
            },
            QuestionNode {
                id: "easy".into(),
                prompt: "Name the planet we live on.".into(),
                kind: QuestionKind::ShortText,
                choices: vec![],
                correct: vec!["earth".into()],
                points: 1,
                transitions: vec![Transition::new(Guard::Default, Next::question("last"))],
            },
            QuestionNode {
                id: "last".into(),
                prompt: "What star does the earth orbit?".into(),
                kind: QuestionKind::ShortText,
                choices: vec![],
                correct: vec!["the sun".into(), "sun".into()],
                points: 2,
                transitions: vec![Transition::new(Guard::Default, Next::End)],
            },
        ],
        version: 1,
    }
}

/// A valid acyclic test of `1..=max_nodes` questions with every guard kind.
///
/// Node `qi` only points at later nodes or END, and its default transition
/// goes to `q(i+1)`, so every node is reachable.
pub fn random_graph(rng: &mut impl Rng, max_nodes: usize) -> TestGraph {
    const WORDS: [&str; 6] = ["alpha", "beta", "gamma delta", "épée", "straße", "日本"];
    let n = rng.random_range(1..=max_nodes.max(1));
    let mut nodes = Vec::with_capacity(n);
    let mut total = 0;
    for i in 0..n {
        let kind = *[
            QuestionKind::SingleChoice,
            QuestionKind::MultiChoice,
            QuestionKind::ShortText,
        ]
        .choose(rng)
        .expect("non-empty");
        let points = rng.random_range(1..=3);
        total += points;
        let choices: Vec<Choice> = if kind.is_choice() {
            (0..rng.random_range(2..=4))
                .map(|c| Choice::new(format!("c{c}"), format!("option {c}")))
                .collect()
        } else {
            Vec::new()
        };
        let pick_set = |rng: &mut dyn rand::RngCore| -> BTreeSet<String> {
            let mut set: BTreeSet<String> = choices
                .iter()
                .filter(|_| rng.random_bool(0.5))
                .map(|c| c.id.clone())
                .collect();
            if set.is_empty() {
                set.insert(choices.choose(rng).expect("choices").id.clone());
            }
            set
        };
        let correct: Vec<String> = match kind {
            QuestionKind::SingleChoice => vec![choices.choose(rng).expect("choices").id.clone()],
            QuestionKind::MultiChoice => pick_set(rng).into_iter().collect(),
            QuestionKind::ShortText => {
                let mut c: Vec<String> = WORDS
                    .iter()
                    .filter(|_| rng.random_bool(0.3))
                    .map(|w| w.to_string())
                    .collect();
                if c.is_empty() {
                    c.push(WORDS.choose(rng).expect("words").to_string());
                }
                c
            }
        };
        let target = |rng: &mut dyn rand::RngCore| -> Next {
            let j = rng.random_range(i + 1..=n);
            if j == n {
                Next::End
            } else {
                Next::question(format!("q{j}"))
            }
        };
        let mut transitions = Vec::new();
        for _ in 0..rng.random_range(0..=2) {
            let guard = match rng.random_range(0..4) {
                0 => Guard::OnCorrect,
                1 => Guard::OnIncorrect,
                2 => Guard::OnScoreAtLeast(rng.random_range(0..=total)),
                _ if kind.is_choice() => Guard::OnChoice(pick_set(rng)),
                _ => Guard::OnCorrect,
            };
            transitions.push(Transition::new(guard, target(rng)));
        }
        let default = if i + 1 == n {
            Next::End
        } else {
            Next::question(format!("q{}", i + 1))
        };
        transitions.push(Transition::new(Guard::Default, default));
        nodes.push(QuestionNode {
            id: QuestionId::new(format!("q{i}")),
            prompt: format!("Question {i}"),
            kind,
            choices,
            correct,
            points,
            transitions,
        });
    }
    TestGraph {
        test_id: "random".into(),
        title: "Generated test".into(),
        entry: "q0".into(),
        nodes,
        version: 1,
    }
}
