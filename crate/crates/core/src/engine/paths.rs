//! Exhaustive walk over every distinguishable answer outcome of a small graph.
//!
//! This is a checking oracle. It resolves guards with its own logic and
//! never calls the grading or transition code it is used to check.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::graph::{AnswerPayload, Guard, Next, QuestionId, QuestionKind, QuestionNode, TestGraph};
use super::EngineError;

pub const ORACLE_MAX_NODES: usize = 12;
const ORACLE_MAX_CHOICES: usize = 10;

/// One complete run: the representative answers given, the questions
/// presented, and the raw score reached.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathOutcome {
    pub answers: Vec<AnswerPayload>,
    pub path: Vec<QuestionId>,
    pub raw_score: u32,
}

/// Candidate answers for a node, all shape-valid, covering every way the
/// node's guards can be distinguished.
fn candidates(node: &QuestionNode) -> Vec<(AnswerPayload, bool)> {
    match node.kind {
        QuestionKind::ShortText => {
            let right = node.correct.first().cloned().unwrap_or_default();
            // A string of one more character than any accepted answer can't be accepted.
            let longest = node.correct.iter().map(|a| a.chars().count()).max().unwrap_or(0);
            let wrong = "#".repeat(longest + 1);
            vec![
                (AnswerPayload::Text(right), true),
                (AnswerPayload::Text(wrong), false),
            ]
        }
        QuestionKind::SingleChoice => node
            .choices
            .iter()
            .map(|c| {
                let correct = node.correct.len() == 1 && node.correct[0] == c.id;
                (AnswerPayload::choices([c.id.clone()]), correct)
            })
            .collect(),
        QuestionKind::MultiChoice => {
            let ids: Vec<&String> = node.choices.iter().map(|c| &c.id).collect();
            let want: BTreeSet<&String> = node.correct.iter().collect();
            (0u32..(1 << ids.len()))
                .map(|mask| {
                    let picked: BTreeSet<String> = ids
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) != 0)
                        .map(|(_, s)| (*s).clone())
                        .collect();
                    let correct = picked.len() == want.len() && picked.iter().all(|p| want.contains(p));
                    (AnswerPayload::Choices(picked), correct)
                })
                .collect()
        }
    }
}

/// Distinguishing signature of a candidate: correctness plus which
/// choice-guards it triggers. Candidates with equal signatures take the
/// same transition at any running score.
fn signature(node: &QuestionNode, payload: &AnswerPayload, correct: bool) -> (bool, Vec<bool>) {
    let choice_hits = node
        .transitions
        .iter()
        .filter_map(|t| match &t.guard {
            Guard::OnChoice(set) => Some(match payload {
                AnswerPayload::Choices(sel) => !sel.is_disjoint(set),
                AnswerPayload::Text(_) => false,
            }),
            _ => None,
        })
        .collect();
    (correct, choice_hits)
}

fn resolve(node: &QuestionNode, correct: bool, payload: &AnswerPayload, score: u32) -> Next {
    let earned = if correct { node.points } else { 0 };
    node.transitions
        .iter()
        .find(|t| match &t.guard {
            Guard::Default => true,
            Guard::OnCorrect => earned == node.points,
            Guard::OnIncorrect => earned == 0,
            Guard::OnScoreAtLeast(k) => score >= *k,
            Guard::OnChoice(set) => matches!(payload, AnswerPayload::Choices(s) if !s.is_disjoint(set)),
        })
        .map_or(Next::End, |t| t.target.clone())
}

/// Enumerates every reachable path with one representative answer per
/// outcome class at each node.
pub fn enumerate_paths(graph: &TestGraph) -> Result<Vec<PathOutcome>, EngineError> {
    if graph.nodes.len() > ORACLE_MAX_NODES
        || graph.nodes.iter().any(|n| n.choices.len() > ORACLE_MAX_CHOICES)
    {
        return Err(EngineError::TooLarge {
            nodes: graph.nodes.len(),
            limit: ORACLE_MAX_NODES,
        });
    }
    let by_id: BTreeMap<&QuestionId, &QuestionNode> =
        graph.nodes.iter().map(|n| (&n.id, n)).collect();

    let mut out = Vec::new();
    let mut stack = vec![(graph.entry.clone(), Vec::new(), vec![graph.entry.clone()], 0u32)];
    while let Some((at, answers, path, score)) = stack.pop() {
        let node = by_id
            .get(&at)
            .ok_or_else(|| EngineError::UnknownQuestion(at.clone()))?;
        let mut seen = BTreeSet::new();
        let mut branches = Vec::new();
        for (payload, correct) in candidates(node) {
            if !seen.insert(signature(node, &payload, correct)) {
                continue;
            }
            let score = score + if correct { node.points } else { 0 };
            let mut answers = answers.clone();
            let next = resolve(node, correct, &payload, score);
            answers.push(payload);
            match next {
                Next::End => out.push(PathOutcome {
                    answers,
                    path: path.clone(),
                    raw_score: score,
                }),
                Next::Question(q) => {
                    if path.contains(&q) || path.len() > graph.nodes.len() {
                        return Err(EngineError::Revisit(q));
                    }
                    let mut path = path.clone();
                    path.push(q.clone());
                    branches.push((q, answers, path, score));
                }
            }
        }
        // Reverse so the stack pops in candidate order.
        stack.extend(branches.into_iter().rev());
    }
    out.sort();
    Ok(out)
}
