use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::graph::{Guard, Next, QuestionId, QuestionKind, TestGraph};
use super::normalize::is_normalized;

/// One broken rule, naming the offending node(s).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Violation {
    BadVersion { version: u32 },
    MissingEntry { entry: QuestionId },
    DuplicateId { node: QuestionId },
    DanglingTarget { node: QuestionId, target: QuestionId },
    Unreachable { node: QuestionId },
    Cycle { nodes: Vec<QuestionId> },
    MissingDefault { node: QuestionId },
    /// A `Default` guard somewhere other than the last slot, or more than one.
    MisplacedDefault { node: QuestionId },
    ZeroPoints { node: QuestionId },
    BadChoices { node: QuestionId, detail: String },
    BadCorrect { node: QuestionId, detail: String },
    ChoiceGuardOnText { node: QuestionId },
    UnknownGuardChoice { node: QuestionId, choice: String },
}

impl Violation {
    pub fn code(&self) -> &'static str {
        match self {
            Violation::BadVersion { .. } => "BAD_VERSION",
            Violation::MissingEntry { .. } => "MISSING_ENTRY",
            Violation::DuplicateId { .. } => "DUPLICATE_ID",
            Violation::DanglingTarget { .. } => "DANGLING_TARGET",
            Violation::Unreachable { .. } => "UNREACHABLE",
            Violation::Cycle { .. } => "CYCLE",
            Violation::MissingDefault { .. } => "MISSING_DEFAULT",
            Violation::MisplacedDefault { .. } => "MISPLACED_DEFAULT",
            Violation::ZeroPoints { .. } => "ZERO_POINTS",
            Violation::BadChoices { .. } => "BAD_CHOICES",
            Violation::BadCorrect { .. } => "BAD_CORRECT",
            Violation::ChoiceGuardOnText { .. } => "CHOICE_GUARD_ON_TEXT",
            Violation::UnknownGuardChoice { .. } => "UNKNOWN_GUARD_CHOICE",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BadVersion { version } => write!(f, "BAD_VERSION({version})"),
            Violation::MissingEntry { entry } => write!(f, "MISSING_ENTRY({entry})"),
            Violation::DuplicateId { node } => write!(f, "DUPLICATE_ID({node})"),
            Violation::DanglingTarget { node, target } => {
                write!(f, "DANGLING_TARGET({node}->{target})")
            }
            Violation::Unreachable { node } => write!(f, "UNREACHABLE({node})"),
            Violation::Cycle { nodes } => {
                let ids: Vec<&str> = nodes.iter().map(QuestionId::as_str).collect();
                write!(f, "CYCLE({})", ids.join(","))
            }
            Violation::MissingDefault { node } => write!(f, "MISSING_DEFAULT({node})"),
            Violation::MisplacedDefault { node } => write!(f, "MISPLACED_DEFAULT({node})"),
            Violation::ZeroPoints { node } => write!(f, "ZERO_POINTS({node})"),
            Violation::BadChoices { node, detail } => write!(f, "BAD_CHOICES({node}: {detail})"),
            Violation::BadCorrect { node, detail } => write!(f, "BAD_CORRECT({node}: {detail})"),
            Violation::ChoiceGuardOnText { node } => write!(f, "CHOICE_GUARD_ON_TEXT({node})"),
            Violation::UnknownGuardChoice { node, choice } => {
                write!(f, "UNKNOWN_GUARD_CHOICE({node}: {choice})")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, code: &str) -> bool {
        self.violations.iter().any(|v| v.code() == code)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Checks every structural and per-node rule of a test graph.
///
/// Violations are collected rather than returned as errors so a caller can
/// report all of them at once.
pub fn validate_graph(graph: &TestGraph) -> ValidationReport {
    let mut out = Vec::new();

    if graph.version < 1 {
        out.push(Violation::BadVersion {
            version: graph.version,
        });
    }

    let mut index: BTreeMap<&QuestionId, usize> = BTreeMap::new();
    for (i, node) in graph.nodes.iter().enumerate() {
        if index.insert(&node.id, i).is_some() {
            out.push(Violation::DuplicateId {
                node: node.id.clone(),
            });
        }
    }

    if !index.contains_key(&graph.entry) {
        out.push(Violation::MissingEntry {
            entry: graph.entry.clone(),
        });
    }

    for node in &graph.nodes {
        check_node(node, &mut out);
        for t in &node.transitions {
            if let Next::Question(target) = &t.target {
                if !index.contains_key(target) {
                    out.push(Violation::DanglingTarget {
                        node: node.id.clone(),
                        target: target.clone(),
                    });
                }
            }
        }
    }

    if index.contains_key(&graph.entry) {
        check_reachability(graph, &index, &mut out);
    }
    check_cycles(graph, &index, &mut out);

    out.sort();
    out.dedup();
    ValidationReport { violations: out }
}

fn check_node(node: &super::graph::QuestionNode, out: &mut Vec<Violation>) {
    let id = || node.id.clone();

    if node.points < 1 {
        out.push(Violation::ZeroPoints { node: id() });
    }

    match node.transitions.iter().rposition(|t| t.guard == Guard::Default) {
        None => out.push(Violation::MissingDefault { node: id() }),
        Some(pos) => {
            let defaults = node
                .transitions
                .iter()
                .filter(|t| t.guard == Guard::Default)
                .count();
            if pos + 1 != node.transitions.len() || defaults != 1 {
                out.push(Violation::MisplacedDefault { node: id() });
            }
        }
    }

    let choice_ids: BTreeSet<&str> = node.choice_ids().collect();
    match node.kind {
        QuestionKind::SingleChoice | QuestionKind::MultiChoice => {
            if node.choices.len() < 2 {
                out.push(Violation::BadChoices {
                    node: id(),
                    detail: "fewer than 2 choices".into(),
                });
            }
            if choice_ids.len() != node.choices.len() {
                out.push(Violation::BadChoices {
                    node: id(),
                    detail: "duplicate choice id".into(),
                });
            }
            let correct = node.correct_set();
            if correct.len() != node.correct.len() {
                out.push(Violation::BadCorrect {
                    node: id(),
                    detail: "duplicate correct choice".into(),
                });
            }
            if let Some(unknown) = correct.iter().find(|c| !choice_ids.contains(*c)) {
                out.push(Violation::BadCorrect {
                    node: id(),
                    detail: format!("unknown choice {unknown}"),
                });
            }
            let expected_ok = match node.kind {
                QuestionKind::SingleChoice => correct.len() == 1,
                _ => !correct.is_empty(),
            };
            if !expected_ok {
                out.push(Violation::BadCorrect {
                    node: id(),
                    detail: format!("{} correct choices", correct.len()),
                });
            }
            for t in &node.transitions {
                if let Guard::OnChoice(set) = &t.guard {
                    for c in set {
                        if !choice_ids.contains(c.as_str()) {
                            out.push(Violation::UnknownGuardChoice {
                                node: id(),
                                choice: c.clone(),
                            });
                        }
                    }
                }
            }
        }
        QuestionKind::ShortText => {
            if !node.choices.is_empty() {
                out.push(Violation::BadChoices {
                    node: id(),
                    detail: "short text question with choices".into(),
                });
            }
            if node.correct.is_empty() {
                out.push(Violation::BadCorrect {
                    node: id(),
                    detail: "no accepted answers".into(),
                });
            }
            for accepted in &node.correct {
                if accepted.is_empty() || !is_normalized(accepted) {
                    out.push(Violation::BadCorrect {
                        node: id(),
                        detail: format!("accepted answer {accepted:?} is not normalized"),
                    });
                }
            }
            if node
                .transitions
                .iter()
                .any(|t| matches!(t.guard, Guard::OnChoice(_)))
            {
                out.push(Violation::ChoiceGuardOnText { node: id() });
            }
        }
    }
}

fn successors<'a>(
    graph: &'a TestGraph,
    index: &BTreeMap<&QuestionId, usize>,
    at: usize,
) -> impl Iterator<Item = usize> + 'a {
    let targets: Vec<usize> = graph.nodes[at]
        .transitions
        .iter()
        .filter_map(|t| t.target.as_question())
        .filter_map(|q| index.get(q).copied())
        .collect();
    targets.into_iter()
}

fn check_reachability(
    graph: &TestGraph,
    index: &BTreeMap<&QuestionId, usize>,
    out: &mut Vec<Violation>,
) {
    let mut seen = vec![false; graph.nodes.len()];
    let mut stack = vec![index[&graph.entry]];
    while let Some(at) = stack.pop() {
        if std::mem::replace(&mut seen[at], true) {
            continue;
        }
        stack.extend(successors(graph, index, at));
    }
    for (i, node) in graph.nodes.iter().enumerate() {
        // Duplicates resolve to the first index and are reported separately.
        if !seen[i] && index.get(&node.id) == Some(&i) {
            out.push(Violation::Unreachable {
                node: node.id.clone(),
            });
        }
    }
}

fn check_cycles(graph: &TestGraph, index: &BTreeMap<&QuestionId, usize>, out: &mut Vec<Violation>) {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        OnPath,
        Done,
    }
    let n = graph.nodes.len();
    let mut mark = vec![Mark::New; n];
    let mut path: Vec<usize> = Vec::new();

    fn visit(
        at: usize,
        graph: &TestGraph,
        index: &BTreeMap<&QuestionId, usize>,
        mark: &mut [Mark],
        path: &mut Vec<usize>,
        out: &mut Vec<Violation>,
    ) {
        mark[at] = Mark::OnPath;
        path.push(at);
        for next in successors(graph, index, at) {
            match mark[next] {
                Mark::New => visit(next, graph, index, mark, path, out),
                Mark::OnPath => {
                    let start = path.iter().position(|&p| p == next).unwrap_or(0);
                    let mut nodes: Vec<QuestionId> = path[start..]
                        .iter()
                        .map(|&i| graph.nodes[i].id.clone())
                        .collect();
                    // Rotate so the smallest id leads; the same cycle found
                    // from different starting points then dedups.
                    if let Some(min) = (0..nodes.len()).min_by_key(|&i| nodes[i].clone()) {
                        nodes.rotate_left(min);
                    }
                    out.push(Violation::Cycle { nodes });
                }
                Mark::Done => {}
            }
        }
        path.pop();
        mark[at] = Mark::Done;
    }

    for start in 0..n {
        if mark[start] == Mark::New {
            visit(start, graph, index, &mut mark, &mut path, out);
        }
    }
}
