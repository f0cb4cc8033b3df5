use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Identifier of a question inside one test graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuestionId(pub String);

impl QuestionId {
    pub fn new(id: impl Into<String>) -> Self {
        QuestionId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for QuestionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for QuestionId {
    fn from(s: &str) -> Self {
        QuestionId(s.to_owned())
    }
}

impl From<String> for QuestionId {
    fn from(s: String) -> Self {
        QuestionId(s)
    }
}

/// Where a transition leads: another question or the end of the test.
///
/// Encoded as the question id string, or `null` for the end.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Next {
    Question(QuestionId),
    End,
}

impl Next {
    pub fn question(id: impl Into<String>) -> Self {
        Next::Question(QuestionId(id.into()))
    }

    pub fn is_end(&self) -> bool {
        matches!(self, Next::End)
    }

    pub fn as_question(&self) -> Option<&QuestionId> {
        match self {
            Next::Question(q) => Some(q),
            Next::End => None,
        }
    }
}

impl fmt::Display for Next {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Next::Question(q) => q.fmt(f),
            Next::End => f.write_str("END"),
        }
    }
}

impl Serialize for Next {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Next::Question(q) => serializer.serialize_some(q),
            Next::End => serializer.serialize_none(),
        }
    }
}

impl<'de> Deserialize<'de> for Next {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        Ok(match Option::<QuestionId>::deserialize(deserializer)? {
            Some(q) => Next::Question(q),
            None => Next::End,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum QuestionKind {
    SingleChoice,
    MultiChoice,
    ShortText,
}

impl QuestionKind {
    pub fn is_choice(self) -> bool {
        !matches!(self, QuestionKind::ShortText)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Choice {
    pub id: String,
    pub text: String,
}

impl Choice {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Choice {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Guard {
    /// Full points on the current question.
    OnCorrect,
    /// Zero points on the current question.
    OnIncorrect,
    /// The selected choices intersect this set.
    OnChoice(BTreeSet<String>),
    /// Running raw score, after grading the current answer, is at least this.
    OnScoreAtLeast(u32),
    Default,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transition {
    pub guard: Guard,
    pub target: Next,
}

impl Transition {
    pub fn new(guard: Guard, target: Next) -> Self {
        Transition { guard, target }
    }
}

/// One question of an adaptive test.
///
/// `correct` holds choice ids for the choice kinds and the accepted,
/// already-normalized answers for `SHORT_TEXT`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionNode {
    pub id: QuestionId,
    pub prompt: String,
    pub kind: QuestionKind,
    pub choices: Vec<Choice>,
    pub correct: Vec<String>,
    pub points: u32,
    pub transitions: Vec<Transition>,
}

impl QuestionNode {
    pub fn choice_ids(&self) -> impl Iterator<Item = &str> {
        self.choices.iter().map(|c| c.id.as_str())
    }

    pub fn correct_set(&self) -> BTreeSet<&str> {
        self.correct.iter().map(String::as_str).collect()
    }
}

/// The evaluation engine payload: an acyclic graph of guarded questions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestGraph {
    pub test_id: String,
    pub title: String,
    pub entry: QuestionId,
    pub nodes: Vec<QuestionNode>,
    pub version: u32,
}

impl TestGraph {
    pub fn node(&self, id: &QuestionId) -> Option<&QuestionNode> {
        self.nodes.iter().find(|n| &n.id == id)
    }

    pub fn total_points(&self) -> u64 {
        self.nodes.iter().map(|n| u64::from(n.points)).sum()
    }
}

/// Submitted answer content, shaped by the question kind.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerPayload {
    Choices(BTreeSet<String>),
    Text(String),
}

impl AnswerPayload {
    pub fn choices<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        AnswerPayload::Choices(ids.into_iter().map(Into::into).collect())
    }

    pub fn text(t: impl Into<String>) -> Self {
        AnswerPayload::Text(t.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Answer {
    pub question_id: QuestionId,
    pub payload: AnswerPayload,
    /// Logical milliseconds on the answering platform's clock.
    pub answered_at: u64,
}

impl Answer {
    pub fn new(question_id: impl Into<String>, payload: AnswerPayload, answered_at: u64) -> Self {
        Answer {
            question_id: QuestionId(question_id.into()),
            payload,
            answered_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggedAnswer {
    pub answer: Answer,
    pub points_earned: u32,
}

/// Execution state of one run through a test graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalState {
    pub current: Next,
    pub answer_log: Vec<LoggedAnswer>,
    pub raw_score: u32,
    pub presented: Vec<QuestionId>,
}

impl EvalState {
    /// Fresh state positioned on the graph's entry question.
    pub fn start(graph: &TestGraph) -> Self {
        EvalState {
            current: Next::Question(graph.entry.clone()),
            answer_log: Vec::new(),
            raw_score: 0,
            presented: vec![graph.entry.clone()],
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.current.is_end()
    }

    pub fn answered(&self, id: &QuestionId) -> Option<&LoggedAnswer> {
        self.answer_log.iter().find(|l| &l.answer.question_id == id)
    }
}
