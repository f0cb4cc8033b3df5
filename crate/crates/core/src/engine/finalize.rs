use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::graph::{AnswerPayload, EvalState, QuestionId, TestGraph};
use super::normalize::normalize_text;
use super::EngineError;

/// A percentage with one decimal digit, stored as tenths of a percent.
///
/// Serialized as a JSON number such as `40.0` or `33.3`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Percent(u32);

impl Percent {
    pub const ZERO: Percent = Percent(0);

    pub fn from_tenths(tenths: u32) -> Self {
        Percent(tenths)
    }

    pub fn tenths(self) -> u32 {
        self.0
    }

    /// `100 * num / den`, rounded half-up to one decimal. Zero when `den` is 0.
    pub fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            return Percent::ZERO;
        }
        // floor(1000 * num / den + 1/2) in exact integer arithmetic.
        let tenths = (2000 * num + den) / (2 * den);
        Percent(tenths as u32)
    }

    pub fn as_f64(self) -> f64 {
        f64::from(self.0) / 10.0
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.0 / 10, self.0 % 10)
    }
}

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        let tenths = (v * 10.0).round();
        if !(0.0..=f64::from(u32::MAX)).contains(&tenths) || (tenths / 10.0 - v).abs() > 1e-9 {
            return Err(serde::de::Error::custom(format!(
                "percent {v} is not a non-negative one-decimal value"
            )));
        }
        Ok(Percent(tenths as u32))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRecord {
    pub question_id: QuestionId,
    /// Absent when the question was presented but never answered.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalized_answer: Option<AnswerPayload>,
    pub points_earned: u32,
    pub points_possible: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answered_at: Option<u64>,
}

/// Outcome of finalizing one evaluation run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalResult {
    pub records: Vec<ResultRecord>,
    pub raw: u32,
    pub max_on_path: u32,
    pub percent: Percent,
    pub partial: bool,
}

impl FinalResult {
    pub fn path(&self) -> Vec<QuestionId> {
        self.records.iter().map(|r| r.question_id.clone()).collect()
    }
}

fn normalized(payload: &AnswerPayload) -> AnswerPayload {
    match payload {
        AnswerPayload::Choices(c) => AnswerPayload::Choices(c.clone()),
        AnswerPayload::Text(t) => AnswerPayload::Text(normalize_text(t)),
    }
}

/// Builds one record per presented question and the path-dependent totals.
///
/// The denominator is the points of the questions actually presented, so a
/// deadline cut counts the open question as presented and unearned.
pub fn finalize(
    graph: &TestGraph,
    state: &EvalState,
    partial: bool,
) -> Result<FinalResult, EngineError> {
    if !partial && !state.is_terminal() {
        return Err(EngineError::NotTerminal);
    }
    let mut records = Vec::with_capacity(state.presented.len());
    let mut raw: u32 = 0;
    let mut max_on_path: u32 = 0;
    for qid in &state.presented {
        let node = graph
            .node(qid)
            .ok_or_else(|| EngineError::UnknownQuestion(qid.clone()))?;
        let logged = state.answered(qid);
        let earned = logged.map_or(0, |l| l.points_earned);
        raw += earned;
        max_on_path += node.points;
        records.push(ResultRecord {
            question_id: qid.clone(),
            normalized_answer: logged.map(|l| normalized(&l.answer.payload)),
            points_earned: earned,
            points_possible: node.points,
            answered_at: logged.map(|l| l.answer.answered_at),
        });
    }
    Ok(FinalResult {
        records,
        raw,
        max_on_path,
        percent: Percent::ratio(raw.into(), max_on_path.into()),
        partial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Oracle: decimal rounding on the exact rational, done in f64 with a
    // half-up nudge; only valid while values stay far from f64 limits.
    fn percent_oracle(num: u64, den: u64) -> String {
        if den == 0 {
            return "0.0".into();
        }
        let exact = 100.0 * num as f64 / den as f64;
        let tenths = (exact * 10.0 + 0.5 + 1e-9).floor() as u64;
        format!("{}.{}", tenths / 10, tenths % 10)
    }

    #[test]
    fn percent_matches_decimal_oracle() {
        for den in 0..60u64 {
            for num in 0..=den {
                assert_eq!(
                    Percent::ratio(num, den).to_string(),
                    percent_oracle(num, den),
                    "{num}/{den}"
                );
            }
        }
    }

    #[test]
    fn percent_half_up() {
        // 1/8 = 12.5 exactly; 1/16 = 6.25 -> 6.3; 1/3 = 33.33.. -> 33.3
        assert_eq!(Percent::ratio(1, 8).to_string(), "12.5");
        assert_eq!(Percent::ratio(1, 16).to_string(), "6.3");
        assert_eq!(Percent::ratio(1, 3).to_string(), "33.3");
        assert_eq!(Percent::ratio(2, 3).to_string(), "66.7");
        assert_eq!(Percent::ratio(2, 5).to_string(), "40.0");
    }

    #[test]
    fn percent_json_form() {
        assert_eq!(serde_json::to_string(&Percent::ratio(2, 5)).unwrap(), "40.0");
        assert_eq!(serde_json::to_string(&Percent::ratio(1, 3)).unwrap(), "33.3");
        assert_eq!(serde_json::to_string(&Percent::ratio(1, 1)).unwrap(), "100.0");
        let back: Percent = serde_json::from_str("33.3").unwrap();
        assert_eq!(back, Percent::from_tenths(333));
        assert!(serde_json::from_str::<Percent>("33.33").is_err());
    }
}
