use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::session::ExamSession;
use crate::agent::{AgentStatus, SessionMode};
use crate::engine::{Percent, QuestionId, ResultRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResultRow {
    pub student_id: String,
    pub raw: u32,
    pub max_on_path: u32,
    pub percent: Percent,
    pub partial: bool,
    pub self_assessment: bool,
    pub path: Vec<QuestionId>,
    pub records: Vec<ResultRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MissingRow {
    pub student_id: String,
    pub status: AgentStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Difficulty {
    pub presented: u32,
    pub full_credit: u32,
    /// `full_credit / presented`.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregates {
    pub mean_percent: Percent,
    pub median_percent: Percent,
    pub difficulty: BTreeMap<QuestionId, Difficulty>,
}

/// Compiled view of a session's grade book. Serialized canonically this is
/// the published report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompiledResults {
    pub session_id: String,
    pub test_id: String,
    pub mode: SessionMode,
    pub rows: Vec<ResultRow>,
    pub missing: Vec<MissingRow>,
    /// `null` until at least one row exists.
    pub aggregates: Option<Aggregates>,
}

/// Pure function of the session's grade book and per-student status.
pub fn compile_results(session: &ExamSession) -> CompiledResults {
    let rows: Vec<ResultRow> = session
        .grade_book
        .iter()
        .map(|(student_id, r)| ResultRow {
            student_id: student_id.clone(),
            raw: r.raw,
            max_on_path: r.max_on_path,
            percent: r.percent,
            partial: r.partial,
            self_assessment: session.self_assessment,
            path: r.path(),
            records: r.records.clone(),
        })
        .collect();
    let missing = session
        .missing()
        .into_iter()
        .map(|(student_id, status)| MissingRow { student_id, status })
        .collect();
    let aggregates = aggregate(&rows);
    CompiledResults {
        session_id: session.session_id.clone(),
        test_id: session.test_id.clone(),
        mode: session.mode,
        rows,
        missing,
        aggregates,
    }
}

/// Mean and median of the row percents (rounded half-up to tenths) and
/// per-question difficulty.
pub fn aggregate(rows: &[ResultRow]) -> Option<Aggregates> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as u64;
    let mut tenths: Vec<u64> = rows.iter().map(|r| u64::from(r.percent.tenths())).collect();
    tenths.sort_unstable();
    let sum: u64 = tenths.iter().sum();
    let mean = (2 * sum + n) / (2 * n);
    let mid = tenths.len() / 2;
    let median = if tenths.len() % 2 == 1 {
        tenths[mid]
    } else {
        (tenths[mid - 1] + tenths[mid]).div_ceil(2)
    };

    let mut counts: BTreeMap<QuestionId, (u32, u32)> = BTreeMap::new();
    for row in rows {
        for rec in &row.records {
            let c = counts.entry(rec.question_id.clone()).or_default();
            c.0 += 1;
            if rec.points_earned == rec.points_possible {
                c.1 += 1;
            }
        }
    }
    let difficulty = counts
        .into_iter()
        .map(|(q, (presented, full_credit))| {
            let value = f64::from(full_credit) / f64::from(presented);
            (
                q,
                Difficulty {
                    presented,
                    full_credit,
                    value,
                },
            )
        })
        .collect();
    Some(Aggregates {
        mean_percent: Percent::from_tenths(mean as u32),
        median_percent: Percent::from_tenths(median as u32),
        difficulty,
    })
}
