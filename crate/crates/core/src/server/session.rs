use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentId, AgentStatus, EndpointAddress, InstallReportEntry, SessionMode};
use crate::engine::FinalResult;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RosterEntry {
    pub student_id: String,
    pub endpoint: EndpointAddress,
}

impl RosterEntry {
    pub fn new(student_id: impl Into<String>, endpoint: EndpointAddress) -> Self {
        RosterEntry {
            student_id: student_id.into(),
            endpoint,
        }
    }
}

/// What the server last knew about one student's agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent_id: Option<AgentId>,
    pub status: AgentStatus,
    pub last_seq: u64,
    /// Why the agent was given up on, when EXPIRED.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl AgentEntry {
    pub fn pending() -> Self {
        AgentEntry {
            agent_id: None,
            status: AgentStatus::Created,
            last_seq: 0,
            failure: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExamSession {
    pub session_id: String,
    pub test_id: String,
    pub mode: SessionMode,
    pub roster: Vec<RosterEntry>,
    pub deadline: u64,
    pub per_student: BTreeMap<String, AgentEntry>,
    pub grade_book: BTreeMap<String, FinalResult>,
    pub published: bool,
    pub dispatched: bool,
    /// Set for the single-student sessions created by pull requests.
    pub self_assessment: bool,
}

impl ExamSession {
    pub fn endpoint_of(&self, student_id: &str) -> Option<&EndpointAddress> {
        self.roster
            .iter()
            .find(|r| r.student_id == student_id)
            .map(|r| &r.endpoint)
    }

    pub fn returned_count(&self) -> usize {
        self.grade_book.len()
    }

    /// Students without a grade-book row, in id order.
    pub fn missing(&self) -> Vec<(String, AgentStatus)> {
        let mut ids: BTreeSet<&String> = self.per_student.keys().collect();
        ids.extend(self.roster.iter().map(|r| &r.student_id));
        ids.into_iter()
            .filter(|id| !self.grade_book.contains_key(*id))
            .map(|id| {
                let status = self
                    .per_student
                    .get(id)
                    .map_or(AgentStatus::Created, |e| e.status);
                (id.clone(), status)
            })
            .collect()
    }
}

/// An install agent launched by this server and, once home, its report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstallRecord {
    pub agent_id: AgentId,
    pub config_payload: BTreeMap<String, String>,
    pub itinerary: Vec<EndpointAddress>,
    pub status: AgentStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<Vec<InstallReportEntry>>,
}
