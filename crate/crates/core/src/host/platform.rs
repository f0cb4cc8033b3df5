use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::view::{ExamStatus, ExamSummary, ExamView};
use super::HostError;
use crate::agent::{
    decode_snapshot, encode_snapshot, step_agent, AgentError, AgentEvent, AgentId, AgentKind,
    AgentSnapshot, AgentStatus, EndpointAddress, InstallReportEntry,
};
use crate::canonical;
use crate::clock::Clock;
use crate::engine::{Answer, AnswerPayload, Next, QuestionId};
use crate::fsutil::{atomic_write, is_temp_file};
use crate::wire::{Ack, Message};

/// Configuration applied by install agents.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppliedConfig {
    pub values: BTreeMap<String, String>,
    pub version: u64,
}

/// One agent as stored on disk under `agents/<agent_id>.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentRecord {
    pub snapshot: AgentSnapshot,
    /// Install agents only: handed to the next hop.
    pub forwarded: bool,
    pub arrived_at: u64,
}

/// Work the platform wants done over the network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outbound {
    /// Send RETURN home and report the ack via [`HostPlatform::on_return_acked`].
    Return {
        home: EndpointAddress,
        snapshot: AgentSnapshot,
    },
    /// Send DISPATCH to the agent's current hop; report the outcome via
    /// [`HostPlatform::on_forwarded`] or [`HostPlatform::on_forward_failed`].
    Forward {
        to: EndpointAddress,
        snapshot: AgentSnapshot,
    },
}

impl Outbound {
    pub fn agent_id(&self) -> AgentId {
        match self {
            Outbound::Return { snapshot, .. } | Outbound::Forward { snapshot, .. } => {
                snapshot.agent_id
            }
        }
    }
}

/// A student-side agent platform.
///
/// Every state change is written to disk (write-temp-then-rename) before
/// the call that caused it returns.
pub struct HostPlatform {
    endpoint: EndpointAddress,
    dir: Option<PathBuf>,
    agents: BTreeMap<AgentId, AgentRecord>,
    config: AppliedConfig,
    clock: Arc<dyn Clock>,
    crash_after_persist: bool,
}

const AGENTS_DIR: &str = "agents";
const CONFIG_FILE: &str = "config.json";

impl HostPlatform {
    pub fn in_memory(endpoint: EndpointAddress, clock: Arc<dyn Clock>) -> Self {
        HostPlatform {
            endpoint,
            dir: None,
            agents: BTreeMap::new(),
            config: AppliedConfig::default(),
            clock,
            crash_after_persist: false,
        }
    }

    /// Opens the platform state under `dir`, reloading stored agents.
    /// Leftover temp files from an interrupted write are removed.
    pub fn open(
        endpoint: EndpointAddress,
        dir: &Path,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, HostError> {
        let agents_dir = dir.join(AGENTS_DIR);
        fs::create_dir_all(&agents_dir)?;
        let mut agents = BTreeMap::new();
        for entry in fs::read_dir(&agents_dir)? {
            let path = entry?.path();
            if is_temp_file(&path) {
                fs::remove_file(&path)?;
                continue;
            }
            if path.extension().is_none_or(|x| x != "json") {
                continue;
            }
            let record = read_record(&path)?;
            agents.insert(record.snapshot.agent_id, record);
        }
        let config = match fs::read(dir.join(CONFIG_FILE)) {
            Ok(bytes) => canonical::from_bytes(&bytes)
                .map_err(|e| HostError::Corrupt(format!("{CONFIG_FILE}: {e}")))?,
            Err(e) if e.kind() == io::ErrorKind::NotFound => AppliedConfig::default(),
            Err(e) => return Err(e.into()),
        };
        Ok(HostPlatform {
            endpoint,
            dir: Some(dir.to_path_buf()),
            agents,
            config,
            clock,
            crash_after_persist: false,
        })
    }

    pub fn endpoint(&self) -> &EndpointAddress {
        &self.endpoint
    }

    pub fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    pub fn applied_config(&self) -> &AppliedConfig {
        &self.config
    }

    pub fn agent(&self, id: &AgentId) -> Option<&AgentSnapshot> {
        self.agents.get(id).map(|r| &r.snapshot)
    }

    pub fn records(&self) -> impl Iterator<Item = &AgentRecord> {
        self.agents.values()
    }

    /// Makes the next successful answer fail right after its snapshot is
    /// persisted, as if the process died before replying.
    pub fn inject_crash_after_persist(&mut self) {
        self.crash_after_persist = true;
    }

    fn persist(&self, id: &AgentId) -> Result<(), HostError> {
        let (Some(dir), Some(record)) = (&self.dir, self.agents.get(id)) else {
            return Ok(());
        };
        let path = dir.join(AGENTS_DIR).join(format!("{id}.json"));
        atomic_write(&path, &canonical::to_bytes(record))?;
        Ok(())
    }

    fn persist_config(&self) -> Result<(), HostError> {
        if let Some(dir) = &self.dir {
            atomic_write(&dir.join(CONFIG_FILE), &canonical::to_bytes(&self.config))?;
        }
        Ok(())
    }

    fn replace(&mut self, snapshot: AgentSnapshot) -> Result<(), HostError> {
        let id = snapshot.agent_id;
        if let Some(r) = self.agents.get_mut(&id) {
            r.snapshot = snapshot;
        }
        self.persist(&id)
    }

    /// Takes in a dispatched agent.
    ///
    /// A re-sent copy of an agent already here (lower seq) is acked again
    /// with the stored seq. An evaluation agent for a session and student
    /// that already has one executing is refused.
    pub fn accept_dispatch(&mut self, snapshot: AgentSnapshot) -> Result<Ack, HostError> {
        let id = snapshot.agent_id;
        if snapshot.status != AgentStatus::InTransit {
            return Err(HostError::BadMessage(format!(
                "dispatched agent is {}",
                snapshot.status
            )));
        }
        if let Some(existing) = self.agents.get(&id) {
            let revisit = snapshot.kind == AgentKind::Install
                && existing.forwarded
                && snapshot.seq > existing.snapshot.seq;
            if snapshot.seq < existing.snapshot.seq && !revisit {
                return Ok(Ack {
                    agent_id: id,
                    seq: existing.snapshot.seq,
                });
            }
            if !revisit {
                return Err(HostError::DuplicateAgent(id));
            }
        }
        match snapshot.kind {
            AgentKind::Evaluation => {
                let busy = self.agents.values().any(|r| {
                    r.snapshot.kind == AgentKind::Evaluation
                        && r.snapshot.status == AgentStatus::Executing
                        && r.snapshot.session_id == snapshot.session_id
                        && r.snapshot.student_id == snapshot.student_id
                });
                if busy {
                    return Err(HostError::DuplicateAgent(id));
                }
            }
            AgentKind::Install => {
                if snapshot.current_hop() != Some(&self.endpoint) {
                    return Err(HostError::WrongHop {
                        expected: snapshot
                            .current_hop()
                            .map(|h| h.to_string())
                            .unwrap_or_default(),
                        here: self.endpoint.to_string(),
                    });
                }
            }
        }

        let now = self.now();
        let mut arrived = step_agent(&snapshot, AgentEvent::Arrived)?;
        if arrived.kind == AgentKind::Install {
            arrived = self.apply_install(&arrived)?;
        } else if now >= arrived.deadline {
            arrived = step_agent(&arrived, AgentEvent::DeadlineReached)?;
        }
        let seq = arrived.seq;
        self.agents.insert(
            id,
            AgentRecord {
                snapshot: arrived,
                forwarded: false,
                arrived_at: now,
            },
        );
        self.persist(&id)?;
        Ok(Ack { agent_id: id, seq })
    }

    /// Applies an EXECUTING install agent's payload here and returns the
    /// agent after HOP_DONE, headed for its next hop or home.
    pub fn apply_install(&mut self, snapshot: &AgentSnapshot) -> Result<AgentSnapshot, HostError> {
        if snapshot.kind != AgentKind::Install || snapshot.status != AgentStatus::Executing {
            return Err(HostError::BadMessage(format!(
                "apply_install on {:?} agent in {}",
                snapshot.kind, snapshot.status
            )));
        }
        if snapshot.current_hop() != Some(&self.endpoint) {
            return Err(HostError::WrongHop {
                expected: snapshot
                    .current_hop()
                    .map(|h| h.to_string())
                    .unwrap_or_default(),
                here: self.endpoint.to_string(),
            });
        }
        let mut config = self.config.clone();
        if let Some(payload) = &snapshot.config_payload {
            config
                .values
                .extend(payload.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        config.version += 1;
        let entry =
            InstallReportEntry::applied(self.endpoint.clone(), config.version, self.now());
        let next = step_agent(snapshot, AgentEvent::HopDone(entry))?;
        self.config = config;
        self.persist_config()?;
        Ok(next)
    }

    fn eval_record(&self, id: &AgentId) -> Result<&AgentRecord, HostError> {
        match self.agents.get(id) {
            Some(r) if r.snapshot.kind == AgentKind::Evaluation => Ok(r),
            _ => Err(HostError::UnknownAgent(*id)),
        }
    }

    pub fn current_question(&self, id: &AgentId) -> Result<ExamView, HostError> {
        let record = self.eval_record(id)?;
        ExamView::of(&record.snapshot)
            .ok_or_else(|| HostError::Corrupt(format!("agent {id} has no test")))
    }

    /// Grades and records one answer for the agent's current question.
    ///
    /// `question_id`, when given, must name the current question. The new
    /// state is on disk before this returns. Reaching END finishes the
    /// evaluation; answering at or after the deadline finishes it partial.
    pub fn submit_answer(
        &mut self,
        id: &AgentId,
        question_id: Option<&QuestionId>,
        payload: AnswerPayload,
    ) -> Result<ExamView, HostError> {
        let now = self.now();
        let snapshot = self.eval_record(id)?.snapshot.clone();
        if snapshot.status == AgentStatus::Executing && now >= snapshot.deadline {
            let cut = step_agent(&snapshot, AgentEvent::DeadlineReached)?;
            self.replace(cut)?;
            return Err(HostError::DeadlinePassed(*id));
        }
        if snapshot.status != AgentStatus::Executing {
            return Err(if snapshot.partial {
                HostError::DeadlinePassed(*id)
            } else {
                HostError::Finished(*id)
            });
        }
        let state = snapshot.eval_state().expect("evaluation agent");
        let current = match &state.current {
            Next::Question(q) => q.clone(),
            Next::End => return Err(HostError::Finished(*id)),
        };
        if let Some(q) = question_id {
            if *q != current {
                return Err(HostError::WrongQuestion {
                    expected: current,
                    got: q.clone(),
                });
            }
        }
        let answer = Answer {
            question_id: current,
            payload,
            answered_at: now,
        };
        let mut next = step_agent(&snapshot, AgentEvent::AnswerRecorded(answer))?;
        if next.eval_state().is_some_and(|s| s.is_terminal()) {
            next = step_agent(&next, AgentEvent::EvalDone)?;
        }
        self.replace(next)?;
        if std::mem::take(&mut self.crash_after_persist) {
            return Err(HostError::InjectedCrash);
        }
        self.current_question(id)
    }

    /// Cuts every executing evaluation whose deadline is at or before `now`.
    pub fn enforce_deadline(&mut self, now: u64) -> Result<Vec<AgentId>, HostError> {
        let due: Vec<AgentId> = self
            .agents
            .values()
            .filter(|r| {
                r.snapshot.kind == AgentKind::Evaluation
                    && r.snapshot.status == AgentStatus::Executing
                    && r.snapshot.deadline <= now
            })
            .map(|r| r.snapshot.agent_id)
            .collect();
        for id in &due {
            let cut = step_agent(&self.agents[id].snapshot, AgentEvent::DeadlineReached)?;
            self.replace(cut)?;
        }
        Ok(due)
    }

    /// Agents waiting to leave, in agent id order.
    pub fn outbound(&self) -> Vec<Outbound> {
        self.agents
            .values()
            .filter_map(|r| {
                let s = &r.snapshot;
                match (s.kind, s.status) {
                    (AgentKind::Evaluation, AgentStatus::Returning) => Some(Outbound::Return {
                        home: s.home.clone(),
                        snapshot: s.clone(),
                    }),
                    (AgentKind::Install, AgentStatus::Returning) if !r.forwarded => {
                        Some(Outbound::Return {
                            home: s.home.clone(),
                            snapshot: s.clone(),
                        })
                    }
                    (AgentKind::Install, AgentStatus::InTransit) if !r.forwarded => {
                        Some(Outbound::Forward {
                            to: s.current_hop()?.clone(),
                            snapshot: s.clone(),
                        })
                    }
                    _ => None,
                }
            })
            .collect()
    }

    pub fn on_return_acked(&mut self, id: &AgentId) -> Result<(), HostError> {
        let record = self.agents.get(id).ok_or(HostError::UnknownAgent(*id))?;
        if record.snapshot.status != AgentStatus::Returning {
            return Ok(());
        }
        let done = step_agent(&record.snapshot, AgentEvent::ReturnAcked)?;
        if let Some(r) = self.agents.get_mut(id) {
            r.snapshot = done;
            r.forwarded = r.snapshot.kind == AgentKind::Install;
        }
        self.persist(id)
    }

    pub fn on_forwarded(&mut self, id: &AgentId) -> Result<(), HostError> {
        let record = self.agents.get_mut(id).ok_or(HostError::UnknownAgent(*id))?;
        record.forwarded = true;
        self.persist(id)
    }

    /// The current hop could not be reached within its budget: record it as
    /// skipped and move on to the next hop (or home).
    pub fn on_forward_failed(&mut self, id: &AgentId) -> Result<(), HostError> {
        let record = self.agents.get(id).ok_or(HostError::UnknownAgent(*id))?;
        let hop = record
            .snapshot
            .current_hop()
            .cloned()
            .ok_or_else(|| HostError::BadMessage("itinerary exhausted".into()))?;
        let next = step_agent(
            &record.snapshot,
            AgentEvent::HopDone(InstallReportEntry::skipped(hop)),
        )?;
        self.replace(next)
    }

    /// The exam the student UI should show: the latest evaluation agent to
    /// arrive, preferring one that is still executing.
    pub fn active_exam(&self) -> Option<&AgentSnapshot> {
        self.agents
            .values()
            .filter(|r| r.snapshot.kind == AgentKind::Evaluation)
            .max_by_key(|r| {
                (
                    r.snapshot.status == AgentStatus::Executing,
                    r.arrived_at,
                    r.snapshot.agent_id,
                )
            })
            .map(|r| &r.snapshot)
    }

    pub fn exam_summary(&self) -> Result<ExamSummary, HostError> {
        let s = self.active_exam().ok_or(HostError::NoActiveExam)?;
        ExamSummary::of(s).ok_or(HostError::NoActiveExam)
    }

    pub fn exam_status(&self) -> Result<ExamStatus, HostError> {
        let s = self.active_exam().ok_or(HostError::NoActiveExam)?;
        ExamStatus::of(s, self.now()).ok_or(HostError::NoActiveExam)
    }

    /// Answers one inbound wire message.
    pub fn handle_message(&mut self, msg: Message) -> Message {
        let result = match msg {
            Message::Dispatch(snapshot) => self.accept_dispatch(snapshot).map(Message::DispatchAck),
            Message::Ping(n) => Ok(Message::Pong(n)),
            other => Err(HostError::BadMessage(format!(
                "host does not accept {}",
                other.msg_type()
            ))),
        };
        result.unwrap_or_else(|e| {
            log::info!("refusing message: {e}");
            Message::error(e.code(), e.to_string())
        })
    }
}

fn read_record(path: &Path) -> Result<AgentRecord, HostError> {
    let corrupt = |e: String| HostError::Corrupt(format!("{}: {e}", path.display()));
    let bytes = fs::read(path)?;
    let record: AgentRecord = canonical::from_bytes(&bytes).map_err(|e| corrupt(e.to_string()))?;
    // The embedded snapshot must satisfy the same checks as one off the wire.
    decode_snapshot(&encode_snapshot(&record.snapshot)).map_err(|e| corrupt(e.to_string()))?;
    Ok(record)
}

impl From<AgentError> for HostError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Engine(e) => HostError::Engine(e),
            other => HostError::Agent(other),
        }
    }
}
