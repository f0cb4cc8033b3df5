use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::journal::{Journal, ServerEvent, ServerState};
use super::results::{compile_results, CompiledResults};
use super::session::{AgentEntry, ExamSession, InstallRecord, RosterEntry};
use super::ServerError;
use crate::agent::{
    create_evaluation_agent, create_install_agent, step_agent, AgentEvent, AgentId, AgentKind,
    AgentSnapshot, AgentStatus, EndpointAddress, EvaluationSpec, IdSource, SessionMode,
};
use crate::canonical;
use crate::engine::TestGraph;
use crate::fsutil::atomic_write;
use crate::wire::{Ack, Message, PullRequest, RetryPolicy};

#[derive(Debug, Clone)]
pub struct ServerConfig {
    /// Where agents return to.
    pub home: EndpointAddress,
    pub policy: RetryPolicy,
    /// Lifetime of a self-assessment started by a pull request when no
    /// open PULL session sets one.
    pub pull_duration_ms: u64,
    /// Journal events between state snapshots.
    pub snapshot_every: u64,
}

impl ServerConfig {
    pub fn new(home: EndpointAddress) -> Self {
        ServerConfig {
            home,
            policy: RetryPolicy::default(),
            pull_duration_ms: 3_600_000,
            snapshot_every: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewSession {
    pub test_id: String,
    pub mode: SessionMode,
    pub roster: Vec<RosterEntry>,
    pub deadline: u64,
}

/// One agent ready to go out, created by [`ServerNode::prepare_dispatch`].
#[derive(Debug, Clone)]
pub struct Dispatch {
    pub session_id: String,
    pub student_id: String,
    pub target: EndpointAddress,
    pub snapshot: AgentSnapshot,
}

/// The Teacher Agent's platform.
///
/// Transport-agnostic: callers move frames and report outcomes back. Every
/// mutation is written to the journal (when there is one) before it is
/// applied or acknowledged.
pub struct ServerNode {
    config: ServerConfig,
    tests: BTreeMap<String, TestGraph>,
    state: ServerState,
    agent_index: BTreeMap<AgentId, (String, String)>,
    journal: Option<Journal>,
    ids: Box<dyn IdSource + Send>,
}

impl ServerNode {
    /// A server that keeps everything in memory (simulation, tests).
    pub fn in_memory(
        config: ServerConfig,
        tests: BTreeMap<String, TestGraph>,
        ids: Box<dyn IdSource + Send>,
    ) -> Self {
        ServerNode {
            config,
            tests,
            state: ServerState::default(),
            agent_index: BTreeMap::new(),
            journal: None,
            ids,
        }
    }

    /// A durable server rooted at `data_dir`, recovering any earlier state.
    pub fn open(
        config: ServerConfig,
        tests: BTreeMap<String, TestGraph>,
        data_dir: &Path,
        ids: Box<dyn IdSource + Send>,
    ) -> Result<Self, ServerError> {
        let (journal, state) = Journal::open(data_dir, config.snapshot_every)?;
        let mut node = ServerNode {
            config,
            tests,
            state,
            agent_index: BTreeMap::new(),
            journal: Some(journal),
            ids,
        };
        node.rebuild_index();
        Ok(node)
    }

    fn rebuild_index(&mut self) {
        self.agent_index.clear();
        for s in self.state.sessions.values() {
            for (student, e) in &s.per_student {
                if let Some(id) = e.agent_id {
                    self.agent_index
                        .insert(id, (s.session_id.clone(), student.clone()));
                }
            }
        }
    }

    pub fn config(&self) -> &ServerConfig {
        &self.config
    }

    pub fn tests(&self) -> &BTreeMap<String, TestGraph> {
        &self.tests
    }

    pub fn state(&self) -> &ServerState {
        &self.state
    }

    pub fn session(&self, session_id: &str) -> Result<&ExamSession, ServerError> {
        self.state
            .sessions
            .get(session_id)
            .ok_or_else(|| ServerError::UnknownSession(session_id.to_owned()))
    }

    pub fn install(&self, agent_id: &AgentId) -> Option<&InstallRecord> {
        self.state.installs.get(agent_id)
    }

    pub fn data_dir(&self) -> Option<&Path> {
        self.journal.as_ref().map(|j| j.dir())
    }

    pub fn report_path(&self, session_id: &str) -> Option<PathBuf> {
        self.data_dir()
            .map(|d| d.join("reports").join(format!("{session_id}.json")))
    }

    fn commit(&mut self, event: ServerEvent) -> Result<(), ServerError> {
        if let Some(j) = self.journal.as_mut() {
            j.append(&event)?;
        }
        self.state.apply(&event);
        match &event {
            ServerEvent::SessionCreated { session } => {
                for (student, e) in &session.per_student {
                    if let Some(id) = e.agent_id {
                        self.agent_index
                            .insert(id, (session.session_id.clone(), student.clone()));
                    }
                }
            }
            ServerEvent::AgentsDispatched { session_id, agents } => {
                for (student, id) in agents {
                    self.agent_index
                        .insert(*id, (session_id.clone(), student.clone()));
                }
            }
            _ => {}
        }
        if let Some(j) = self.journal.as_mut() {
            if j.wants_snapshot() {
                j.snapshot(&self.state)?;
            }
        }
        Ok(())
    }

    pub fn create_session(&mut self, req: NewSession) -> Result<ExamSession, ServerError> {
        if !self.tests.contains_key(&req.test_id) {
            return Err(ServerError::UnknownTest(req.test_id));
        }
        if req.mode == SessionMode::Push && req.roster.is_empty() {
            return Err(ServerError::EmptyRoster);
        }
        let mut per_student = BTreeMap::new();
        for r in &req.roster {
            if !r.endpoint.is_valid() {
                return Err(ServerError::InvalidEndpoint(r.endpoint.to_string()));
            }
            if r.student_id.is_empty() {
                return Err(ServerError::InvalidRoster("empty student id".into()));
            }
            if per_student
                .insert(r.student_id.clone(), AgentEntry::pending())
                .is_some()
            {
                return Err(ServerError::InvalidRoster(format!(
                    "student {} listed twice",
                    r.student_id
                )));
            }
        }
        let session = ExamSession {
            session_id: format!("session-{}", self.state.session_counter + 1),
            test_id: req.test_id,
            mode: req.mode,
            roster: req.roster,
            deadline: req.deadline,
            per_student,
            grade_book: BTreeMap::new(),
            published: false,
            dispatched: false,
            self_assessment: false,
        };
        self.commit(ServerEvent::SessionCreated {
            session: session.clone(),
        })?;
        Ok(session)
    }

    /// Creates one evaluation agent per roster entry, records them as
    /// IN_TRANSIT and hands them back for delivery. Outcomes come back
    /// through [`ServerNode::record_dispatch`].
    pub fn prepare_dispatch(&mut self, session_id: &str) -> Result<Vec<Dispatch>, ServerError> {
        let session = self.session(session_id)?;
        if session.mode != SessionMode::Push {
            return Err(ServerError::NotPush(session_id.to_owned()));
        }
        if session.dispatched {
            return Err(ServerError::AlreadyDispatched(session_id.to_owned()));
        }
        let graph = self.tests[&session.test_id].clone();
        let roster = session.roster.clone();
        let deadline = session.deadline;

        let mut out = Vec::with_capacity(roster.len());
        let mut agents = BTreeMap::new();
        for r in roster {
            let created = create_evaluation_agent(
                self.ids.next_id(),
                EvaluationSpec {
                    session_id: session_id.to_owned(),
                    student_id: r.student_id.clone(),
                    mode: SessionMode::Push,
                    home: self.config.home.clone(),
                    target: r.endpoint.clone(),
                    deadline,
                },
                graph.clone(),
            )?;
            let snapshot = step_agent(&created, AgentEvent::Dispatched)?;
            agents.insert(r.student_id.clone(), snapshot.agent_id);
            out.push(Dispatch {
                session_id: session_id.to_owned(),
                student_id: r.student_id,
                target: r.endpoint,
                snapshot,
            });
        }
        self.commit(ServerEvent::AgentsDispatched {
            session_id: session_id.to_owned(),
            agents,
        })?;
        Ok(out)
    }

    /// Records how one dispatch ended: the ack's seq, or the reason it was
    /// given up (which marks the student EXPIRED).
    pub fn record_dispatch(
        &mut self,
        session_id: &str,
        student_id: &str,
        outcome: Result<u64, String>,
    ) -> Result<(), ServerError> {
        let entry = self
            .session(session_id)?
            .per_student
            .get(student_id)
            .ok_or_else(|| ServerError::UnknownStudent(student_id.to_owned()))?;
        if entry.status != AgentStatus::InTransit {
            // A return overtook the ack, or the entry already expired.
            return Ok(());
        }
        let event = match outcome {
            Ok(seq) => ServerEvent::DispatchAcked {
                session_id: session_id.to_owned(),
                student_id: student_id.to_owned(),
                seq,
            },
            Err(reason) => ServerEvent::DispatchFailed {
                session_id: session_id.to_owned(),
                student_id: student_id.to_owned(),
                reason,
            },
        };
        self.commit(event)
    }

    /// Accepts a returning agent. Idempotent: a second delivery of an
    /// already recorded agent is acked without touching the grade book.
    pub fn ingest_return(&mut self, snapshot: &AgentSnapshot) -> Result<Ack, ServerError> {
        let ack = Ack {
            agent_id: snapshot.agent_id,
            seq: snapshot.seq,
        };
        if snapshot.kind == AgentKind::Install {
            return self.ingest_install(snapshot).map(|()| ack);
        }
        let (session_id, student_id) = self
            .agent_index
            .get(&snapshot.agent_id)
            .cloned()
            .ok_or(ServerError::UnknownAgent(snapshot.agent_id))?;
        if snapshot.session_id != session_id || snapshot.student_id != student_id {
            return Err(ServerError::UnknownAgent(snapshot.agent_id));
        }
        let entry = &self.session(&session_id)?.per_student[&student_id];
        match entry.status {
            AgentStatus::Completed => return Ok(ack),
            AgentStatus::Expired => return Err(ServerError::SessionClosed(session_id)),
            _ => {}
        }
        let results = match (&snapshot.results, snapshot.status) {
            (Some(r), AgentStatus::Returning) => r.clone(),
            _ => {
                return Err(ServerError::InvalidAgent(format!(
                    "agent {} returned as {} without results",
                    snapshot.agent_id, snapshot.status
                )))
            }
        };
        self.commit(ServerEvent::ReturnIngested {
            session_id,
            student_id,
            seq: snapshot.seq,
            results,
        })?;
        Ok(ack)
    }

    fn ingest_install(&mut self, snapshot: &AgentSnapshot) -> Result<(), ServerError> {
        let record = self
            .state
            .installs
            .get(&snapshot.agent_id)
            .ok_or(ServerError::UnknownAgent(snapshot.agent_id))?;
        if record.status == AgentStatus::Completed {
            return Ok(());
        }
        let report = match (snapshot.install_report(), snapshot.status) {
            (Some(r), AgentStatus::Returning) => r.to_vec(),
            _ => {
                return Err(ServerError::InvalidAgent(format!(
                    "install agent {} returned as {}",
                    snapshot.agent_id, snapshot.status
                )))
            }
        };
        self.commit(ServerEvent::InstallReturned {
            agent_id: snapshot.agent_id,
            report,
        })
    }

    /// Marks every agent still out past its deadline plus grace as EXPIRED.
    /// Returns the (session, student) pairs that changed.
    pub fn expire_overdue(&mut self, now: u64) -> Result<Vec<(String, String)>, ServerError> {
        let mut due = Vec::new();
        for s in self.state.sessions.values() {
            if now < self.config.policy.give_up_at(s.deadline) {
                continue;
            }
            for (student, e) in &s.per_student {
                if !matches!(e.status, AgentStatus::Completed | AgentStatus::Expired) {
                    due.push((s.session_id.clone(), student.clone()));
                }
            }
        }
        for (session_id, student_id) in &due {
            self.commit(ServerEvent::Expired {
                session_id: session_id.clone(),
                student_id: student_id.clone(),
            })?;
        }
        Ok(due)
    }

    pub fn compile_results(&self, session_id: &str) -> Result<CompiledResults, ServerError> {
        Ok(compile_results(self.session(session_id)?))
    }

    /// Canonical bytes of the compiled results: the report format.
    pub fn report_bytes(&self, session_id: &str) -> Result<Vec<u8>, ServerError> {
        Ok(canonical::to_bytes(&self.compile_results(session_id)?))
    }

    /// Compiles, writes `reports/<session_id>.json` (durable servers only)
    /// and marks the session published. Returns the report bytes.
    pub fn publish_results(&mut self, session_id: &str) -> Result<Vec<u8>, ServerError> {
        let bytes = self.report_bytes(session_id)?;
        if let Some(path) = self.report_path(session_id) {
            atomic_write(&path, &bytes)?;
        }
        if !self.session(session_id)?.published {
            self.commit(ServerEvent::Published {
                session_id: session_id.to_owned(),
            })?;
        }
        Ok(bytes)
    }

    /// The report as last published, read back from disk when durable.
    pub fn published_report(&self, session_id: &str) -> Result<Option<Vec<u8>>, ServerError> {
        if !self.session(session_id)?.published {
            return Ok(None);
        }
        match self.report_path(session_id) {
            Some(p) => Ok(Some(std::fs::read(p)?)),
            None => self.report_bytes(session_id).map(Some),
        }
    }

    fn student_known(&self, student_id: &str, test_id: &str, now: u64) -> bool {
        self.state.sessions.values().any(|s| {
            s.roster.iter().any(|r| r.student_id == student_id)
                || (s.mode == SessionMode::Pull
                    && !s.self_assessment
                    && s.roster.is_empty()
                    && s.test_id == test_id
                    && now < s.deadline)
        })
    }

    /// Creates a single-student PULL session and its agent, already
    /// IN_TRANSIT to the requester. The caller delivers it (as the reply to
    /// the pull request).
    pub fn handle_pull_request(
        &mut self,
        req: &PullRequest,
        now: u64,
    ) -> Result<AgentSnapshot, ServerError> {
        let graph = self
            .tests
            .get(&req.test_id)
            .cloned()
            .ok_or_else(|| ServerError::UnknownTest(req.test_id.clone()))?;
        if !self.student_known(&req.student_id, &req.test_id, now) {
            return Err(ServerError::UnknownStudent(req.student_id.clone()));
        }
        if !req.reply.is_valid() {
            return Err(ServerError::InvalidEndpoint(req.reply.to_string()));
        }
        let deadline = self
            .state
            .sessions
            .values()
            .filter(|s| {
                s.mode == SessionMode::Pull
                    && !s.self_assessment
                    && s.test_id == req.test_id
                    && now < s.deadline
            })
            .map(|s| s.deadline)
            .max()
            .unwrap_or(now + self.config.pull_duration_ms);
        let session_id = format!("pull-{}", self.state.pull_counter + 1);
        let created = create_evaluation_agent(
            self.ids.next_id(),
            EvaluationSpec {
                session_id: session_id.clone(),
                student_id: req.student_id.clone(),
                mode: SessionMode::Pull,
                home: self.config.home.clone(),
                target: req.reply.clone(),
                deadline,
            },
            graph,
        )?;
        let snapshot = step_agent(&created, AgentEvent::Dispatched)?;
        let session = ExamSession {
            session_id,
            test_id: req.test_id.clone(),
            mode: SessionMode::Pull,
            roster: vec![RosterEntry::new(req.student_id.clone(), req.reply.clone())],
            deadline,
            per_student: BTreeMap::from([(
                req.student_id.clone(),
                AgentEntry {
                    agent_id: Some(snapshot.agent_id),
                    status: AgentStatus::InTransit,
                    last_seq: snapshot.seq,
                    failure: None,
                },
            )]),
            grade_book: BTreeMap::new(),
            published: false,
            dispatched: true,
            self_assessment: true,
        };
        self.commit(ServerEvent::SessionCreated { session })?;
        Ok(snapshot)
    }

    /// Creates an install agent for `hosts`, IN_TRANSIT to the first one.
    pub fn dispatch_install(
        &mut self,
        config_payload: BTreeMap<String, String>,
        hosts: Vec<EndpointAddress>,
        now: u64,
    ) -> Result<AgentSnapshot, ServerError> {
        if let Some(bad) = hosts.iter().find(|h| !h.is_valid()) {
            return Err(ServerError::InvalidEndpoint(bad.to_string()));
        }
        let budget = self.config.policy.install_hop_budget_ms;
        let deadline = now + budget * (hosts.len() as u64 + 1);
        let created = create_install_agent(
            self.ids.next_id(),
            format!("install-{}", self.state.install_counter + 1),
            config_payload.clone(),
            self.config.home.clone(),
            hosts.clone(),
            deadline,
        )?;
        let snapshot = step_agent(&created, AgentEvent::Dispatched)?;
        self.commit(ServerEvent::InstallCreated {
            record: InstallRecord {
                agent_id: snapshot.agent_id,
                config_payload,
                itinerary: hosts,
                status: AgentStatus::InTransit,
                report: None,
            },
        })?;
        Ok(snapshot)
    }

    /// Answers one inbound wire message.
    pub fn handle_message(&mut self, msg: Message, now: u64) -> Message {
        let result = match msg {
            Message::Return(snapshot) => self.ingest_return(&snapshot).map(Message::ReturnAck),
            Message::PullRequest(req) => self.handle_pull_request(&req, now).map(Message::Dispatch),
            Message::Ping(n) => Ok(Message::Pong(n)),
            other => Err(ServerError::BadMessage(format!(
                "server does not accept {}",
                other.msg_type()
            ))),
        };
        result.unwrap_or_else(|e| {
            log::info!("refusing message: {e}");
            Message::error(e.code(), e.to_string())
        })
    }
}
