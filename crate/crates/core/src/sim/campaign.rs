use std::collections::BTreeMap;
use std::sync::Arc;

use super::net::{AfterAttempt, Exchange, Net, Queue};
use super::policy::Student;
use super::{baseline, CampaignConfig, CampaignMetrics, CampaignOutcome, SimError, SimMode, TraceEvent, SERVER_LINK};
use crate::agent::{AgentId, AgentStatus, EndpointAddress, SeededIds, SessionMode};
use crate::canonical;
use crate::clock::ManualClock;
use crate::engine::{grading_ops_on_thread, TestGraph};
use crate::host::{ExamView, HostError, HostPlatform, Outbound};
use crate::server::{Dispatch, NewSession, RosterEntry, ServerConfig, ServerNode};
use crate::wire::Message;

pub(crate) fn server_endpoint() -> EndpointAddress {
    EndpointAddress::new("server.sim", 7400)
}

pub(crate) fn host_endpoint(link: &str) -> EndpointAddress {
    EndpointAddress::new(format!("{link}.sim"), 7401)
}

/// Runs one exam campaign and compiles its results.
///
/// Deterministic: equal configs give byte-identical traces and metrics.
pub fn run_campaign(cfg: &CampaignConfig, graph: &TestGraph) -> Result<CampaignOutcome, SimError> {
    cfg.validate()?;
    let report = crate::engine::validate_graph(graph);
    if !report.is_ok() {
        return Err(SimError::InvalidConfig(format!("test {}: {report}", graph.test_id)));
    }
    match cfg.mode {
        SimMode::Agent => AgentWorld::new(cfg, graph)?.run(),
        SimMode::Baseline | SimMode::BaselineStatic => baseline::run(cfg, graph),
    }
}

/// The server side every campaign kind starts from: one PUSH session with
/// every student enrolled, agents prepared.
pub(crate) struct Setup {
    pub server: ServerNode,
    pub session_id: String,
    pub students: Vec<String>,
    pub dispatches: Vec<Dispatch>,
}

impl Setup {
    pub fn new(cfg: &CampaignConfig, graph: &TestGraph) -> Result<Setup, SimError> {
        let mut config = ServerConfig::new(server_endpoint());
        config.policy = cfg.retry;
        let tests = BTreeMap::from([(graph.test_id.clone(), graph.clone())]);
        let mut server =
            ServerNode::in_memory(config, tests, Box::new(SeededIds::new(cfg.network.seed)));
        let students = cfg.student_ids();
        let session = server.create_session(NewSession {
            test_id: graph.test_id.clone(),
            mode: SessionMode::Push,
            roster: students
                .iter()
                .map(|s| RosterEntry::new(s.clone(), host_endpoint(s)))
                .collect(),
            deadline: cfg.deadline_ms,
        })?;
        let dispatches = server.prepare_dispatch(&session.session_id)?;
        Ok(Setup {
            server,
            session_id: session.session_id,
            students,
            dispatches,
        })
    }

    /// Publishes and packages the outcome.
    pub fn finish(
        mut self,
        mode: SimMode,
        test_id: &str,
        trace: Vec<TraceEvent>,
    ) -> Result<CampaignOutcome, SimError> {
        let report = self.server.publish_results(&self.session_id)?;
        let results = self.server.compile_results(&self.session_id)?;
        let grade_book = canonical::to_bytes(&self.server.session(&self.session_id)?.grade_book);
        let metrics = CampaignMetrics::from_trace(mode, test_id, &self.students, &trace);
        Ok(CampaignOutcome {
            metrics,
            results,
            report,
            grade_book,
            trace,
        })
    }

    pub fn completed(&self, student: &str) -> bool {
        self.server
            .session(&self.session_id)
            .ok()
            .and_then(|s| s.per_student.get(student))
            .is_some_and(|e| e.status == AgentStatus::Completed)
    }
}

enum Purpose {
    Dispatch(usize),
    Return(usize),
}

enum Ev {
    Attempt(usize),
    Arrive { x: usize, reply: bool, frame: Vec<u8> },
    GiveUp(usize),
    Answer(usize),
    HostDeadline(usize),
    Sweep,
}

struct AgentWorld<'a> {
    cfg: &'a CampaignConfig,
    graph: &'a TestGraph,
    clock: ManualClock,
    setup: Setup,
    hosts: Vec<HostPlatform>,
    learners: Vec<Student>,
    agents: Vec<AgentId>,
    started: Vec<bool>,
    returning: Vec<bool>,
    ingested: Vec<bool>,
    ack_lost: Vec<bool>,
    net: Net,
    q: Queue<Ev>,
    xs: Vec<Exchange<Purpose>>,
}

impl<'a> AgentWorld<'a> {
    fn new(cfg: &'a CampaignConfig, graph: &'a TestGraph) -> Result<Self, SimError> {
        let clock = ManualClock::new(0);
        let setup = Setup::new(cfg, graph)?;
        let n = setup.students.len();
        let hosts = setup
            .students
            .iter()
            .map(|s| HostPlatform::in_memory(host_endpoint(s), Arc::new(clock.clone())))
            .collect();
        Ok(AgentWorld {
            cfg,
            graph,
            hosts,
            learners: (0..n).map(|i| Student::new(&cfg.policy, i)).collect(),
            agents: setup.dispatches.iter().map(|d| d.snapshot.agent_id).collect(),
            started: vec![false; n],
            returning: vec![false; n],
            ingested: vec![false; n],
            ack_lost: vec![false; n],
            net: Net::new(cfg.network.clone()),
            q: Queue::new(),
            xs: Vec::new(),
            clock,
            setup,
        })
    }

    fn open(&mut self, now: u64, from: &str, to: &str, msg: Message, give_up_at: u64, purpose: Purpose) -> Result<(), SimError> {
        let frame = msg.encode().map_err(crate::wire::WireError::from)?;
        let schedule = self.net.schedule(self.cfg.retry, now, give_up_at);
        self.xs.push(Exchange {
            from: from.to_owned(),
            to: to.to_owned(),
            msg: msg.msg_type().name(),
            frame,
            schedule,
            done: false,
            purpose,
        });
        self.q.push(now, Ev::Attempt(self.xs.len() - 1));
        Ok(())
    }

    fn run(mut self) -> Result<CampaignOutcome, SimError> {
        let give_up = self.cfg.retry.give_up_at(self.cfg.deadline_ms);
        let dispatches = std::mem::take(&mut self.setup.dispatches);
        for (i, d) in dispatches.into_iter().enumerate() {
            let link = self.setup.students[i].clone();
            self.open(0, SERVER_LINK, &link, Message::Dispatch(d.snapshot), give_up, Purpose::Dispatch(i))?;
        }
        self.q.push(give_up, Ev::Sweep);

        while let Some((now, ev)) = self.q.pop() {
            self.clock.set(now);
            self.step(now, ev)?;
        }
        let trace = std::mem::take(&mut self.net.trace);
        self.setup.finish(SimMode::Agent, &self.graph.test_id, trace)
    }

    fn step(&mut self, now: u64, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Attempt(x) => {
                if self.xs[x].done {
                    return Ok(());
                }
                let (sent, after) = self.xs[x].attempt(&mut self.net, now);
                if let Some(at) = sent.arrives_at {
                    let frame = self.xs[x].frame.clone();
                    self.q.push(at, Ev::Arrive { x, reply: false, frame });
                }
                match after {
                    AfterAttempt::RetryAt(at) => self.q.push(at, Ev::Attempt(x)),
                    AfterAttempt::GiveUpAt(at) => self.q.push(at, Ev::GiveUp(x)),
                }
            }
            Ev::Arrive { x, reply: false, frame } => self.deliver_request(now, x, &frame)?,
            Ev::Arrive { x, reply: true, frame } => self.deliver_reply(x, &frame)?,
            Ev::GiveUp(x) => {
                if self.xs[x].done {
                    return Ok(());
                }
                self.xs[x].done = true;
                let e = &self.xs[x];
                self.net.note(TraceEvent::GaveUp {
                    at: now,
                    from: e.from.clone(),
                    to: e.to.clone(),
                    msg: e.msg.to_owned(),
                });
                match e.purpose {
                    Purpose::Dispatch(i) => {
                        let student = self.setup.students[i].clone();
                        self.setup.server.record_dispatch(
                            &self.setup.session_id,
                            &student,
                            Err("DEADLINE_EXCEEDED".into()),
                        )?;
                    }
                    Purpose::Return(i) => self.returning[i] = false,
                }
            }
            Ev::Answer(i) => self.answer(now, i)?,
            Ev::HostDeadline(i) => {
                self.hosts[i].enforce_deadline(now)?;
                self.pump(now, i)?;
            }
            Ev::Sweep => {
                self.setup.server.expire_overdue(now)?;
            }
        }
        Ok(())
    }

    fn deliver_request(&mut self, now: u64, x: usize, frame: &[u8]) -> Result<(), SimError> {
        let msg = Message::decode(frame)?;
        let (from, to) = (self.xs[x].from.clone(), self.xs[x].to.clone());
        let reply = if to == SERVER_LINK {
            let before = grading_ops_on_thread();
            let reply = self.setup.server.handle_message(msg, now);
            let ops = grading_ops_on_thread() - before;
            if let Purpose::Return(i) = self.xs[x].purpose {
                if ops > 0 {
                    self.net.note(TraceEvent::Graded {
                        at: now,
                        student: self.setup.students[i].clone(),
                        ops,
                    });
                }
                let student = self.setup.students[i].clone();
                if !self.ingested[i] && self.setup.completed(&student) {
                    self.ingested[i] = true;
                    self.net.note(TraceEvent::Ingested { at: now, student });
                }
            }
            reply
        } else {
            let i = self.host_index(x);
            let reply = self.hosts[i].handle_message(msg);
            self.after_arrival(now, i)?;
            reply
        };
        let forced = matches!(reply, Message::ReturnAck(_))
            && self.cfg.force_duplicate_return
            && match self.xs[x].purpose {
                Purpose::Return(i) => !std::mem::replace(&mut self.ack_lost[i], true),
                Purpose::Dispatch(_) => false,
            };
        let bytes = reply.encode().map_err(crate::wire::WireError::from)?;
        let sent = self.net.send(now, &to, &from, reply.msg_type().name(), bytes.len(), forced);
        if let Some(at) = sent.arrives_at {
            self.q.push(at, Ev::Arrive { x, reply: true, frame: bytes });
        }
        Ok(())
    }

    fn deliver_reply(&mut self, x: usize, frame: &[u8]) -> Result<(), SimError> {
        if self.xs[x].done {
            return Ok(());
        }
        let msg = Message::decode(frame)?;
        match (&self.xs[x].purpose, msg) {
            (&Purpose::Dispatch(i), Message::DispatchAck(ack)) if ack.agent_id == self.agents[i] => {
                self.xs[x].done = true;
                let student = self.setup.students[i].clone();
                self.setup
                    .server
                    .record_dispatch(&self.setup.session_id, &student, Ok(ack.seq))?;
            }
            (&Purpose::Dispatch(i), Message::Error { reason, .. }) => {
                self.xs[x].done = true;
                let student = self.setup.students[i].clone();
                self.setup
                    .server
                    .record_dispatch(&self.setup.session_id, &student, Err(reason))?;
            }
            (&Purpose::Return(i), Message::ReturnAck(ack)) if ack.agent_id == self.agents[i] => {
                self.xs[x].done = true;
                self.returning[i] = false;
                self.hosts[i].on_return_acked(&ack.agent_id)?;
            }
            (&Purpose::Return(i), Message::Error { reason, .. }) => {
                log::debug!("return of {} refused: {reason}", self.setup.students[i]);
                self.xs[x].done = true;
                self.returning[i] = false;
            }
            _ => {}
        }
        Ok(())
    }

    fn host_index(&self, x: usize) -> usize {
        match self.xs[x].purpose {
            Purpose::Dispatch(i) | Purpose::Return(i) => i,
        }
    }

    fn after_arrival(&mut self, now: u64, i: usize) -> Result<(), SimError> {
        let Some(s) = self.hosts[i].agent(&self.agents[i]) else {
            return Ok(());
        };
        if s.status == AgentStatus::Executing && !self.started[i] {
            self.started[i] = true;
            let deadline = s.deadline;
            self.q.push(now + self.cfg.think_ms, Ev::Answer(i));
            self.q.push(deadline.max(now), Ev::HostDeadline(i));
        }
        self.pump(now, i)
    }

    fn answer(&mut self, now: u64, i: usize) -> Result<(), SimError> {
        let id = self.agents[i];
        let question = match self.hosts[i].current_question(&id)? {
            ExamView::Question { question } => question,
            ExamView::Terminal { .. } => return self.pump(now, i),
        };
        let node = self
            .graph
            .node(&question.question_id)
            .expect("host shows a question of the test");
        let payload = self.learners[i].answer(node);
        match self.hosts[i].submit_answer(&id, Some(&question.question_id), payload) {
            Ok(view) => {
                self.net.note(TraceEvent::Answered {
                    at: now,
                    student: self.setup.students[i].clone(),
                });
                if matches!(view, ExamView::Question { .. }) {
                    self.q.push(now + self.cfg.think_ms, Ev::Answer(i));
                }
            }
            Err(HostError::DeadlinePassed(_)) => {}
            Err(e) => return Err(e.into()),
        }
        self.pump(now, i)
    }

    /// Starts a RETURN exchange for a finished agent that is not already
    /// being returned.
    fn pump(&mut self, now: u64, i: usize) -> Result<(), SimError> {
        if self.returning[i] {
            return Ok(());
        }
        for out in self.hosts[i].outbound() {
            if let Outbound::Return { snapshot, .. } = out {
                self.returning[i] = true;
                let give_up = self.cfg.retry.give_up_at(snapshot.deadline);
                let link = self.setup.students[i].clone();
                self.open(now, &link, SERVER_LINK, Message::Return(snapshot), give_up, Purpose::Return(i))?;
            }
        }
        Ok(())
    }
}
