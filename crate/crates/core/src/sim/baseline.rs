//! Client-server baseline: the server keeps each student's evaluation and
//! grades every answer itself. Frames use the same envelope as the agent
//! protocol; their payloads are the documents below.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::campaign::Setup;
use super::net::{AfterAttempt, Exchange, Net, Queue};
use super::policy::Student;
use super::{CampaignConfig, CampaignOutcome, SimError, SimMode, TraceEvent, SERVER_LINK};
use crate::agent::{step_agent, AgentEvent, AgentSnapshot, AgentStatus};
use crate::canonical;
use crate::engine::{grading_ops_on_thread, Answer, AnswerPayload, Next, QuestionId, TestGraph};
use crate::host::{ExamView, QuestionView};
use crate::wire::FRAME_OVERHEAD;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
enum Doc {
    Start {
        student_id: String,
    },
    Question {
        question: QuestionView,
    },
    Questionnaire {
        questions: Vec<QuestionView>,
    },
    Answer {
        student_id: String,
        question_id: QuestionId,
        payload: AnswerPayload,
    },
    Submit {
        student_id: String,
        answers: BTreeMap<QuestionId, AnswerPayload>,
    },
    Finish {
        student_id: String,
        partial: bool,
    },
}

impl Doc {
    fn name(&self) -> &'static str {
        match self {
            Doc::Start { .. } => "START",
            Doc::Question { .. } => "QUESTION",
            Doc::Questionnaire { .. } => "QUESTIONNAIRE",
            Doc::Answer { .. } => "ANSWER",
            Doc::Submit { .. } => "SUBMIT",
            Doc::Finish { .. } => "FINISH",
        }
    }

    fn wire_len(&self) -> usize {
        FRAME_OVERHEAD + canonical::to_bytes(self).len()
    }
}

enum Ev {
    Attempt(usize),
    Arrive { x: usize, reply: bool, doc: Doc },
    GiveUp(usize),
    /// The student has worked out an answer to this question.
    Answer(usize, QuestionId),
    /// The student has filled in the whole questionnaire.
    Submit(usize),
    ServerDeadline,
    Sweep,
}

struct World<'a> {
    cfg: &'a CampaignConfig,
    graph: &'a TestGraph,
    setup: Setup,
    /// The evaluation as kept on the server, once the student has started.
    runs: Vec<Option<AgentSnapshot>>,
    prepared: Vec<Option<AgentSnapshot>>,
    learners: Vec<Student>,
    ingested: Vec<bool>,
    net: Net,
    q: Queue<Ev>,
    xs: Vec<Exchange<(usize, Doc)>>,
}

pub(crate) fn run(cfg: &CampaignConfig, graph: &TestGraph) -> Result<CampaignOutcome, SimError> {
    let mut setup = Setup::new(cfg, graph)?;
    let n = setup.students.len();
    let prepared = std::mem::take(&mut setup.dispatches)
        .into_iter()
        .map(|d| Some(d.snapshot))
        .collect();
    let mut w = World {
        cfg,
        graph,
        setup,
        runs: vec![None; n],
        prepared,
        learners: (0..n).map(|i| Student::new(&cfg.policy, i)).collect(),
        ingested: vec![false; n],
        net: Net::new(cfg.network.clone()),
        q: Queue::new(),
        xs: Vec::new(),
    };
    for i in 0..n {
        let student_id = w.setup.students[i].clone();
        w.open(0, i, Doc::Start { student_id });
    }
    w.q.push(cfg.deadline_ms, Ev::ServerDeadline);
    w.q.push(cfg.retry.give_up_at(cfg.deadline_ms), Ev::Sweep);
    while let Some((now, ev)) = w.q.pop() {
        w.step(now, ev)?;
    }
    let trace = std::mem::take(&mut w.net.trace);
    w.setup.finish(cfg.mode, &graph.test_id, trace)
}

impl World<'_> {
    fn open(&mut self, now: u64, i: usize, doc: Doc) {
        let give_up = self.cfg.retry.give_up_at(self.cfg.deadline_ms);
        let schedule = self.net.schedule(self.cfg.retry, now, give_up);
        self.xs.push(Exchange {
            from: self.setup.students[i].clone(),
            to: SERVER_LINK.to_owned(),
            msg: doc.name(),
            frame: canonical::to_bytes(&doc),
            schedule,
            done: false,
            purpose: (i, doc),
        });
        self.q.push(now, Ev::Attempt(self.xs.len() - 1));
    }

    fn step(&mut self, now: u64, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Attempt(x) => {
                if self.xs[x].done {
                    return Ok(());
                }
                let e = &mut self.xs[x];
                let sent = self.net.send(now, &e.from, &e.to, e.msg, FRAME_OVERHEAD + e.frame.len(), false);
                let after = match e.schedule.next_after_failure() {
                    Some(at) => AfterAttempt::RetryAt(at),
                    None => AfterAttempt::GiveUpAt(now + 2 * self.net.latency(&e.from, &e.to) + 1),
                };
                if let Some(at) = sent.arrives_at {
                    let doc = e.purpose.1.clone();
                    self.q.push(at, Ev::Arrive { x, reply: false, doc });
                }
                match after {
                    AfterAttempt::RetryAt(at) => self.q.push(at, Ev::Attempt(x)),
                    AfterAttempt::GiveUpAt(at) => self.q.push(at, Ev::GiveUp(x)),
                }
            }
            Ev::Arrive { x, reply: false, doc } => {
                let i = self.xs[x].purpose.0;
                let before = grading_ops_on_thread();
                let reply = self.serve(now, i, doc)?;
                let ops = grading_ops_on_thread() - before;
                let student = self.setup.students[i].clone();
                if ops > 0 {
                    self.net.note(TraceEvent::Graded { at: now, student, ops });
                }
                let e = &self.xs[x];
                let sent = self.net.send(now, &e.to, &e.from, reply.name(), reply.wire_len(), false);
                if let Some(at) = sent.arrives_at {
                    self.q.push(at, Ev::Arrive { x, reply: true, doc: reply });
                }
            }
            Ev::Arrive { x, reply: true, doc } => {
                if std::mem::replace(&mut self.xs[x].done, true) {
                    return Ok(());
                }
                let i = self.xs[x].purpose.0;
                match doc {
                    Doc::Question { question } => {
                        self.q.push(now + self.cfg.think_ms, Ev::Answer(i, question.question_id));
                    }
                    Doc::Questionnaire { questions } => {
                        let think = self.cfg.think_ms * questions.len() as u64;
                        self.q.push(now + think, Ev::Submit(i));
                    }
                    _ => {}
                }
            }
            Ev::GiveUp(x) => {
                if !std::mem::replace(&mut self.xs[x].done, true) {
                    let e = &self.xs[x];
                    self.net.note(TraceEvent::GaveUp {
                        at: now,
                        from: e.from.clone(),
                        to: e.to.clone(),
                        msg: e.msg.to_owned(),
                    });
                }
            }
            Ev::Answer(i, question_id) => {
                let node = self.graph.node(&question_id).expect("question of the test");
                let payload = self.learners[i].answer(node);
                let student_id = self.setup.students[i].clone();
                self.open(now, i, Doc::Answer { student_id, question_id, payload });
            }
            Ev::Submit(i) => {
                // Every node is answered up front: the client cannot know
                // which branch the server will take.
                let answers = self
                    .graph
                    .nodes
                    .iter()
                    .map(|n| (n.id.clone(), self.learners[i].answer(n)))
                    .collect();
                let student_id = self.setup.students[i].clone();
                self.open(now, i, Doc::Submit { student_id, answers });
            }
            Ev::ServerDeadline => {
                for i in 0..self.runs.len() {
                    self.cut_if_due(now, i)?;
                }
            }
            Ev::Sweep => {
                self.setup.server.expire_overdue(now)?;
            }
        }
        Ok(())
    }

    /// The server's side of one request.
    fn serve(&mut self, now: u64, i: usize, doc: Doc) -> Result<Doc, SimError> {
        match doc {
            Doc::Start { .. } => {
                if self.runs[i].is_none() {
                    let prepared = self.prepared[i].take().expect("agent prepared once");
                    let run = step_agent(&prepared, AgentEvent::Arrived)?;
                    let student = self.setup.students[i].clone();
                    self.setup
                        .server
                        .record_dispatch(&self.setup.session_id, &student, Ok(run.seq))?;
                    self.runs[i] = Some(run);
                }
                self.cut_if_due(now, i)?;
                if self.cfg.mode == SimMode::BaselineStatic {
                    return Ok(Doc::Questionnaire {
                        questions: self.questionnaire(i),
                    });
                }
            }
            Doc::Answer {
                question_id,
                payload,
                ..
            } => {
                self.cut_if_due(now, i)?;
                let current = self.current(i);
                if current.as_question() == Some(&question_id) {
                    self.record(now, i, question_id, payload)?;
                }
            }
            Doc::Submit { answers, .. } => {
                self.cut_if_due(now, i)?;
                while let Next::Question(q) = self.current(i) {
                    match answers.get(&q) {
                        Some(p) => self.record(now, i, q, p.clone())?,
                        None => break,
                    }
                }
            }
            reply => {
                return Err(SimError::InvalidConfig(format!(
                    "server got a {} document",
                    reply.name()
                )))
            }
        }
        Ok(self.view(i))
    }

    fn current(&self, i: usize) -> Next {
        match &self.runs[i] {
            Some(run) if run.status == AgentStatus::Executing => run
                .eval_state()
                .map_or(Next::End, |s| s.current.clone()),
            _ => Next::End,
        }
    }

    fn view(&self, i: usize) -> Doc {
        let student_id = self.setup.students[i].clone();
        let Some(run) = &self.runs[i] else {
            return Doc::Finish { student_id, partial: true };
        };
        match ExamView::of(run) {
            Some(ExamView::Question { question }) => Doc::Question { question },
            _ => Doc::Finish {
                student_id,
                partial: run.partial,
            },
        }
    }

    fn questionnaire(&self, i: usize) -> Vec<QuestionView> {
        let agent_id = self.runs[i].as_ref().map(|r| r.agent_id).expect("started");
        self.graph
            .nodes
            .iter()
            .map(|n| QuestionView {
                agent_id,
                question_id: n.id.clone(),
                prompt: n.prompt.clone(),
                kind: n.kind,
                choices: n.choices.clone(),
                points: n.points,
            })
            .collect()
    }

    fn record(&mut self, now: u64, i: usize, question_id: QuestionId, payload: AnswerPayload) -> Result<(), SimError> {
        let run = self.runs[i].as_ref().expect("started");
        let answer = Answer {
            question_id,
            payload,
            answered_at: now,
        };
        let mut next = step_agent(run, AgentEvent::AnswerRecorded(answer))?;
        self.net.note(TraceEvent::Answered {
            at: now,
            student: self.setup.students[i].clone(),
        });
        if next.eval_state().is_some_and(|s| s.is_terminal()) {
            next = step_agent(&next, AgentEvent::EvalDone)?;
        }
        self.runs[i] = Some(next);
        self.ingest(now, i)
    }

    fn cut_if_due(&mut self, now: u64, i: usize) -> Result<(), SimError> {
        if let Some(run) = &self.runs[i] {
            if run.status == AgentStatus::Executing && now >= run.deadline {
                self.runs[i] = Some(step_agent(run, AgentEvent::DeadlineReached)?);
                self.ingest(now, i)?;
            }
        }
        Ok(())
    }

    /// Hands a finished run to the server node, which stores the results
    /// exactly as it would for a returning agent.
    fn ingest(&mut self, now: u64, i: usize) -> Result<(), SimError> {
        let Some(run) = &self.runs[i] else { return Ok(()) };
        if run.status != AgentStatus::Returning || self.ingested[i] {
            return Ok(());
        }
        self.setup.server.ingest_return(run)?;
        self.ingested[i] = true;
        self.net.note(TraceEvent::Ingested {
            at: now,
            student: self.setup.students[i].clone(),
        });
        Ok(())
    }
}
