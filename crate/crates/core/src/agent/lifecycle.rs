use std::collections::BTreeMap;

use super::{
    AgentError, AgentEvent, AgentId, AgentKind, AgentSnapshot, AgentState, AgentStatus,
    EndpointAddress, InstallOutcome, SessionMode, SNAPSHOT_SCHEMA_VERSION,
};
use crate::engine::{apply_answer, finalize, validate_graph, EvalState, TestGraph};

/// Who an evaluation agent is for and where it goes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationSpec {
    pub session_id: String,
    pub student_id: String,
    pub mode: SessionMode,
    pub home: EndpointAddress,
    pub target: EndpointAddress,
    pub deadline: u64,
}

pub fn create_evaluation_agent(
    agent_id: AgentId,
    spec: EvaluationSpec,
    graph: TestGraph,
) -> Result<AgentSnapshot, AgentError> {
    let report = validate_graph(&graph);
    if !report.is_ok() {
        return Err(AgentError::InvalidGraph(report));
    }
    Ok(AgentSnapshot {
        agent_id,
        kind: AgentKind::Evaluation,
        session_id: spec.session_id,
        student_id: spec.student_id,
        mode: Some(spec.mode),
        home: spec.home,
        itinerary: vec![spec.target],
        hop_index: 0,
        state: AgentState::Evaluation(EvalState::start(&graph)),
        graph: Some(graph),
        config_payload: None,
        deadline: spec.deadline,
        status: AgentStatus::Created,
        partial: false,
        results: None,
        seq: 0,
        schema: SNAPSHOT_SCHEMA_VERSION,
    })
}

pub fn create_install_agent(
    agent_id: AgentId,
    session_id: impl Into<String>,
    config_payload: BTreeMap<String, String>,
    home: EndpointAddress,
    itinerary: Vec<EndpointAddress>,
    deadline: u64,
) -> Result<AgentSnapshot, AgentError> {
    if itinerary.is_empty() {
        return Err(AgentError::EmptyItinerary);
    }
    Ok(AgentSnapshot {
        agent_id,
        kind: AgentKind::Install,
        session_id: session_id.into(),
        student_id: String::new(),
        mode: None,
        home,
        itinerary,
        hop_index: 0,
        graph: None,
        config_payload: Some(config_payload),
        state: AgentState::Install(Vec::new()),
        deadline,
        status: AgentStatus::Created,
        partial: false,
        results: None,
        seq: 0,
        schema: SNAPSHOT_SCHEMA_VERSION,
    })
}

/// Advances the lifecycle machine by one event.
///
/// ```text
/// CREATED --DISPATCHED--> IN_TRANSIT --ARRIVED--> EXECUTING
/// EXECUTING --ANSWER_RECORDED--> EXECUTING                  (evaluation)
/// EXECUTING --EVAL_DONE | DEADLINE_REACHED--> RETURNING     (evaluation)
/// EXECUTING --HOP_DONE(applied)--> IN_TRANSIT | RETURNING   (install)
/// IN_TRANSIT --HOP_DONE(skipped)--> IN_TRANSIT | RETURNING  (install)
/// RETURNING --RETURN_ACKED--> COMPLETED
/// ```
///
/// Every accepted event bumps `seq`.
pub fn step_agent(snapshot: &AgentSnapshot, event: AgentEvent) -> Result<AgentSnapshot, AgentError> {
    let illegal = || AgentError::IllegalTransition {
        status: snapshot.status,
        event: event.name(),
    };
    let mut next = snapshot.clone();
    match (snapshot.status, snapshot.kind, &event) {
        (AgentStatus::Created, _, AgentEvent::Dispatched) => {
            next.status = AgentStatus::InTransit;
        }
        (AgentStatus::InTransit, _, AgentEvent::Arrived) => {
            next.status = AgentStatus::Executing;
        }
        (AgentStatus::Executing, AgentKind::Evaluation, AgentEvent::AnswerRecorded(answer)) => {
            let (graph, state) = eval_parts(snapshot).ok_or_else(illegal)?;
            let advanced = apply_answer(graph, state, answer.clone())?;
            next.state = AgentState::Evaluation(advanced);
        }
        (AgentStatus::Executing, AgentKind::Evaluation, AgentEvent::EvalDone) => {
            let (graph, state) = eval_parts(snapshot).ok_or_else(illegal)?;
            next.results = Some(finalize(graph, state, false)?);
            next.partial = false;
            next.status = AgentStatus::Returning;
        }
        (AgentStatus::Executing, AgentKind::Evaluation, AgentEvent::DeadlineReached) => {
            let (graph, state) = eval_parts(snapshot).ok_or_else(illegal)?;
            next.results = Some(finalize(graph, state, true)?);
            next.partial = true;
            next.status = AgentStatus::Returning;
        }
        (status, AgentKind::Install, AgentEvent::HopDone(entry))
            if (status == AgentStatus::Executing && entry.outcome == InstallOutcome::Applied)
                || (status == AgentStatus::InTransit
                    && entry.outcome == InstallOutcome::Skipped) =>
        {
            if snapshot.current_hop() != Some(&entry.host) {
                return Err(illegal());
            }
            if let AgentState::Install(report) = &mut next.state {
                report.push(entry.clone());
            }
            next.hop_index += 1;
            next.status = if next.hop_index as usize >= next.itinerary.len() {
                AgentStatus::Returning
            } else {
                AgentStatus::InTransit
            };
        }
        (AgentStatus::Returning, _, AgentEvent::ReturnAcked) => {
            next.status = AgentStatus::Completed;
        }
        _ => return Err(illegal()),
    }
    next.seq += 1;
    Ok(next)
}

fn eval_parts(snapshot: &AgentSnapshot) -> Option<(&TestGraph, &EvalState)> {
    match (&snapshot.graph, &snapshot.state) {
        (Some(g), AgentState::Evaluation(s)) => Some((g, s)),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{InstallReportEntry, RandomIds};
    use crate::agent::IdSource;
    use crate::engine::{
        Answer, AnswerPayload, Choice, Guard, Next, QuestionKind, QuestionNode, Transition,
    };

    pub(crate) fn graph(n: usize) -> TestGraph {
        let nodes = (0..n)
            .map(|i| QuestionNode {
                id: format!("q{}", i + 1).into(),
                prompt: format!("question {}", i + 1),
                kind: QuestionKind::SingleChoice,
                choices: vec![Choice::new("a", "A"), Choice::new("b", "B")],
                correct: vec!["a".into()],
                points: 1,
                transitions: vec![Transition::new(
                    Guard::Default,
                    if i + 1 < n {
                        Next::question(format!("q{}", i + 2))
                    } else {
                        Next::End
                    },
                )],
            })
            .collect();
        TestGraph {
            test_id: "lin".into(),
            title: "linear".into(),
            entry: "q1".into(),
            nodes,
            version: 1,
        }
    }

    fn spec() -> EvaluationSpec {
        EvaluationSpec {
            session_id: "s1".into(),
            student_id: "alice".into(),
            mode: SessionMode::Push,
            home: EndpointAddress::new("server", 7400),
            target: EndpointAddress::new("alice-pc", 7401),
            deadline: 10_000,
        }
    }

    fn executing(n: usize) -> AgentSnapshot {
        let s = create_evaluation_agent(RandomIds.next_id(), spec(), graph(n)).unwrap();
        let s = step_agent(&s, AgentEvent::Dispatched).unwrap();
        step_agent(&s, AgentEvent::Arrived).unwrap()
    }

    #[test]
    fn fresh_evaluation_agent() {
        let s = create_evaluation_agent(RandomIds.next_id(), spec(), graph(1)).unwrap();
        assert_eq!(s.status, AgentStatus::Created);
        assert_eq!((s.seq, s.hop_index), (0, 0));
        let st = s.eval_state().unwrap();
        assert_eq!(st.current, Next::question("q1"));
        assert_eq!(st.raw_score, 0);
        assert!(s.results.is_none());
    }

    #[test]
    fn invalid_graph_is_refused() {
        let mut g = graph(2);
        g.nodes[1].transitions[0].target = Next::question("q1");
        let err = create_evaluation_agent(RandomIds.next_id(), spec(), g).unwrap_err();
        assert_eq!(err.code(), "INVALID_GRAPH");
    }

    #[test]
    fn ids_are_distinct() {
        let a = create_evaluation_agent(RandomIds.next_id(), spec(), graph(1)).unwrap();
        let b = create_evaluation_agent(RandomIds.next_id(), spec(), graph(1)).unwrap();
        assert_ne!(a.agent_id, b.agent_id);
    }

    #[test]
    fn dispatch_bumps_seq() {
        let s = create_evaluation_agent(RandomIds.next_id(), spec(), graph(1)).unwrap();
        let s = step_agent(&s, AgentEvent::Dispatched).unwrap();
        assert_eq!((s.status, s.seq), (AgentStatus::InTransit, 1));
    }

    #[test]
    fn deadline_finalizes_partially() {
        let s = executing(3);
        let s = step_agent(
            &s,
            AgentEvent::AnswerRecorded(Answer::new("q1", AnswerPayload::choices(["a"]), 5)),
        )
        .unwrap();
        let s = step_agent(&s, AgentEvent::DeadlineReached).unwrap();
        assert_eq!(s.status, AgentStatus::Returning);
        assert!(s.partial);
        let r = s.results.as_ref().unwrap();
        // q1 answered correctly, q2 presented and open.
        assert_eq!(r.records.len(), 2);
        assert_eq!(r.records[1].points_earned, 0);
        assert_eq!((r.raw, r.max_on_path), (1, 2));
        assert_eq!(r.percent.to_string(), "50.0");
    }

    #[test]
    fn eval_done_needs_end() {
        let s = executing(2);
        assert_eq!(
            step_agent(&s, AgentEvent::EvalDone).unwrap_err().code(),
            "NOT_TERMINAL"
        );
    }

    #[test]
    fn completed_rejects_answers() {
        let mut s = executing(1);
        for ev in [
            AgentEvent::AnswerRecorded(Answer::new("q1", AnswerPayload::choices(["b"]), 1)),
            AgentEvent::EvalDone,
            AgentEvent::ReturnAcked,
        ] {
            s = step_agent(&s, ev).unwrap();
        }
        assert_eq!(s.status, AgentStatus::Completed);
        let err = step_agent(
            &s,
            AgentEvent::AnswerRecorded(Answer::new("q1", AnswerPayload::choices(["a"]), 2)),
        )
        .unwrap_err();
        assert_eq!(
            err,
            AgentError::IllegalTransition {
                status: AgentStatus::Completed,
                event: "ANSWER_RECORDED"
            }
        );
    }

    #[test]
    fn install_hops_until_returning() {
        let hosts: Vec<_> = (1..=3).map(|i| EndpointAddress::new(format!("h{i}"), 7401)).collect();
        let cfg = BTreeMap::from([("max_agents".to_string(), "4".to_string())]);
        let mut s = create_install_agent(
            RandomIds.next_id(),
            "install-1",
            cfg,
            EndpointAddress::new("server", 7400),
            hosts.clone(),
            0,
        )
        .unwrap();
        assert_eq!(s.itinerary.len() - s.hop_index as usize, 3);
        s = step_agent(&s, AgentEvent::Dispatched).unwrap();
        s = step_agent(&s, AgentEvent::Arrived).unwrap();
        s = step_agent(&s, AgentEvent::HopDone(InstallReportEntry::applied(hosts[0].clone(), 1, 0))).unwrap();
        assert_eq!(s.status, AgentStatus::InTransit);
        s = step_agent(&s, AgentEvent::HopDone(InstallReportEntry::skipped(hosts[1].clone()))).unwrap();
        s = step_agent(&s, AgentEvent::Arrived).unwrap();
        // Reporting for the wrong host is refused.
        assert!(step_agent(&s, AgentEvent::HopDone(InstallReportEntry::applied(hosts[0].clone(), 2, 0))).is_err());
        s = step_agent(&s, AgentEvent::HopDone(InstallReportEntry::applied(hosts[2].clone(), 1, 0))).unwrap();
        assert_eq!(s.status, AgentStatus::Returning);
        assert_eq!(s.install_report().unwrap().len(), 3);
    }

    #[test]
    fn empty_itinerary() {
        let err = create_install_agent(
            RandomIds.next_id(),
            "i",
            BTreeMap::new(),
            EndpointAddress::new("server", 7400),
            vec![],
            0,
        )
        .unwrap_err();
        assert_eq!(err, AgentError::EmptyItinerary);
    }
}
