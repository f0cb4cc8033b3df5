#![allow(dead_code)]

use std::collections::BTreeMap;

use mage_core::agent::{
    create_evaluation_agent, create_install_agent, step_agent, EvaluationSpec,
};
use mage_core::engine::{Answer, Next};
use mage_core::samples::random_graph;
use mage_core::sim::{correct_answer, wrong_answer};
use mage_core::{AgentEvent, AgentId, AgentSnapshot, AgentStatus, EndpointAddress, InstallReportEntry, SessionMode};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const NAMES: [&str; 6] = ["ana", "Bo Li", "zoë", "李雷", "o'neil", "s\u{00e9}b"];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn endpoint(rng: &mut ChaCha8Rng) -> EndpointAddress {
    EndpointAddress::new(format!("host-{}.example", rng.random_range(0..100)), rng.random_range(1..=u16::MAX))
}

/// An evaluation or install agent taken a random number of legal steps
/// through its lifecycle.
pub fn random_snapshot(seed: u64) -> AgentSnapshot {
    let mut rng = rng(seed);
    let id = AgentId::from_rng(&mut rng);
    if rng.random_bool(0.7) {
        let graph = random_graph(&mut rng, 6);
        let spec = EvaluationSpec {
            session_id: format!("session-{}", rng.random_range(1..50)),
            student_id: NAMES.choose(&mut rng).unwrap().to_string(),
            mode: if rng.random_bool(0.5) { SessionMode::Push } else { SessionMode::Pull },
            home: endpoint(&mut rng),
            target: endpoint(&mut rng),
            deadline: rng.random_range(0..u64::from(u32::MAX)),
        };
        let mut s = create_evaluation_agent(id, spec, graph).unwrap();
        let steps = rng.random_range(0..12);
        for _ in 0..steps {
            let event = match s.status {
                AgentStatus::Created => AgentEvent::Dispatched,
                AgentStatus::InTransit => AgentEvent::Arrived,
                AgentStatus::Executing => {
                    let state = s.eval_state().unwrap();
                    match &state.current {
                        Next::End => AgentEvent::EvalDone,
                        Next::Question(_) if rng.random_bool(0.1) => AgentEvent::DeadlineReached,
                        Next::Question(q) => {
                            let node = s.graph.as_ref().unwrap().node(q).unwrap();
                            let payload = if rng.random_bool(0.5) {
                                correct_answer(node)
                            } else {
                                wrong_answer(node)
                            };
                            AgentEvent::AnswerRecorded(Answer {
                                question_id: q.clone(),
                                payload,
                                answered_at: rng.random_range(0..1_000_000),
                            })
                        }
                    }
                }
                AgentStatus::Returning => AgentEvent::ReturnAcked,
                _ => break,
            };
            s = step_agent(&s, event).unwrap();
        }
        s
    } else {
        let payload: BTreeMap<String, String> = (0..rng.random_range(0..4))
            .map(|i| (format!("key{i}"), NAMES.choose(&mut rng).unwrap().to_string()))
            .collect();
        let hops = (0..rng.random_range(1..4)).map(|_| endpoint(&mut rng)).collect();
        let mut s = create_install_agent(
            id,
            format!("install-{}", rng.random_range(1..9)),
            payload,
            endpoint(&mut rng),
            hops,
            rng.random_range(0..u64::from(u32::MAX)),
        )
        .unwrap();
        for _ in 0..rng.random_range(0..8) {
            let hop = s.current_hop().cloned();
            let event = match (s.status, hop) {
                (AgentStatus::Created, _) => AgentEvent::Dispatched,
                (AgentStatus::InTransit, Some(h)) if rng.random_bool(0.3) => {
                    AgentEvent::HopDone(InstallReportEntry::skipped(h))
                }
                (AgentStatus::InTransit, _) => AgentEvent::Arrived,
                (AgentStatus::Executing, Some(h)) => AgentEvent::HopDone(InstallReportEntry::applied(
                    h,
                    rng.random_range(1..10),
                    rng.random_range(0..1_000_000),
                )),
                (AgentStatus::Returning, _) => AgentEvent::ReturnAcked,
                _ => break,
            };
            s = step_agent(&s, event).unwrap();
        }
        s
    }
}
