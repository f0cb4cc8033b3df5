use super::{AgentKind, AgentSnapshot, AgentState, AgentStatus};
use crate::canonical::{self, CanonicalError};

/// Bumped whenever the snapshot layout changes; platforms refuse other values.
pub const SNAPSHOT_SCHEMA_VERSION: u32 = 1;

pub fn encode_snapshot(snapshot: &AgentSnapshot) -> Vec<u8> {
    canonical::to_bytes(snapshot)
}

/// Decodes canonical snapshot bytes and checks the cross-field rules that
/// serde alone can't express.
pub fn decode_snapshot(bytes: &[u8]) -> Result<AgentSnapshot, CanonicalError> {
    let snapshot: AgentSnapshot = canonical::from_bytes(bytes)?;
    check_schema(&snapshot).map_err(CanonicalError::SchemaViolation)?;
    Ok(snapshot)
}

fn check_schema(s: &AgentSnapshot) -> Result<(), String> {
    if s.schema != SNAPSHOT_SCHEMA_VERSION {
        return Err(format!("unsupported snapshot schema {}", s.schema));
    }
    if !s.home.is_valid() || s.itinerary.iter().any(|e| !e.is_valid()) {
        return Err("endpoint with empty host or port 0".into());
    }
    if s.hop_index as usize > s.itinerary.len() {
        return Err("hop_index beyond itinerary".into());
    }
    match s.kind {
        AgentKind::Evaluation => {
            if s.graph.is_none() {
                return Err("evaluation agent without graph".into());
            }
            if s.config_payload.is_some() {
                return Err("evaluation agent with config_payload".into());
            }
            if !matches!(s.state, AgentState::Evaluation(_)) {
                return Err("evaluation agent with install state".into());
            }
            if s.itinerary.len() != 1 {
                return Err("evaluation agent itinerary must have one stop".into());
            }
            if s.mode.is_none() {
                return Err("evaluation agent without mode".into());
            }
            let returned = matches!(s.status, AgentStatus::Returning | AgentStatus::Completed);
            if returned != s.results.is_some() {
                return Err("results present iff RETURNING or COMPLETED".into());
            }
        }
        AgentKind::Install => {
            if s.graph.is_some() || s.results.is_some() || s.mode.is_some() {
                return Err("install agent with evaluation fields".into());
            }
            if s.config_payload.is_none() {
                return Err("install agent without config_payload".into());
            }
            if !matches!(s.state, AgentState::Install(_)) {
                return Err("install agent with evaluation state".into());
            }
            if s.itinerary.is_empty() {
                return Err("install agent with empty itinerary".into());
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{
        create_evaluation_agent, create_install_agent, EndpointAddress, EvaluationSpec,
        SessionMode, SeededIds, IdSource,
    };
    use crate::engine::{Choice, Guard, Next, QuestionKind, QuestionNode, TestGraph, Transition};
    use std::collections::BTreeMap;

    fn graph() -> TestGraph {
        TestGraph {
            test_id: "t".into(),
            title: "Tiny".into(),
            entry: "q1".into(),
            nodes: vec![QuestionNode {
                id: "q1".into(),
                prompt: "pick".into(),
                kind: QuestionKind::SingleChoice,
                choices: vec![Choice::new("a", "A"), Choice::new("b", "B")],
                correct: vec!["a".into()],
                points: 1,
                transitions: vec![Transition::new(Guard::Default, Next::End)],
            }],
            version: 1,
        }
    }

    fn fresh() -> AgentSnapshot {
        create_evaluation_agent(
            SeededIds::new(1).next_id(),
            EvaluationSpec {
                session_id: "s".into(),
                student_id: "st".into(),
                mode: SessionMode::Push,
                home: EndpointAddress::new("srv", 7400),
                target: EndpointAddress::new("pc", 7401),
                deadline: 60_000,
            },
            graph(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_fresh() {
        let s = fresh();
        let bytes = encode_snapshot(&s);
        assert_eq!(decode_snapshot(&bytes).unwrap(), s);
    }

    #[test]
    fn out_of_order_keys_are_non_canonical() {
        let bytes = encode_snapshot(&fresh());
        let text = String::from_utf8(bytes).unwrap();
        // Move the leading "agent_id" member to the end of the object.
        let body = &text[1..text.len() - 1];
        let (first, rest) = body.split_once(",\"deadline\"").unwrap();
        let reordered = format!("{{\"deadline\"{rest},{first}}}");
        let err = decode_snapshot(reordered.as_bytes()).unwrap_err();
        assert_eq!(err.code(), "NON_CANONICAL");
    }

    #[test]
    fn evaluation_without_graph_violates_schema() {
        let mut s = fresh();
        s.graph = None;
        let err = decode_snapshot(&encode_snapshot(&s)).unwrap_err();
        assert_eq!(err.code(), "SCHEMA_VIOLATION");
    }

    #[test]
    fn install_payload_round_trips() {
        let cfg = BTreeMap::from([("answer_norm_version".to_string(), "2".to_string())]);
        let s = create_install_agent(
            SeededIds::new(2).next_id(),
            "inst",
            cfg.clone(),
            EndpointAddress::new("srv", 7400),
            vec![EndpointAddress::new("h1", 7401)],
            0,
        )
        .unwrap();
        let back = decode_snapshot(&encode_snapshot(&s)).unwrap();
        assert_eq!(back.config_payload, Some(cfg));
        assert_eq!(back, s);
        assert!(String::from_utf8(encode_snapshot(&s))
            .unwrap()
            .contains(r#""config_payload":{"answer_norm_version":"2"}"#));
    }
}
