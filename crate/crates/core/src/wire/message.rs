//! Typed payloads carried by frames.
//!
//! Every non-snapshot payload names its own message type in a `kind`
//! member, and snapshot payloads must carry the status their type implies
//! (`IN_TRANSIT` for DISPATCH, `RETURNING` for RETURN). The header's type
//! byte is outside the digest, so this is what makes a corrupted type byte
//! detectable.

use serde::{Deserialize, Serialize};

use super::frame::{frame_decode, frame_encode, FrameError, MsgType};
use super::WireError;
use crate::agent::{decode_snapshot, encode_snapshot, AgentId, AgentSnapshot, AgentStatus, EndpointAddress};
use crate::canonical;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AckDoc {
    pub agent_id: AgentId,
    pub kind: String,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PullRequestDoc {
    pub kind: String,
    pub reply: EndpointAddress,
    pub student_id: String,
    pub test_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorDoc {
    pub detail: String,
    pub kind: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeDoc {
    pub kind: String,
    pub nonce: u64,
}

/// Ack contents shared by DISPATCH_ACK and RETURN_ACK.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    pub agent_id: AgentId,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PullRequest {
    pub student_id: String,
    pub test_id: String,
    pub reply: EndpointAddress,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Dispatch(AgentSnapshot),
    DispatchAck(Ack),
    Return(AgentSnapshot),
    ReturnAck(Ack),
    PullRequest(PullRequest),
    Error { reason: String, detail: String },
    Ping(u64),
    Pong(u64),
}

impl Message {
    pub fn error(reason: impl Into<String>, detail: impl Into<String>) -> Self {
        Message::Error {
            reason: reason.into(),
            detail: detail.into(),
        }
    }

    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Dispatch(_) => MsgType::Dispatch,
            Message::DispatchAck(_) => MsgType::DispatchAck,
            Message::Return(_) => MsgType::Return,
            Message::ReturnAck(_) => MsgType::ReturnAck,
            Message::PullRequest(_) => MsgType::PullRequest,
            Message::Error { .. } => MsgType::Error,
            Message::Ping(_) => MsgType::Ping,
            Message::Pong(_) => MsgType::Pong,
        }
    }

    pub fn payload(&self) -> Vec<u8> {
        let kind = self.msg_type().name().to_owned();
        match self {
            Message::Dispatch(s) | Message::Return(s) => encode_snapshot(s),
            Message::DispatchAck(a) | Message::ReturnAck(a) => canonical::to_bytes(&AckDoc {
                agent_id: a.agent_id,
                kind,
                seq: a.seq,
            }),
            Message::PullRequest(p) => canonical::to_bytes(&PullRequestDoc {
                kind,
                reply: p.reply.clone(),
                student_id: p.student_id.clone(),
                test_id: p.test_id.clone(),
            }),
            Message::Error { reason, detail } => canonical::to_bytes(&ErrorDoc {
                detail: detail.clone(),
                kind,
                reason: reason.clone(),
            }),
            Message::Ping(nonce) | Message::Pong(nonce) => {
                canonical::to_bytes(&ProbeDoc { kind, nonce: *nonce })
            }
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        frame_encode(self.msg_type(), &self.payload())
    }

    pub fn decode(frame: &[u8]) -> Result<Message, WireError> {
        let (msg_type, payload) = frame_decode(frame)?;
        Message::from_payload(msg_type, &payload)
    }

    pub fn from_payload(msg_type: MsgType, payload: &[u8]) -> Result<Message, WireError> {
        let check_kind = |kind: &str| {
            if kind == msg_type.name() {
                Ok(())
            } else {
                Err(WireError::BadMessage(format!(
                    "{} frame carries a {kind} document",
                    msg_type.name()
                )))
            }
        };
        let snapshot = |want: AgentStatus| -> Result<AgentSnapshot, WireError> {
            let s = decode_snapshot(payload)?;
            if s.status != want {
                return Err(WireError::BadMessage(format!(
                    "{} frame carries a {} snapshot",
                    msg_type.name(),
                    s.status
                )));
            }
            Ok(s)
        };
        Ok(match msg_type {
            MsgType::Dispatch => Message::Dispatch(snapshot(AgentStatus::InTransit)?),
            MsgType::Return => Message::Return(snapshot(AgentStatus::Returning)?),
            MsgType::DispatchAck | MsgType::ReturnAck => {
                let doc: AckDoc = canonical::from_bytes(payload)?;
                check_kind(&doc.kind)?;
                let ack = Ack {
                    agent_id: doc.agent_id,
                    seq: doc.seq,
                };
                if msg_type == MsgType::DispatchAck {
                    Message::DispatchAck(ack)
                } else {
                    Message::ReturnAck(ack)
                }
            }
            MsgType::PullRequest => {
                let doc: PullRequestDoc = canonical::from_bytes(payload)?;
                check_kind(&doc.kind)?;
                Message::PullRequest(PullRequest {
                    student_id: doc.student_id,
                    test_id: doc.test_id,
                    reply: doc.reply,
                })
            }
            MsgType::Error => {
                let doc: ErrorDoc = canonical::from_bytes(payload)?;
                check_kind(&doc.kind)?;
                Message::Error {
                    reason: doc.reason,
                    detail: doc.detail,
                }
            }
            MsgType::Ping | MsgType::Pong => {
                let doc: ProbeDoc = canonical::from_bytes(payload)?;
                check_kind(&doc.kind)?;
                if msg_type == MsgType::Ping {
                    Message::Ping(doc.nonce)
                } else {
                    Message::Pong(doc.nonce)
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ack() -> Ack {
        Ack {
            agent_id: "6f1c1a0e-3b55-4a44-9a5e-1f2b3c4d5e6f".parse().unwrap(),
            seq: 7,
        }
    }

    #[test]
    fn documents_round_trip() {
        for m in [
            Message::DispatchAck(ack()),
            Message::ReturnAck(ack()),
            Message::PullRequest(PullRequest {
                student_id: "s1".into(),
                test_id: "t1".into(),
                reply: EndpointAddress::new("pc", 7401),
            }),
            Message::error("UNKNOWN_TEST", "no such test"),
            Message::Ping(3),
            Message::Pong(3),
        ] {
            let frame = m.encode().unwrap();
            assert_eq!(Message::decode(&frame).unwrap(), m);
        }
    }

    #[test]
    fn ack_doc_layout() {
        let payload = Message::DispatchAck(ack()).payload();
        assert_eq!(
            String::from_utf8(payload).unwrap(),
            r#"{"agent_id":"6f1c1a0e-3b55-4a44-9a5e-1f2b3c4d5e6f","kind":"DISPATCH_ACK","seq":7}"#
        );
    }

    #[test]
    fn retyped_ack_is_refused() {
        let mut frame = Message::DispatchAck(ack()).encode().unwrap();
        frame[5] = MsgType::ReturnAck as u8;
        assert!(matches!(Message::decode(&frame), Err(WireError::BadMessage(_))));
    }
}
