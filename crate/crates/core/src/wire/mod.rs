//! Framed migration protocol between platforms.

mod courier;
mod frame;
mod message;
mod retry;

use thiserror::Error;

pub use courier::{Courier, Transport, TransportError};
pub use frame::{
    frame_decode, frame_encode, parse_header, read_frame, write_frame, FrameError, MsgType,
    DIGEST_LEN, FRAME_OVERHEAD, HEADER_LEN, MAGIC, MAX_PAYLOAD, PROTOCOL_VERSION,
};
pub use message::{Ack, AckDoc, ErrorDoc, Message, PullRequest, PullRequestDoc};
pub use retry::{RetryPolicy, RetrySchedule};

pub const DEFAULT_SERVER_PORT: u16 = 7400;
pub const DEFAULT_HOST_PORT: u16 = 7401;

#[derive(Debug, Error)]
pub enum WireError {
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error(transparent)]
    Codec(#[from] crate::canonical::CanonicalError),
    #[error("BAD_MESSAGE: {0}")]
    BadMessage(String),
    #[error("REJECTED({reason}): {detail}")]
    Rejected { reason: String, detail: String },
    #[error("DEADLINE_EXCEEDED after {attempts} attempts")]
    DeadlineExceeded { attempts: u32 },
    #[error("GIVE_UP after {attempts} attempts")]
    GiveUp { attempts: u32 },
    #[error("transport: {0}")]
    Transport(String),
}

impl WireError {
    pub fn code(&self) -> &str {
        match self {
            WireError::Frame(e) => e.code(),
            WireError::Codec(e) => e.code(),
            WireError::BadMessage(_) => "BAD_MESSAGE",
            WireError::Rejected { reason, .. } => reason,
            WireError::DeadlineExceeded { .. } => "DEADLINE_EXCEEDED",
            WireError::GiveUp { .. } => "GIVE_UP",
            WireError::Transport(_) => "TRANSPORT",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{
        create_evaluation_agent, step_agent, AgentEvent, AgentSnapshot, EndpointAddress,
        EvaluationSpec, IdSource, SeededIds, SessionMode,
    };
    use crate::clock::{Clock, ManualClock};
    use crate::engine::{Answer, AnswerPayload, Choice, Guard, Next, QuestionKind, QuestionNode, TestGraph, Transition};
    use rand::{RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Replies with acks unless `refuse` says the attempt is lost.
    struct FakeHost<F: FnMut(u64) -> bool> {
        clock: ManualClock,
        refuse: F,
        frames: u32,
        error: Option<&'static str>,
    }

    impl<F: FnMut(u64) -> bool> Transport for FakeHost<F> {
        fn exchange(&mut self, _to: &EndpointAddress, frame: &[u8]) -> Result<Vec<u8>, TransportError> {
            self.frames += 1;
            if (self.refuse)(self.clock.now_ms()) {
                return Err(TransportError("connection refused".into()));
            }
            if let Some(reason) = self.error {
                return Ok(Message::error(reason, "").encode().unwrap());
            }
            let reply = match Message::decode(frame).unwrap() {
                Message::Dispatch(s) => Message::DispatchAck(Ack { agent_id: s.agent_id, seq: s.seq + 1 }),
                Message::Return(s) => Message::ReturnAck(Ack { agent_id: s.agent_id, seq: s.seq }),
                Message::Ping(n) => Message::Pong(n),
                _ => Message::error("BAD_MESSAGE", ""),
            };
            Ok(reply.encode().unwrap())
        }
    }

    fn snapshot() -> AgentSnapshot {
        let graph = TestGraph {
            test_id: "t".into(),
            title: "t".into(),
            entry: "q1".into(),
            nodes: vec![QuestionNode {
                id: "q1".into(),
                prompt: "p".into(),
                kind: QuestionKind::SingleChoice,
                choices: vec![Choice::new("a", "A"), Choice::new("b", "B")],
                correct: vec!["a".into()],
                points: 1,
                transitions: vec![Transition::new(Guard::Default, Next::End)],
            }],
            version: 1,
        };
        let s = create_evaluation_agent(
            SeededIds::new(5).next_id(),
            EvaluationSpec {
                session_id: "s".into(),
                student_id: "st".into(),
                mode: SessionMode::Push,
                home: EndpointAddress::new("srv", 7400),
                target: EndpointAddress::new("pc", 7401),
                deadline: 100_000,
            },
            graph,
        )
        .unwrap();
        step_agent(&s, AgentEvent::Dispatched).unwrap()
    }

    fn returning() -> AgentSnapshot {
        let mut s = step_agent(&snapshot(), AgentEvent::Arrived).unwrap();
        s = step_agent(&s, AgentEvent::AnswerRecorded(Answer::new("q1", AnswerPayload::choices(["a"]), 1))).unwrap();
        step_agent(&s, AgentEvent::EvalDone).unwrap()
    }

    fn target() -> EndpointAddress {
        EndpointAddress::new("pc", 7401)
    }

    #[test]
    fn reachable_host_acks_same_agent() {
        let clock = ManualClock::new(0);
        let host = FakeHost { clock: clock.clone(), refuse: |_| false, frames: 0, error: None };
        let mut courier = Courier::new(host, clock, RetryPolicy::default(), 1);
        let s = snapshot();
        let ack = courier.dispatch(&target(), &s).unwrap();
        assert_eq!(ack.agent_id, s.agent_id);
        assert_eq!(courier.last_attempts(), &[0]);
    }

    #[test]
    fn third_attempt_succeeds_after_backoff() {
        let clock = ManualClock::new(0);
        let mut drops = 2;
        let host = FakeHost {
            clock: clock.clone(),
            refuse: move |_| {
                if drops > 0 {
                    drops -= 1;
                    true
                } else {
                    false
                }
            },
            frames: 0,
            error: None,
        };
        let seed = 77;
        let mut courier = Courier::new(host, clock, RetryPolicy::default(), seed);
        courier.dispatch(&target(), &snapshot()).unwrap();
        let attempts = courier.last_attempts().to_vec();
        assert_eq!(attempts.len(), 3);
        let gaps = [attempts[1] - attempts[0], attempts[2] - attempts[1]];
        assert!((900..=1100).contains(&gaps[0]), "{gaps:?}");
        assert!((1800..=2200).contains(&gaps[1]), "{gaps:?}");
        // Replaying the schedule from the courier's seed gives the same times.
        let schedule_seed = ChaCha8Rng::seed_from_u64(seed).next_u64();
        let replay = RetrySchedule::new(RetryPolicy::default(), schedule_seed, 0, 400_000).all_attempts();
        assert_eq!(&replay[..3], &attempts[..]);
    }

    #[test]
    fn duplicate_agent_is_rejected_without_retry() {
        let clock = ManualClock::new(0);
        let host = FakeHost { clock: clock.clone(), refuse: |_| false, frames: 0, error: Some("DUPLICATE_AGENT") };
        let mut courier = Courier::new(host, clock, RetryPolicy::default(), 1);
        let err = courier.dispatch(&target(), &snapshot()).unwrap_err();
        assert_eq!(err.code(), "DUPLICATE_AGENT");
        assert_eq!(courier.last_attempts().len(), 1);
    }

    #[test]
    fn unreachable_until_give_up() {
        let clock = ManualClock::new(0);
        let host = FakeHost { clock: clock.clone(), refuse: |_| true, frames: 0, error: None };
        let mut courier = Courier::new(host, clock.clone(), RetryPolicy::default(), 1);
        let err = courier.dispatch(&target(), &snapshot()).unwrap_err();
        assert_eq!(err.code(), "DEADLINE_EXCEEDED");
        assert!(clock.now_ms() <= 100_000 + 300_000);
        let err = courier.return_agent(&EndpointAddress::new("srv", 7400), &returning()).unwrap_err();
        assert_eq!(err.code(), "GIVE_UP");
    }

    #[test]
    fn return_through_thirty_second_partition() {
        let clock = ManualClock::new(1_000);
        let heal_at = 1_000 + 30_000;
        let host = FakeHost { clock: clock.clone(), refuse: move |t| t < heal_at, frames: 0, error: None };
        let seed = 3;
        let mut courier = Courier::new(host, clock, RetryPolicy::default(), seed);
        courier.return_agent(&EndpointAddress::new("srv", 7400), &returning()).unwrap();
        let frames = courier.transport_mut().frames;

        let schedule_seed = ChaCha8Rng::seed_from_u64(seed).next_u64();
        let scheduled = RetrySchedule::new(RetryPolicy::default(), schedule_seed, 1_000, 400_000).all_attempts();
        let within = scheduled.iter().filter(|&&t| t < heal_at).count() as u32;
        assert_eq!(frames, within + 1);
    }

    #[test]
    fn ping_pong() {
        let clock = ManualClock::new(0);
        let host = FakeHost { clock: clock.clone(), refuse: |_| false, frames: 0, error: None };
        let mut courier = Courier::new(host, clock, RetryPolicy::default(), 1);
        courier.ping(&target(), 9).unwrap();
    }
}
