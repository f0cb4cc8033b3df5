use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::message::{Ack, Message, PullRequest};
use super::retry::{RetryPolicy, RetrySchedule};
use super::WireError;
use crate::agent::{AgentSnapshot, AgentStatus, EndpointAddress};
use crate::clock::Clock;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("transport: {0}")]
pub struct TransportError(pub String);

/// One request frame out, one reply frame back.
pub trait Transport {
    fn exchange(&mut self, to: &EndpointAddress, frame: &[u8]) -> Result<Vec<u8>, TransportError>;
}

enum Verdict<R> {
    Done(R),
    Fatal(WireError),
    Retry,
}

enum Failure {
    Exhausted(u32),
    Fatal(WireError),
}

/// Blocking sender for the migration protocol.
///
/// Retries follow the [`RetryPolicy`]; jitter comes from a seeded stream
/// so the attempt times of a run can be replayed.
pub struct Courier<T, C> {
    transport: T,
    clock: C,
    policy: RetryPolicy,
    rng: ChaCha8Rng,
    last_attempts: Vec<u64>,
}

fn rejected(reason: String, detail: String) -> WireError {
    WireError::Rejected { reason, detail }
}

impl<T: Transport, C: Clock> Courier<T, C> {
    pub fn new(transport: T, clock: C, policy: RetryPolicy, seed: u64) -> Self {
        Courier {
            transport,
            clock,
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_attempts: Vec::new(),
        }
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    pub fn clock(&self) -> &C {
        &self.clock
    }

    pub fn transport_mut(&mut self) -> &mut T {
        &mut self.transport
    }

    /// Clock times at which the most recent exchange made its attempts.
    pub fn last_attempts(&self) -> &[u64] {
        &self.last_attempts
    }

    fn with_retry<R>(
        &mut self,
        to: &EndpointAddress,
        frame: &[u8],
        give_up_at: u64,
        mut judge: impl FnMut(Message) -> Verdict<R>,
    ) -> Result<R, Failure> {
        let start = self.clock.now_ms();
        let mut schedule = RetrySchedule::new(self.policy, self.rng.next_u64(), start, give_up_at);
        self.last_attempts.clear();
        loop {
            self.last_attempts.push(self.clock.now_ms());
            let verdict = match self.transport.exchange(to, frame) {
                Ok(reply) => match Message::decode(&reply) {
                    Ok(msg) => judge(msg),
                    Err(e) => {
                        log::debug!("bad reply from {to}: {e}");
                        Verdict::Retry
                    }
                },
                Err(e) => {
                    log::debug!("attempt {} to {to} failed: {e}", schedule.attempt());
                    Verdict::Retry
                }
            };
            match verdict {
                Verdict::Done(r) => return Ok(r),
                Verdict::Fatal(e) => return Err(Failure::Fatal(e)),
                Verdict::Retry => {}
            }
            let Some(next_at) = schedule.next_after_failure() else {
                return Err(Failure::Exhausted(schedule.attempt() + 1));
            };
            let now = self.clock.now_ms();
            if next_at > now {
                self.clock.sleep_ms(next_at - now);
            }
        }
    }

    fn send_until_acked(
        &mut self,
        target: &EndpointAddress,
        snapshot: &AgentSnapshot,
        message: Message,
        give_up_at: u64,
        want_return_ack: bool,
    ) -> Result<Ack, Failure> {
        let frame = message.encode()?;
        let id = snapshot.agent_id;
        self.with_retry(target, &frame, give_up_at, |reply| match reply {
            Message::DispatchAck(ack) if !want_return_ack && ack.agent_id == id => {
                Verdict::Done(ack)
            }
            Message::ReturnAck(ack) if want_return_ack && ack.agent_id == id => Verdict::Done(ack),
            Message::Error { reason, detail } => Verdict::Fatal(rejected(reason, detail)),
            other => {
                log::debug!("unexpected {} reply", other.msg_type());
                Verdict::Retry
            }
        })
    }

    /// Sends a DISPATCH and waits for the matching DISPATCH_ACK, retrying
    /// until the agent's deadline plus grace.
    pub fn dispatch(
        &mut self,
        target: &EndpointAddress,
        snapshot: &AgentSnapshot,
    ) -> Result<Ack, WireError> {
        let give_up_at = self.policy.give_up_at(snapshot.deadline);
        self.dispatch_until(target, snapshot, give_up_at)
    }

    /// DISPATCH with an explicit give-up time, used for install hops.
    pub fn dispatch_until(
        &mut self,
        target: &EndpointAddress,
        snapshot: &AgentSnapshot,
        give_up_at: u64,
    ) -> Result<Ack, WireError> {
        if snapshot.status != AgentStatus::InTransit {
            return Err(WireError::BadMessage(format!(
                "cannot dispatch a {} snapshot",
                snapshot.status
            )));
        }
        self.send_until_acked(
            target,
            snapshot,
            Message::Dispatch(snapshot.clone()),
            give_up_at,
            false,
        )
        .map_err(|f| match f {
            Failure::Exhausted(attempts) => WireError::DeadlineExceeded { attempts },
            Failure::Fatal(e) => e,
        })
    }

    /// At-least-once RETURN delivery. The receiver deduplicates.
    pub fn return_agent(
        &mut self,
        home: &EndpointAddress,
        snapshot: &AgentSnapshot,
    ) -> Result<Ack, WireError> {
        if snapshot.status != AgentStatus::Returning {
            return Err(WireError::BadMessage(format!(
                "cannot return a {} snapshot",
                snapshot.status
            )));
        }
        let give_up_at = self.policy.give_up_at(snapshot.deadline);
        self.send_until_acked(home, snapshot, Message::Return(snapshot.clone()), give_up_at, true)
            .map_err(|f| match f {
                Failure::Exhausted(attempts) => WireError::GiveUp { attempts },
                Failure::Fatal(e) => e,
            })
    }

    /// Asks the server for a self-assessment agent. The agent comes back in
    /// the reply as a DISPATCH frame. Not retried: each request that reaches
    /// the server creates a fresh agent.
    pub fn send_pull_request(
        &mut self,
        server: &EndpointAddress,
        request: PullRequest,
    ) -> Result<AgentSnapshot, WireError> {
        let frame = Message::PullRequest(request).encode()?;
        let reply = self
            .transport
            .exchange(server, &frame)
            .map_err(|e| WireError::Transport(e.0))?;
        match Message::decode(&reply)? {
            Message::Dispatch(snapshot) => Ok(snapshot),
            Message::Error { reason, detail } => Err(rejected(reason, detail)),
            other => Err(WireError::BadMessage(format!(
                "unexpected {} reply to PULL_REQUEST",
                other.msg_type()
            ))),
        }
    }

    pub fn ping(&mut self, to: &EndpointAddress, nonce: u64) -> Result<(), WireError> {
        let frame = Message::Ping(nonce).encode()?;
        let reply = self
            .transport
            .exchange(to, &frame)
            .map_err(|e| WireError::Transport(e.0))?;
        match Message::decode(&reply)? {
            Message::Pong(n) if n == nonce => Ok(()),
            other => Err(WireError::BadMessage(format!(
                "unexpected {} reply to PING",
                other.msg_type()
            ))),
        }
    }
}

impl From<super::frame::FrameError> for Failure {
    fn from(e: super::frame::FrameError) -> Self {
        Failure::Fatal(e.into())
    }
}
