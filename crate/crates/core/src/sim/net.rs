//! Event queue, lossy links and retrying exchanges shared by every
//! campaign kind.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{NetworkModel, TraceEvent, SERVER_LINK};
use crate::wire::{RetryPolicy, RetrySchedule};

/// Min-queue keyed by (time, insertion order).
pub(crate) struct Queue<E> {
    events: BTreeMap<(u64, u64), E>,
    next_seq: u64,
}

impl<E> Queue<E> {
    pub fn new() -> Self {
        Queue {
            events: BTreeMap::new(),
            next_seq: 0,
        }
    }

    pub fn push(&mut self, at: u64, event: E) {
        self.events.insert((at, self.next_seq), event);
        self.next_seq += 1;
    }

    pub fn pop(&mut self) -> Option<(u64, E)> {
        self.events.pop_first().map(|((at, _), e)| (at, e))
    }
}

// Stream ids mixed into the campaign seed so that drops, retry jitter and
// answer draws never share a generator.
const DROP_STREAM: u64 = 0x6472_6f70;
const RETRY_STREAM: u64 = 0x7265_7472;
pub(crate) const ANSWER_STREAM: u64 = 0x616e_7377;

pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The links between the server and the hosts, plus the trace of every
/// frame put on them.
pub(crate) struct Net {
    model: NetworkModel,
    drops: ChaCha8Rng,
    retry_seeds: ChaCha8Rng,
    pub trace: Vec<TraceEvent>,
}

/// A frame in flight.
pub(crate) struct Sent {
    pub arrives_at: Option<u64>,
}

impl Net {
    pub fn new(model: NetworkModel) -> Self {
        let seed = model.seed;
        Net {
            model,
            drops: stream(seed, DROP_STREAM),
            retry_seeds: stream(seed, RETRY_STREAM),
            trace: Vec::new(),
        }
    }

    pub fn latency(&self, a: &str, b: &str) -> u64 {
        let of = |l: &str| {
            self.model
                .link_latency_ms
                .get(l)
                .copied()
                .unwrap_or(self.model.latency_ms)
        };
        if a == SERVER_LINK {
            of(b)
        } else if b == SERVER_LINK {
            of(a)
        } else {
            of(a).max(of(b))
        }
    }

    fn partitioned(&self, link: &str, at: u64) -> bool {
        self.model
            .partitions
            .iter()
            .any(|p| p.link == link && p.start_ms <= at && at < p.end_ms)
    }

    /// Puts one frame on the wire at `now`. Every frame is counted, lost
    /// or not. A drop draw is made for every frame so that the loss
    /// pattern does not depend on partitions.
    pub fn send(
        &mut self,
        now: u64,
        from: &str,
        to: &str,
        msg: &str,
        bytes: usize,
        forced_loss: bool,
    ) -> Sent {
        let draw = self.drops.random_bool(self.model.drop_probability);
        let lost = forced_loss || draw || self.partitioned(from, now) || self.partitioned(to, now);
        let arrives_at = (!lost).then(|| now + self.latency(from, to));
        self.trace.push(TraceEvent::Frame {
            at: now,
            from: from.to_owned(),
            to: to.to_owned(),
            msg: msg.to_owned(),
            bytes: bytes as u64,
            arrives_at,
        });
        Sent { arrives_at }
    }

    pub fn note(&mut self, event: TraceEvent) {
        self.trace.push(event);
    }

    pub fn schedule(&mut self, policy: RetryPolicy, start: u64, give_up_at: u64) -> RetrySchedule {
        RetrySchedule::new(policy, self.retry_seeds.next_u64(), start, give_up_at)
    }
}

/// One request that is retried until a reply settles it.
pub(crate) struct Exchange<P> {
    pub from: String,
    pub to: String,
    pub msg: &'static str,
    pub frame: Vec<u8>,
    pub schedule: RetrySchedule,
    pub done: bool,
    pub purpose: P,
}

/// What to do after an attempt went out.
pub(crate) enum AfterAttempt {
    RetryAt(u64),
    GiveUpAt(u64),
}

impl<P> Exchange<P> {
    /// Sends the attempt in flight and plans the next step should no reply
    /// settle the exchange first.
    pub fn attempt(&mut self, net: &mut Net, now: u64) -> (Sent, AfterAttempt) {
        let sent = net.send(now, &self.from, &self.to, self.msg, self.frame.len(), false);
        let after = match self.schedule.next_after_failure() {
            Some(at) => AfterAttempt::RetryAt(at),
            // Leave room for the last reply to come back.
            None => AfterAttempt::GiveUpAt(now + 2 * net.latency(&self.from, &self.to) + 1),
        };
        (sent, after)
    }
}
