use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Exponential backoff with seeded jitter.
///
/// Attempt `k` (0-based) that fails schedules attempt `k + 1` after
/// `min(base * factor^k, cap)` milliseconds, jittered by up to
/// `jitter_permille / 1000` in either direction and clamped to `cap`.
/// Nothing gives up before the agent deadline plus `grace_ms`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub base_delay_ms: u64,
    pub factor: u64,
    pub cap_ms: u64,
    pub jitter_permille: u64,
    pub grace_ms: u64,
    /// Per-hop budget for install agents, measured from the first attempt.
    pub install_hop_budget_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base_delay_ms: 1_000,
            factor: 2,
            cap_ms: 60_000,
            jitter_permille: 100,
            grace_ms: 300_000,
            install_hop_budget_ms: 120_000,
        }
    }
}

impl RetryPolicy {
    pub fn nominal_delay(&self, attempt: u32) -> u64 {
        let mut d = self.base_delay_ms;
        for _ in 0..attempt {
            d = d.saturating_mul(self.factor);
            if d >= self.cap_ms {
                return self.cap_ms;
            }
        }
        d.min(self.cap_ms)
    }

    pub fn delay(&self, attempt: u32, rng: &mut impl Rng) -> u64 {
        let nominal = self.nominal_delay(attempt);
        let spread = nominal * self.jitter_permille / 1000;
        let jitter = if spread == 0 {
            0
        } else {
            rng.random_range(-(spread as i64)..=spread as i64)
        };
        (nominal as i64 + jitter).clamp(0, self.cap_ms as i64) as u64
    }

    pub fn give_up_at(&self, deadline: u64) -> u64 {
        deadline.saturating_add(self.grace_ms)
    }
}

/// Attempt times for one exchange, driven by a seeded jitter stream.
#[derive(Debug, Clone)]
pub struct RetrySchedule {
    policy: RetryPolicy,
    rng: ChaCha8Rng,
    attempt: u32,
    current_at: u64,
    give_up_at: u64,
}

impl RetrySchedule {
    pub fn new(policy: RetryPolicy, seed: u64, first_attempt_at: u64, give_up_at: u64) -> Self {
        RetrySchedule {
            policy,
            rng: ChaCha8Rng::seed_from_u64(seed),
            attempt: 0,
            current_at: first_attempt_at,
            give_up_at,
        }
    }

    /// 0-based index of the attempt in flight.
    pub fn attempt(&self) -> u32 {
        self.attempt
    }

    pub fn current_at(&self) -> u64 {
        self.current_at
    }

    pub fn give_up_at(&self) -> u64 {
        self.give_up_at
    }

    /// The attempt in flight failed: returns when the next one starts, or
    /// `None` once that would fall past the give-up time.
    pub fn next_after_failure(&mut self) -> Option<u64> {
        let delay = self.policy.delay(self.attempt, &mut self.rng);
        let at = self.current_at.saturating_add(delay);
        if at > self.give_up_at {
            return None;
        }
        self.attempt += 1;
        self.current_at = at;
        Some(at)
    }

    /// Every attempt time up to the give-up point, assuming all fail.
    pub fn all_attempts(mut self) -> Vec<u64> {
        let mut out = vec![self.current_at];
        while let Some(at) = self.next_after_failure() {
            out.push(at);
        }
        out
    }
}
