use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("max_attempts must be at least 1")]
    NoAttempts,
    #[error("multiplier must be >= 1, got {0}")]
    Multiplier(f64),
    #[error("jitter must lie in [0, 1), got {0}")]
    Jitter(f64),
}

/// Exponential backoff in logical milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub base_delay: u64,
    pub multiplier: f64,
    pub max_attempts: u32,
    pub jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_delay: 100,
            multiplier: 2.0,
            max_attempts: 3,
            jitter: 0.0,
        }
    }
}

impl RetryPolicy {
    pub fn new(base_delay: u64, multiplier: f64, max_attempts: u32, jitter: f64) -> Result<Self, PolicyError> {
        let p = Self {
            base_delay,
            multiplier,
            max_attempts,
            jitter,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.max_attempts == 0 {
            return Err(PolicyError::NoAttempts);
        }
        if self.multiplier.is_nan() || self.multiplier < 1.0 || !self.multiplier.is_finite() {
            return Err(PolicyError::Multiplier(self.multiplier));
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(PolicyError::Jitter(self.jitter));
        }
        Ok(())
    }

    /// Un-jittered delay after attempt `k` (1-based): `base · mult^(k−1)`.
    pub fn delay(&self, attempt: u32) -> u64 {
        let exp = i32::try_from(attempt.saturating_sub(1)).unwrap_or(i32::MAX);
        (self.base_delay as f64 * self.multiplier.powi(exp)).round() as u64
    }

    /// Delay with a jitter factor drawn uniformly from `[1 − j, 1 + j)`.
    /// Draws nothing from `rng` when jitter is zero.
    pub fn jittered_delay<R: RngExt>(&self, attempt: u32, rng: &mut R) -> u64 {
        let d = self.delay(attempt);
        if self.jitter == 0.0 {
            return d;
        }
        let factor = rng.random_range((1.0 - self.jitter)..(1.0 + self.jitter));
        (d as f64 * factor).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("retry exhausted after {attempts} attempts")]
pub struct Exhausted<E> {
    pub attempts: u32,
    pub last: E,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryReport<T, E> {
    pub outcome: Result<T, Exhausted<E>>,
    /// One logical delay per failed attempt, in order.
    pub delays: Vec<u64>,
    pub attempts: u32,
}

/// Calls `op(k)` for k = 1.. until it succeeds or `max_attempts` is reached.
/// A delay is recorded after every failure; nothing sleeps.
pub fn retry_with_backoff<T, E, R: RngExt>(
    policy: &RetryPolicy,
    rng: &mut R,
    mut op: impl FnMut(u32) -> Result<T, E>,
) -> RetryReport<T, E> {
    let mut delays = Vec::new();
    let mut attempt = 0;
    loop {
        attempt += 1;
        match op(attempt) {
            Ok(v) => {
                return RetryReport {
                    outcome: Ok(v),
                    delays,
                    attempts: attempt,
                }
            }
            Err(e) => {
                delays.push(policy.jittered_delay(attempt, rng));
                if attempt >= policy.max_attempts {
                    return RetryReport {
                        outcome: Err(Exhausted { attempts: attempt, last: e }),
                        delays,
                        attempts: attempt,
                    };
                }
            }
        }
    }
}

/// Deterministic RNG for jitter.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
