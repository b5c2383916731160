use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, ErrorClass};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
    pub backoff_cap_ms: u64,
    pub retryable: Vec<ErrorClass>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff_base_ms: 500,
            backoff_cap_ms: 8_000,
            retryable: vec![ErrorClass::Timeout, ErrorClass::RateLimit, ErrorClass::Transient],
        }
    }
}

impl RetryPolicy {
    /// Policy that retries without sleeping; useful with fakes.
    pub fn immediate(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            backoff_base_ms: 0,
            backoff_cap_ms: 0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_attempts == 0 {
            return Err(Error::Config("retry max_attempts must be at least 1".into()));
        }
        if self.backoff_base_ms > self.backoff_cap_ms {
            return Err(Error::Config(format!(
                "retry backoff base ({} ms) exceeds cap ({} ms)",
                self.backoff_base_ms, self.backoff_cap_ms
            )));
        }
        Ok(())
    }

    pub fn is_retryable(&self, class: ErrorClass) -> bool {
        self.retryable.contains(&class)
    }

    /// Upper bound of the jittered delay after the `failures`-th failure.
    pub fn backoff_ceiling(&self, failures: u32) -> Duration {
        let exp = failures.saturating_sub(1).min(32);
        let ms = self.backoff_base_ms.saturating_mul(1u64 << exp).min(self.backoff_cap_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attempted<T> {
    pub value: T,
    pub attempts: u32,
}

/// Runs `call` under `policy`, sleeping with full jitter between attempts.
pub fn with_retries<T>(
    policy: &RetryPolicy,
    call: impl FnMut(u32) -> Result<T, BackendError>,
) -> Result<Attempted<T>, BackendError> {
    let mut rng = rand::rng();
    with_retries_using(
        policy,
        |ceiling| {
            if !ceiling.is_zero() {
                let ms = rng.random_range(0..=ceiling.as_millis() as u64);
                std::thread::sleep(Duration::from_millis(ms));
            }
        },
        call,
    )
}

/// Like [`with_retries`] with an injectable sleeper; the sleeper receives the
/// backoff ceiling and is responsible for the jitter.
pub fn with_retries_using<T>(
    policy: &RetryPolicy,
    mut sleep: impl FnMut(Duration),
    mut call: impl FnMut(u32) -> Result<T, BackendError>,
) -> Result<Attempted<T>, BackendError> {
    let max = policy.max_attempts.max(1);
    let mut attempt = 1;
    loop {
        match call(attempt) {
            Ok(value) => {
                return Ok(Attempted {
                    value,
                    attempts: attempt,
                })
            }
            Err(mut err) => {
                err.attempts = attempt;
                if attempt >= max || !policy.is_retryable(err.class) {
                    return Err(err);
                }
                tracing::debug!(backend = %err.backend, attempt, "retrying after {}", err.class);
                sleep(policy.backoff_ceiling(attempt));
                attempt += 1;
            }
        }
    }
}
