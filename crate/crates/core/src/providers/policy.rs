//! Retry with exponential backoff, client-side rate limiting, and the
//! line-delimited call log.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::ProviderError;

/// Token bucket: `per_minute` tokens per minute, burst of the same size.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    refill_per_sec: f64,
    state: Mutex<(f64, Instant)>,
}

impl TokenBucket {
    pub fn per_minute(per_minute: u32) -> Self {
        let capacity = f64::from(per_minute.max(1));
        Self {
            capacity,
            refill_per_sec: capacity / 60.0,
            state: Mutex::new((capacity, Instant::now())),
        }
    }

    /// Takes a token at `now`, or reports how long to wait for one.
    pub fn try_acquire_at(&self, now: Instant) -> Result<(), Duration> {
        let mut st = self.state.lock();
        let elapsed = now.saturating_duration_since(st.1).as_secs_f64();
        st.0 = (st.0 + elapsed * self.refill_per_sec).min(self.capacity);
        st.1 = now.max(st.1);
        if st.0 >= 1.0 {
            st.0 -= 1.0;
            Ok(())
        } else {
            Err(Duration::from_secs_f64((1.0 - st.0) / self.refill_per_sec))
        }
    }

    pub fn acquire(&self) {
        while let Err(wait) = self.try_acquire_at(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
}

/// One provider call attempt. Prompts are recorded only by hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CallRecord {
    pub timestamp: chrono::DateTime<chrono::Utc>,
    pub provider: String,
    pub operation: String,
    pub prompt_hash: String,
    pub attempt: u32,
    pub outcome: String,
}

#[derive(Debug, Default)]
pub struct CallLog {
    records: Mutex<Vec<CallRecord>>,
    file: Option<Mutex<File>>,
}

impl CallLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        if let Some(parent) = path.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            records: Mutex::new(Vec::new()),
            file: Some(Mutex::new(f)),
        })
    }

    pub fn record(&self, rec: CallRecord) {
        if let Some(f) = &self.file {
            let line = serde_json::to_string(&rec).expect("call record serializes");
            if let Err(e) = writeln!(f.lock(), "{line}") {
                log::warn!("call log write failed: {e}");
            }
        }
        self.records.lock().push(rec);
    }

    pub fn records(&self) -> Vec<CallRecord> {
        self.records.lock().clone()
    }
}

/// Retry and rate-limit policy shared by the HTTP providers.
#[derive(Debug, Clone)]
pub struct CallPolicy {
    pub max_retries: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub limiter: Option<Arc<TokenBucket>>,
    pub log: Option<Arc<CallLog>>,
}

impl Default for CallPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            limiter: None,
            log: None,
        }
    }
}

impl CallPolicy {
    fn backoff(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry.min(16));
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }

    /// Runs `call` with at most `max_retries` retries of retryable failures.
    pub fn run<T>(
        &self,
        provider: &str,
        operation: &str,
        prompt_hash: &str,
        mut call: impl FnMut() -> Result<T, ProviderError>,
    ) -> Result<T, ProviderError> {
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            if let Some(l) = &self.limiter {
                l.acquire();
            }
            let result = call();
            if let Some(log) = &self.log {
                log.record(CallRecord {
                    timestamp: chrono::Utc::now(),
                    provider: provider.to_string(),
                    operation: operation.to_string(),
                    prompt_hash: prompt_hash.to_string(),
                    attempt,
                    outcome: match &result {
                        Ok(_) => "ok".into(),
                        Err(e) => format!("error: {e}"),
                    },
                });
            }
            match result {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt <= self.max_retries => {
                    let wait = match &e {
                        ProviderError::RateLimited {
                            retry_after_secs: Some(s),
                        } => Duration::from_secs_f64(*s).min(self.max_delay),
                        _ => self.backoff(attempt - 1),
                    };
                    log::debug!("{provider} {operation}: attempt {attempt} failed ({e}); retrying in {wait:?}");
                    std::thread::sleep(wait);
                }
                Err(e) if e.is_retryable() => {
                    return Err(ProviderError::RetriesExhausted {
                        attempts: attempt,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn fast(max_retries: u32, log: Arc<CallLog>) -> CallPolicy {
        CallPolicy {
            max_retries,
            base_delay: Duration::from_millis(1),
            max_delay: Duration::from_millis(4),
            limiter: None,
            log: Some(log),
        }
    }

    #[test]
    fn transient_failures_are_retried() {
        let log = Arc::new(CallLog::in_memory());
        let calls = Cell::new(0);
        let out = fast(3, log.clone())
            .run("p", "op", "h", || {
                calls.set(calls.get() + 1);
                if calls.get() < 3 {
                    Err(ProviderError::Timeout(1.0))
                } else {
                    Ok(42)
                }
            })
            .unwrap();
        assert_eq!(out, 42);
        assert_eq!(log.records().len(), 3);
        assert_eq!(log.records()[2].outcome, "ok");
    }

    #[test]
    fn unreachable_provider_gives_up_after_budget() {
        let log = Arc::new(CallLog::in_memory());
        let err = fast(2, log.clone())
            .run::<()>("p", "op", "h", || Err(ProviderError::Unavailable("connection refused".into())))
            .unwrap_err();
        match err {
            ProviderError::RetriesExhausted { attempts, .. } => assert_eq!(attempts, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(log.records().len(), 3);
    }

    #[test]
    fn terminal_errors_are_not_retried() {
        let log = Arc::new(CallLog::in_memory());
        let err = fast(5, log.clone())
            .run::<()>("p", "op", "h", || Err(ProviderError::ContentRejected("policy".into())))
            .unwrap_err();
        assert!(matches!(err, ProviderError::ContentRejected(m) if m == "policy"));
        assert_eq!(log.records().len(), 1);
    }

    #[test]
    fn bucket_refills_at_configured_rate() {
        let bucket = TokenBucket::per_minute(60);
        let t0 = Instant::now();
        for _ in 0..60 {
            bucket.try_acquire_at(t0).unwrap();
        }
        let wait = bucket.try_acquire_at(t0).unwrap_err();
        assert!(wait <= Duration::from_secs(1) && wait > Duration::from_millis(900), "{wait:?}");
        bucket.try_acquire_at(t0 + Duration::from_millis(1001)).unwrap();
    }
}
