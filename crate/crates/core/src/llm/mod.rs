//! Provider-agnostic chat completion with retries, rate limiting and
//! transcript record/replay.

mod http;
mod mock;
mod transcript;

use std::fmt;
use std::num::NonZeroU32;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use governor::clock::{Clock, DefaultClock};
use governor::{DefaultDirectRateLimiter, Quota, RateLimiter};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::digest_json;

pub use http::{HttpBackend, HttpConfig, Provider};
pub use mock::{oracle_answer, MockBackend, MockKind, MockPolicy};
pub use transcript::{load_transcript, ReplayBackend, TranscriptEntry, TranscriptWriter};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BackendKind {
    Http,
    Replay,
    Mock,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Http => "HTTP",
            BackendKind::Replay => "REPLAY",
            BackendKind::Mock => "MOCK",
        })
    }
}

/// A single-turn chat request. `request_digest` covers every other field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system_text: Option<String>,
    pub user_text: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Caller-chosen tag separating otherwise identical requests, such as the
    /// same prompt asked in two trials. Never sent to a provider.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    pub request_digest: String,
}

#[derive(Serialize)]
struct DigestView<'a> {
    model_label: &'a str,
    system_text: Option<&'a str>,
    user_text: &'a str,
    temperature: f64,
    max_output_tokens: u32,
    trace: Option<&'a str>,
}

impl ChatRequest {
    pub fn new(
        model_label: impl Into<String>,
        system_text: Option<String>,
        user_text: impl Into<String>,
        temperature: f64,
        max_output_tokens: u32,
    ) -> Self {
        let mut req = Self {
            model_label: model_label.into(),
            system_text,
            user_text: user_text.into(),
            temperature,
            max_output_tokens,
            trace: None,
            request_digest: String::new(),
        };
        req.request_digest = req.compute_digest();
        req
    }

    pub fn with_trace(mut self, trace: impl Into<String>) -> Self {
        self.trace = Some(trace.into());
        self.request_digest = self.compute_digest();
        self
    }

    pub fn compute_digest(&self) -> String {
        digest_json(&DigestView {
            model_label: &self.model_label,
            system_text: self.system_text.as_deref(),
            user_text: &self.user_text,
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
            trace: self.trace.as_deref(),
        })
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.user_text.trim().is_empty() {
            return Err(LlmError::InvalidRequest("user_text is empty".into()));
        }
        if !(self.temperature >= 0.0) || self.max_output_tokens == 0 {
            return Err(LlmError::InvalidRequest(
                "temperature must be >= 0 and max_output_tokens positive".into(),
            ));
        }
        if self.request_digest != self.compute_digest() {
            return Err(LlmError::InvalidRequest("request_digest is stale".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub latency_ms: u64,
    pub attempt_count: u32,
    pub backend_kind: BackendKind,
}

/// What a backend reports for a single attempt.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Timeouts, rate limiting, 5xx: worth retrying.
    #[error("{0}")]
    Transient(String),
    #[error("provider returned status {status}: {message}")]
    Fatal { status: u16, message: String },
    #[error("{0}")]
    Other(String),
    #[error("no transcript entry for request {0}")]
    MissingEntry(String),
    /// An error captured in a transcript, returned verbatim on replay.
    #[error("{0}")]
    Recorded(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("backend failed after {attempts} attempt(s): {last}")]
    BackendFailure { attempts: u32, last: String },
    #[error("environment variable {0} holding the API key is not set")]
    AuthMissing(String),
    #[error("non-retryable provider error (status {status}): {message}")]
    NonRetryableProviderError { status: u16, message: String },
    #[error("no transcript entry for request {0}")]
    TranscriptMissingEntry(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("transcript write failed: {0}")]
    Transcript(String),
    /// Replay of a recorded failure; displays exactly as the original did.
    #[error("{0}")]
    Replayed(String),
}

/// A provider adapter. Implementations must be callable from many threads.
pub trait ChatBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn send(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 5,
            base_delay_ms: 1_000,
            max_delay_ms: 60_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based): base · 2^(retry−1), capped.
    pub fn delay(&self, retry: u32) -> Duration {
        let factor = 1u64.checked_shl(retry.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Shared client: one backend, one rate limiter, optional transcript.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn ChatBackend>,
    retry: RetryPolicy,
    limiter: Option<Arc<DefaultDirectRateLimiter>>,
    transcript: Option<Arc<TranscriptWriter>>,
    sleeper: Sleeper,
    calls: Arc<AtomicU64>,
}

impl fmt::Debug for LlmClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LlmClient")
            .field("backend", &self.backend.kind())
            .field("retry", &self.retry)
            .field("rate_limited", &self.limiter.is_some())
            .finish()
    }
}

impl LlmClient {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            retry: RetryPolicy::default(),
            limiter: None,
            transcript: None,
            sleeper: Arc::new(std::thread::sleep),
            calls: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Token bucket allowing `per_minute` requests per minute; `None` or 0
    /// disables limiting.
    pub fn with_rate_limit(mut self, per_minute: Option<u32>) -> Self {
        self.limiter = per_minute
            .and_then(NonZeroU32::new)
            .map(|n| Arc::new(RateLimiter::direct(Quota::per_minute(n))));
        self
    }

    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    /// A client sharing this one's backend and limiter but logging to `writer`.
    pub fn with_transcript(&self, writer: Arc<TranscriptWriter>) -> Self {
        let mut c = self.clone();
        c.transcript = Some(writer);
        c
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    /// Number of completed `complete` calls (one per request, not per attempt).
    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    fn wait_for_slot(&self) {
        let Some(limiter) = &self.limiter else { return };
        let clock = DefaultClock::default();
        while let Err(not_until) = limiter.check() {
            (self.sleeper)(not_until.wait_time_from(clock.now()));
        }
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        request.validate()?;
        let started = Instant::now();
        let mut attempts = 0u32;
        let outcome = loop {
            attempts += 1;
            self.wait_for_slot();
            match self.backend.send(request) {
                Ok(text) => break Ok(text),
                Err(BackendError::Transient(msg)) if attempts <= self.retry.max_retries => {
                    log::warn!(
                        "transient failure on attempt {attempts} for {}: {msg}",
                        &request.request_digest[..12]
                    );
                    (self.sleeper)(self.retry.delay(attempts));
                }
                Err(BackendError::Transient(last)) | Err(BackendError::Other(last)) => {
                    break Err(LlmError::BackendFailure { attempts, last })
                }
                Err(BackendError::Fatal { status, message }) => {
                    break Err(LlmError::NonRetryableProviderError { status, message })
                }
                Err(BackendError::MissingEntry(d)) => break Err(LlmError::TranscriptMissingEntry(d)),
                Err(BackendError::Recorded(msg)) => break Err(LlmError::Replayed(msg)),
            }
        };
        // A replay miss is a configuration problem, not an outcome of the run.
        if let Err(LlmError::TranscriptMissingEntry(_)) = &outcome {
            return Err(outcome.unwrap_err());
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let latency_ms = started.elapsed().as_millis() as u64;
        let response = outcome.map(|text| ChatResponse {
            text,
            latency_ms,
            attempt_count: attempts,
            backend_kind: self.backend.kind(),
        });
        if let Some(writer) = &self.transcript {
            writer
                .append(&TranscriptEntry::new(request, &response, latency_ms, attempts))
                .map_err(|e| LlmError::Transcript(e.to_string()))?;
        }
        response
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Mutex;

    struct Flaky {
        failures: Mutex<Vec<BackendError>>,
    }

    impl ChatBackend for Flaky {
        fn kind(&self) -> BackendKind {
            BackendKind::Mock
        }
        fn send(&self, _: &ChatRequest) -> Result<String, BackendError> {
            match self.failures.lock().unwrap().pop() {
                Some(e) => Err(e),
                None => Ok("B".into()),
            }
        }
    }

    fn flaky(failures: Vec<BackendError>) -> (LlmClient, Arc<Mutex<Vec<Duration>>>) {
        let slept = Arc::new(Mutex::new(Vec::new()));
        let log = slept.clone();
        let client = LlmClient::new(Arc::new(Flaky {
            failures: Mutex::new(failures),
        }))
        .with_retry(RetryPolicy {
            max_retries: 3,
            base_delay_ms: 100,
            max_delay_ms: 250,
        })
        .with_sleeper(move |d| log.lock().unwrap().push(d));
        (client, slept)
    }

    fn req() -> ChatRequest {
        ChatRequest::new("m", None, "Which?", 0.0, 16)
    }

    #[test]
    fn digest_covers_every_field() {
        let base = req();
        let variants = [
            ChatRequest::new("m2", None, "Which?", 0.0, 16),
            ChatRequest::new("m", Some("sys".into()), "Which?", 0.0, 16),
            ChatRequest::new("m", None, "Which!", 0.0, 16),
            ChatRequest::new("m", None, "Which?", 0.5, 16),
            ChatRequest::new("m", None, "Which?", 0.0, 17),
            req().with_trace("t1"),
        ];
        for v in variants {
            assert_ne!(v.request_digest, base.request_digest);
        }
        assert_eq!(req().request_digest, base.request_digest);
    }

    #[test]
    fn retries_transient_with_exponential_backoff() {
        let transient = || BackendError::Transient("503".into());
        let (client, slept) = flaky(vec![transient(), transient(), transient()]);
        let resp = client.complete(&req()).unwrap();
        assert_eq!(resp.text, "B");
        assert_eq!(resp.attempt_count, 4);
        let ms: Vec<u128> = slept.lock().unwrap().iter().map(|d| d.as_millis()).collect();
        assert_eq!(ms, vec![100, 200, 250]);
    }

    #[test]
    fn gives_up_after_cap() {
        let transient = || BackendError::Transient("timeout".into());
        let (client, _) = flaky(vec![transient(); 4]);
        match client.complete(&req()) {
            Err(LlmError::BackendFailure { attempts, .. }) => assert_eq!(attempts, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn fatal_is_not_retried() {
        let (client, slept) = flaky(vec![BackendError::Fatal {
            status: 400,
            message: "bad".into(),
        }]);
        assert!(matches!(
            client.complete(&req()),
            Err(LlmError::NonRetryableProviderError { status: 400, .. })
        ));
        assert!(slept.lock().unwrap().is_empty());
    }

    #[test]
    fn empty_user_text_rejected() {
        let (client, _) = flaky(vec![]);
        let r = ChatRequest::new("m", None, "  ", 0.0, 16);
        assert!(matches!(client.complete(&r), Err(LlmError::InvalidRequest(_))));
    }

    #[test]
    fn delay_saturates() {
        let p = RetryPolicy {
            max_retries: 100,
            base_delay_ms: 1000,
            max_delay_ms: 5000,
        };
        assert_eq!(p.delay(1), Duration::from_millis(1000));
        assert_eq!(p.delay(3), Duration::from_millis(4000));
        assert_eq!(p.delay(90), Duration::from_millis(5000));
    }
}
