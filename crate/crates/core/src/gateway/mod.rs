//! Uniform access to language-model services: chat completion and forced
//! continuation scoring, with retries, a bounded in-flight window and an
//! offline mock backend.

mod config;
mod http;
mod mock;

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use tracing::{debug, warn};

pub use config::{BackendConfig, BackendKind, MockConfig, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL, ENV_SCORE_BASE_URL};
pub use http::{HttpTransport, WireChatRequest, WireChatResponse, WireMessage, WireScoreRequest, WireScoreResponse};
pub use mock::{register_mock, DefaultPolicy, FaultInjector, MockEntry, MockTable, MockTransport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChatParams {
    pub temperature: f64,
    pub max_tokens: u32,
}

impl Default for ChatParams {
    fn default() -> Self {
        Self { temperature: 0.0, max_tokens: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub messages: Vec<Message>,
    #[serde(default)]
    pub params: ChatParams,
}

impl ChatRequest {
    /// A single-turn request with default parameters.
    pub fn user(content: impl Into<String>) -> Self {
        Self { messages: vec![Message { role: Role::User, content: content.into() }], params: ChatParams::default() }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let last = self.messages.last().ok_or_else(|| GatewayError::InvalidRequest("no messages".into()))?;
        if last.role != Role::User {
            return Err(GatewayError::InvalidRequest("last message must come from the user".into()));
        }
        if self.messages.iter().any(|m| m.content.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest("message content is empty".into()));
        }
        if self.params.temperature.is_nan() || self.params.temperature < 0.0 || self.params.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("temperature must be >= 0 and max_tokens positive".into()));
        }
        Ok(())
    }

    /// Stable request digest: SHA-256 (hex) of the canonical JSON
    /// `{"kind":"chat","messages":[[role,content],...]}` with contents trimmed.
    /// Sampling parameters are not part of the digest.
    pub fn digest(&self) -> String {
        let msgs: Vec<(&str, &str)> = self.messages.iter().map(|m| (m.role.as_str(), m.content.trim())).collect();
        sha256_hex(&serde_json::json!({ "kind": "chat", "messages": msgs }).to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub prompt: String,
    pub continuation: String,
}

impl ScoreRequest {
    pub fn new(prompt: impl Into<String>, continuation: impl Into<String>) -> Self {
        Self { prompt: prompt.into(), continuation: continuation.into() }
    }

    /// SHA-256 (hex) of `{"continuation":c,"kind":"score","prompt":p}`, no trimming.
    pub fn digest(&self) -> String {
        sha256_hex(
            &serde_json::json!({ "kind": "score", "prompt": self.prompt, "continuation": self.continuation }).to_string(),
        )
    }
}

fn sha256_hex(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

/// Natural-log likelihood of a continuation and its token count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreResult {
    pub logprob_sum: f64,
    pub token_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Chat,
    Score,
}

impl std::fmt::Display for Capability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Capability::Chat => "chat",
            Capability::Score => "score",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TransportError {
    #[error("transient: {0}")]
    Transient(String),
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("no mock entry for request {0}")]
    MockMiss(String),
    #[error("{0}")]
    Fatal(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("backend unavailable after {attempts} attempts: {last_error}")]
    BackendUnavailable { attempts: u32, last_error: String },
    #[error("authentication error: {0}")]
    AuthError(String),
    #[error("backend {backend} does not support {capability}")]
    CapabilityError { backend: String, capability: Capability },
    #[error("mock backend has no entry for request digest {0}")]
    MockMiss(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend error: {0}")]
    Fatal(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

/// The wire-level side of a backend. Implementations do one attempt per
/// call; retries and concurrency limits live in [`Gateway`].
pub trait Transport: Send + Sync {
    fn describe(&self) -> String;
    fn supports(&self, capability: Capability) -> bool;
    fn chat(&self, request: &ChatRequest, idempotency_key: &str) -> Result<String, TransportError>;
    fn score(&self, request: &ScoreRequest, idempotency_key: &str) -> Result<ScoreResult, TransportError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_ms: 500, max_backoff_ms: 8_000 }
    }
}

impl RetryPolicy {
    pub fn no_backoff(max_attempts: u32) -> Self {
        Self { max_attempts, backoff_ms: 0, max_backoff_ms: 0 }
    }

    /// Delay before attempt `attempt + 1`, doubling from `backoff_ms`.
    pub fn delay_after(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowStats {
    pub limit: usize,
    pub in_flight: usize,
    pub max_in_flight: usize,
    pub calls: u64,
}

/// Counting semaphore bounding in-flight transport calls.
#[derive(Debug)]
struct Window {
    limit: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    max_seen: AtomicUsize,
    calls: AtomicU64,
}

struct Permit<'a>(&'a Window);

impl Window {
    fn new(limit: usize) -> Self {
        Self { limit: limit.max(1), in_flight: Mutex::new(0), freed: Condvar::new(), max_seen: AtomicUsize::new(0), calls: AtomicU64::new(0) }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap();
        while *n >= self.limit {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        self.max_seen.fetch_max(*n, Ordering::SeqCst);
        self.calls.fetch_add(1, Ordering::SeqCst);
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap();
        *n -= 1;
        self.0.freed.notify_one();
    }
}

/// A result plus the number of transport attempts it took.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome<T> {
    pub value: T,
    pub attempts: u32,
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Backend handle. Cheap to clone and safe to share across threads.
#[derive(Clone)]
pub struct Gateway {
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    window: Arc<Window>,
    sleeper: Sleeper,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.transport.describe())
            .field("retry", &self.retry)
            .field("limit", &self.window.limit)
            .finish()
    }
}

impl Gateway {
    pub fn new(transport: Arc<dyn Transport>, retry: RetryPolicy, concurrency_limit: usize) -> Self {
        Self { transport, retry, window: Arc::new(Window::new(concurrency_limit)), sleeper: Arc::new(std::thread::sleep) }
    }

    /// Replaces the backoff sleep, e.g. to record delays in tests.
    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Arc::new(sleeper);
        self
    }

    pub fn describe(&self) -> String {
        self.transport.describe()
    }

    pub fn supports(&self, capability: Capability) -> bool {
        self.transport.supports(capability)
    }

    pub fn stats(&self) -> WindowStats {
        WindowStats {
            limit: self.window.limit,
            in_flight: *self.window.in_flight.lock().unwrap(),
            max_in_flight: self.window.max_seen.load(Ordering::SeqCst),
            calls: self.window.calls.load(Ordering::SeqCst),
        }
    }

    fn require(&self, capability: Capability) -> Result<(), GatewayError> {
        if self.transport.supports(capability) {
            Ok(())
        } else {
            Err(GatewayError::CapabilityError { backend: self.transport.describe(), capability })
        }
    }

    fn with_retries<T>(&self, key: &str, mut call: impl FnMut() -> Result<T, TransportError>) -> Result<Outcome<T>, GatewayError> {
        let max = self.retry.max_attempts.max(1);
        let mut attempt = 0;
        loop {
            attempt += 1;
            let result = {
                let _permit = self.window.acquire();
                call()
            };
            match result {
                Ok(value) => return Ok(Outcome { value, attempts: attempt }),
                Err(TransportError::Auth(msg)) => return Err(GatewayError::AuthError(msg)),
                Err(TransportError::MockMiss(d)) => return Err(GatewayError::MockMiss(d)),
                Err(TransportError::Fatal(msg)) => return Err(GatewayError::Fatal(msg)),
                Err(TransportError::Transient(msg)) => {
                    if attempt >= max {
                        warn!(key, attempt, "giving up: {msg}");
                        return Err(GatewayError::BackendUnavailable { attempts: attempt, last_error: msg });
                    }
                    let delay = self.retry.delay_after(attempt);
                    debug!(key, attempt, ?delay, "transient failure, retrying: {msg}");
                    (self.sleeper)(delay);
                }
            }
        }
    }

    pub fn chat_detailed(&self, request: &ChatRequest) -> Result<Outcome<String>, GatewayError> {
        self.require(Capability::Chat)?;
        request.validate()?;
        let key = request.digest();
        self.with_retries(&key, || self.transport.chat(request, &key))
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<String, GatewayError> {
        self.chat_detailed(request).map(|o| o.value)
    }

    pub fn score_detailed(&self, prompt: &str, continuation: &str) -> Result<Outcome<ScoreResult>, GatewayError> {
        self.require(Capability::Score)?;
        if continuation.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("continuation is empty".into()));
        }
        let request = ScoreRequest::new(prompt, continuation);
        let key = request.digest();
        let out = self.with_retries(&key, || self.transport.score(&request, &key))?;
        if out.value.token_count == 0 {
            return Err(GatewayError::Fatal("backend reported zero continuation tokens".into()));
        }
        Ok(out)
    }

    pub fn score_continuation(&self, prompt: &str, continuation: &str) -> Result<ScoreResult, GatewayError> {
        self.score_detailed(prompt, continuation).map(|o| o.value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    #[test]
    fn digest_ignores_params_and_outer_whitespace() {
        let mut a = ChatRequest::user("hello");
        let b = ChatRequest::user("  hello \n");
        a.params.temperature = 0.7;
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), ChatRequest::user("hello!").digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn validation() {
        let mut r = ChatRequest::user("q");
        r.messages.push(Message { role: Role::Assistant, content: "a".into() });
        assert!(matches!(r.validate(), Err(GatewayError::InvalidRequest(_))));
        assert!(ChatRequest::user("  ").validate().is_err());
        assert!(ChatRequest { messages: vec![], params: ChatParams::default() }.validate().is_err());
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy { max_attempts: 5, backoff_ms: 100, max_backoff_ms: 350 };
        let d: Vec<u64> = (1..=4).map(|a| p.delay_after(a).as_millis() as u64).collect();
        assert_eq!(d, vec![100, 200, 350, 350]);
    }

    #[test]
    fn transient_then_success() {
        let mut table = MockTable::new();
        table.insert_chat(&ChatRequest::user("q"), "text");
        let mock = Arc::new(MockTransport::new(table, DefaultPolicy::Error));
        let flaky = FaultInjector::new(mock, vec![TransportError::Transient("503".into()), TransportError::Transient("503".into())]);
        let slept = Arc::new(Mutex::new(Vec::new()));
        let s2 = slept.clone();
        let gw = Gateway::new(Arc::new(flaky), RetryPolicy { max_attempts: 3, backoff_ms: 10, max_backoff_ms: 100 }, 2)
            .with_sleeper(move |d| s2.lock().unwrap().push(d.as_millis()));
        let out = gw.chat_detailed(&ChatRequest::user("q")).unwrap();
        assert_eq!(out.value, "text");
        assert_eq!(out.attempts, 3);
        assert_eq!(*slept.lock().unwrap(), vec![10, 20]);
    }

    #[test]
    fn exhausts_retries() {
        let mock = Arc::new(MockTransport::new(MockTable::new(), DefaultPolicy::Echo));
        let flaky = FaultInjector::new(mock, vec![TransportError::Transient("x".into()); 5]);
        let gw = Gateway::new(Arc::new(flaky), RetryPolicy::no_backoff(3), 1);
        assert_eq!(
            gw.chat(&ChatRequest::user("q")).unwrap_err(),
            GatewayError::BackendUnavailable { attempts: 3, last_error: "x".into() }
        );
    }

    #[test]
    fn auth_is_not_retried() {
        let mock = Arc::new(MockTransport::new(MockTable::new(), DefaultPolicy::Echo));
        let flaky = Arc::new(FaultInjector::new(mock, vec![TransportError::Auth("401".into())]));
        let gw = Gateway::new(flaky.clone(), RetryPolicy::no_backoff(5), 1);
        assert_eq!(gw.chat(&ChatRequest::user("q")).unwrap_err(), GatewayError::AuthError("401".into()));
        assert_eq!(flaky.calls(), 1);
    }

    #[test]
    fn idempotency_key_stable_across_retries() {
        struct Recorder(Mutex<Vec<String>>, AtomicUsize);
        impl Transport for Recorder {
            fn describe(&self) -> String {
                "recorder".into()
            }
            fn supports(&self, _: Capability) -> bool {
                true
            }
            fn chat(&self, _: &ChatRequest, key: &str) -> Result<String, TransportError> {
                self.0.lock().unwrap().push(key.to_string());
                if self.1.fetch_add(1, Ordering::SeqCst) < 2 {
                    Err(TransportError::Transient("t".into()))
                } else {
                    Ok("ok".into())
                }
            }
            fn score(&self, _: &ScoreRequest, _: &str) -> Result<ScoreResult, TransportError> {
                unreachable!()
            }
        }
        let rec = Arc::new(Recorder(Mutex::new(vec![]), AtomicUsize::new(0)));
        let gw = Gateway::new(rec.clone(), RetryPolicy::no_backoff(3), 1);
        let req = ChatRequest::user("distill me");
        gw.chat(&req).unwrap();
        let keys = rec.0.lock().unwrap().clone();
        assert_eq!(keys.len(), 3);
        assert!(keys.iter().all(|k| *k == req.digest()));
    }

    #[test]
    fn capability_errors() {
        let mock = MockTransport::new(MockTable::new(), DefaultPolicy::Echo).with_capabilities(&[Capability::Score]);
        let gw = Gateway::new(Arc::new(mock), RetryPolicy::default(), 1);
        assert!(matches!(gw.chat(&ChatRequest::user("q")), Err(GatewayError::CapabilityError { capability: Capability::Chat, .. })));
    }
}
