use std::collections::{HashMap, VecDeque};
use std::io::BufRead;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{Capability, ChatRequest, Gateway, RetryPolicy, ScoreRequest, ScoreResult, Transport, TransportError};

/// What a mock answers for requests missing from its table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum DefaultPolicy {
    /// Fail with `MockMiss`.
    Error,
    /// Chat echoes the last user message; scoring behaves like
    /// `Constant { logprob_per_token: -1.0 }`.
    Echo,
    /// Chat answers `text`; scoring returns `logprob_per_token * n` for an
    /// `n`-token continuation, where tokens are whitespace-separated runs.
    Constant {
        logprob_per_token: f64,
        #[serde(default)]
        text: String,
    },
}

/// Token count under the mock's rule: whitespace-separated runs, at least one.
pub fn mock_token_count(continuation: &str) -> u32 {
    continuation.split_whitespace().count().max(1) as u32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MockEntry {
    Chat { completion: String },
    Score { logprob_sum: f64, token_count: u32 },
}

/// Canned responses keyed by request digest.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MockTable {
    entries: HashMap<String, MockEntry>,
}

/// One line of a mock table file. Either `digest` or the request itself
/// (`chat` or `score`) identifies the entry.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MockLine {
    #[serde(default)]
    digest: Option<String>,
    #[serde(default)]
    chat: Option<ChatRequest>,
    #[serde(default)]
    score: Option<ScoreRequest>,
    #[serde(flatten)]
    entry: MockEntry,
}

impl MockTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, digest: impl Into<String>, entry: MockEntry) {
        self.entries.insert(digest.into(), entry);
    }

    pub fn insert_chat(&mut self, request: &ChatRequest, completion: impl Into<String>) {
        self.insert(request.digest(), MockEntry::Chat { completion: completion.into() });
    }

    pub fn insert_score(&mut self, prompt: &str, continuation: &str, result: ScoreResult) {
        self.insert(
            ScoreRequest::new(prompt, continuation).digest(),
            MockEntry::Score { logprob_sum: result.logprob_sum, token_count: result.token_count },
        );
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, digest: &str) -> Option<&MockEntry> {
        self.entries.get(digest)
    }

    /// Reads JSONL lines such as
    /// `{"chat": {"messages": [...]}, "completion": "..."}` or
    /// `{"score": {"prompt": "...", "continuation": "..."}, "logprob_sum": -4.0, "token_count": 2}`.
    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self, String> {
        let mut table = Self::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| e.to_string())?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: MockLine = serde_json::from_str(&line).map_err(|e| format!("mock table line {}: {e}", i + 1))?;
            let digest = match (parsed.digest, parsed.chat, parsed.score) {
                (Some(d), _, _) => d,
                (None, Some(c), _) => c.digest(),
                (None, None, Some(s)) => s.digest(),
                _ => return Err(format!("mock table line {}: needs digest, chat or score", i + 1)),
            };
            table.insert(digest, parsed.entry);
        }
        Ok(table)
    }
}

#[derive(Debug)]
pub struct MockTransport {
    table: MockTable,
    policy: DefaultPolicy,
    capabilities: Vec<Capability>,
}

impl MockTransport {
    pub fn new(table: MockTable, policy: DefaultPolicy) -> Self {
        Self { table, policy, capabilities: vec![Capability::Chat, Capability::Score] }
    }

    pub fn with_capabilities(mut self, capabilities: &[Capability]) -> Self {
        self.capabilities = capabilities.to_vec();
        self
    }
}

impl Transport for MockTransport {
    fn describe(&self) -> String {
        format!("mock({} entries)", self.table.len())
    }

    fn supports(&self, capability: Capability) -> bool {
        self.capabilities.contains(&capability)
    }

    fn chat(&self, request: &ChatRequest, _key: &str) -> Result<String, TransportError> {
        let digest = request.digest();
        match self.table.get(&digest) {
            Some(MockEntry::Chat { completion }) => return Ok(completion.clone()),
            Some(MockEntry::Score { .. }) => return Err(TransportError::Fatal(format!("mock entry {digest} is a score entry"))),
            None => {}
        }
        match &self.policy {
            DefaultPolicy::Error => Err(TransportError::MockMiss(digest)),
            DefaultPolicy::Echo => Ok(request.messages.last().map(|m| m.content.clone()).unwrap_or_default()),
            DefaultPolicy::Constant { text, .. } => Ok(text.clone()),
        }
    }

    fn score(&self, request: &ScoreRequest, _key: &str) -> Result<ScoreResult, TransportError> {
        let digest = request.digest();
        match self.table.get(&digest) {
            Some(MockEntry::Score { logprob_sum, token_count }) => {
                return Ok(ScoreResult { logprob_sum: *logprob_sum, token_count: *token_count })
            }
            Some(MockEntry::Chat { .. }) => return Err(TransportError::Fatal(format!("mock entry {digest} is a chat entry"))),
            None => {}
        }
        let per_token = match &self.policy {
            DefaultPolicy::Error => return Err(TransportError::MockMiss(digest)),
            DefaultPolicy::Echo => -1.0,
            DefaultPolicy::Constant { logprob_per_token, .. } => *logprob_per_token,
        };
        let n = mock_token_count(&request.continuation);
        Ok(ScoreResult { logprob_sum: per_token * n as f64, token_count: n })
    }
}

/// Builds a gateway over a mock table (no retries needed, unbounded-ish window).
pub fn register_mock(table: MockTable, default_policy: DefaultPolicy) -> Gateway {
    Gateway::new(Arc::new(MockTransport::new(table, default_policy)), RetryPolicy::no_backoff(1), 64)
}

/// Wraps a transport and fails its first calls with scripted errors.
pub struct FaultInjector {
    inner: Arc<dyn Transport>,
    faults: Mutex<VecDeque<TransportError>>,
    calls: AtomicUsize,
}

impl FaultInjector {
    pub fn new(inner: Arc<dyn Transport>, faults: Vec<TransportError>) -> Self {
        Self { inner, faults: Mutex::new(faults.into()), calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn next_fault(&self) -> Option<TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.faults.lock().unwrap().pop_front()
    }
}

impl Transport for FaultInjector {
    fn describe(&self) -> String {
        format!("faulty({})", self.inner.describe())
    }

    fn supports(&self, capability: Capability) -> bool {
        self.inner.supports(capability)
    }

    fn chat(&self, request: &ChatRequest, key: &str) -> Result<String, TransportError> {
        match self.next_fault() {
            Some(e) => Err(e),
            None => self.inner.chat(request, key),
        }
    }

    fn score(&self, request: &ScoreRequest, key: &str) -> Result<ScoreResult, TransportError> {
        match self.next_fault() {
            Some(e) => Err(e),
            None => self.inner.score(request, key),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::GatewayError;

    #[test]
    fn table_lookup_and_policies() {
        let mut table = MockTable::new();
        table.insert_score("p", "c", ScoreResult { logprob_sum: -4.0, token_count: 2 });
        table.insert_chat(&ChatRequest::user("a"), "A");
        table.insert_chat(&ChatRequest::user("b"), "B");
        let gw = register_mock(table.clone(), DefaultPolicy::Error);
        assert_eq!(gw.score_continuation("p", "c").unwrap(), ScoreResult { logprob_sum: -4.0, token_count: 2 });
        assert_eq!(gw.score_continuation("p", "c").unwrap(), gw.score_continuation("p", "c").unwrap());
        assert_eq!(gw.chat(&ChatRequest::user("b")).unwrap(), "B");
        assert!(matches!(gw.chat(&ChatRequest::user("zzz")), Err(GatewayError::MockMiss(_))));
        assert!(matches!(gw.score_continuation("p", ""), Err(GatewayError::InvalidRequest(_))));

        let gw = register_mock(table, DefaultPolicy::Constant { logprob_per_token: -1.0, text: String::new() });
        assert_eq!(gw.score_continuation("p", "three word answer").unwrap(), ScoreResult { logprob_sum: -3.0, token_count: 3 });
    }

    #[test]
    fn echo_policy() {
        let gw = register_mock(MockTable::new(), DefaultPolicy::Echo);
        assert_eq!(gw.chat(&ChatRequest::user("hello there")).unwrap(), "hello there");
    }

    #[test]
    fn jsonl_table() {
        let src = r#"{"chat": {"messages": [{"role": "user", "content": "q"}]}, "completion": "answer"}
{"score": {"prompt": "p", "continuation": "c"}, "logprob_sum": -1.5, "token_count": 3}
"#;
        let table = MockTable::from_jsonl(src.as_bytes()).unwrap();
        assert_eq!(table.len(), 2);
        let gw = register_mock(table, DefaultPolicy::Error);
        assert_eq!(gw.chat(&ChatRequest::user("q")).unwrap(), "answer");
        assert_eq!(gw.score_continuation("p", "c").unwrap().token_count, 3);
        assert!(MockTable::from_jsonl(r#"{"completion": "x"}"#.as_bytes()).is_err());
    }
}
