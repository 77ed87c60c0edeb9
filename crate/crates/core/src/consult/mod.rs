//! Retrieval-augmented consultation: retrieve, compose, chat, audit.

mod store;

use std::collections::{BTreeSet, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{info, warn};

use crate::audit::{AuditError, AuditReport, Auditor};
use crate::corpus::{Article, ArticleIndex, CitationKey};
use crate::gateway::{ChatRequest, Gateway, GatewayError};
use crate::prompts::PromptTemplates;
use crate::retriever::{retrieve, ArticleScorer, RetrievalError, RetrievalResult, DEFAULT_K};

pub use store::{JsonlStore, MemoryStore, SessionStore};

pub const DEFAULT_HISTORY_BUDGET: usize = 4000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConsultError {
    #[error("question is empty")]
    EmptyQuery,
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("session store: {0}")]
    Store(String),
    #[error("turn failed: {reason}")]
    TurnFailed { reason: String, stage: FailureStage, turn: Box<ConsultTurn> },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Audit(#[from] AuditError),
}

/// Where a failed turn stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureStage {
    Query,
    Retrieval,
    Chat,
    Audit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsultTurn {
    pub turn_index: usize,
    pub user_message: String,
    pub retrieved: RetrievalResult,
    pub included_keys: Vec<CitationKey>,
    pub prompt: String,
    pub answer: String,
    pub audit: AuditReport,
    pub timing_ms: u64,
    pub status: TurnStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub k: usize,
    pub threshold: f64,
    pub backend: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsultSession {
    pub session_id: String,
    pub created_at_ms: u64,
    pub config: SessionConfig,
    pub turns: Vec<ConsultTurn>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsultOverrides {
    #[serde(default)]
    pub k: Option<usize>,
    /// Restricts the prompt to these retrieved articles; keys not retrieved are ignored.
    #[serde(default)]
    pub included_keys: Option<Vec<CitationKey>>,
}

pub trait Clock: Send + Sync {
    fn now_ms(&self) -> u64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
    }
}

/// Always returns the same instant, so turn timings are zero.
#[derive(Debug, Clone, Copy)]
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now_ms(&self) -> u64 {
        self.0
    }
}

pub trait IdSource: Send + Sync {
    fn next_id(&self) -> String;
}

#[derive(Debug, Default)]
pub struct RandomIds;

impl IdSource for RandomIds {
    fn next_id(&self) -> String {
        uuid::Uuid::new_v4().to_string()
    }
}

/// UUID-shaped ids from a seeded stream.
#[derive(Debug)]
pub struct SeededIds(Mutex<ChaCha8Rng>);

impl SeededIds {
    pub fn new(seed: u64) -> Self {
        Self(Mutex::new(ChaCha8Rng::seed_from_u64(seed)))
    }
}

impl IdSource for SeededIds {
    fn next_id(&self) -> String {
        let mut bytes = [0u8; 16];
        self.0.lock().unwrap().fill_bytes(&mut bytes);
        uuid::Builder::from_random_bytes(bytes).into_uuid().to_string()
    }
}

/// Prior successful turns, oldest dropped first until the rest fit in `budget` characters.
pub fn condense_history(turns: &[ConsultTurn], templates: &PromptTemplates, budget: usize) -> String {
    let mut kept: Vec<String> = Vec::new();
    let mut used = 0;
    for t in turns.iter().rev().filter(|t| t.status == TurnStatus::Ok) {
        let block = format!("{} {}\n{} {}", templates.question_header, t.user_message.trim(), templates.answer_cue, t.answer.trim());
        let len = block.chars().count() + usize::from(!kept.is_empty());
        if used + len > budget {
            break;
        }
        used += len;
        kept.push(block);
    }
    kept.reverse();
    kept.join("\n")
}

/// Inference prompt. With no articles the reference block and the disclaimer are omitted.
pub fn compose_inference_prompt(
    question: &str,
    articles: &[&Article],
    history: &[ConsultTurn],
    templates: &PromptTemplates,
    history_budget: usize,
) -> Result<String, ConsultError> {
    if question.trim().is_empty() {
        return Err(ConsultError::EmptyQuery);
    }
    let history = condense_history(history, templates, history_budget);
    Ok(templates.consult_prompt(articles, true, &history, question))
}

pub struct ConsultService {
    index: Arc<ArticleIndex>,
    retriever: Arc<dyn ArticleScorer>,
    gateway: Arc<Gateway>,
    auditor: Auditor,
    store: Arc<dyn SessionStore>,
    clock: Arc<dyn Clock>,
    ids: Arc<dyn IdSource>,
    templates: PromptTemplates,
    history_budget: usize,
    default_k: usize,
    session_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl std::fmt::Debug for ConsultService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConsultService").field("backend", &self.gateway.describe()).field("default_k", &self.default_k).finish_non_exhaustive()
    }
}

impl ConsultService {
    pub fn new(index: Arc<ArticleIndex>, retriever: Arc<dyn ArticleScorer>, gateway: Arc<Gateway>, auditor: Auditor) -> Self {
        Self {
            index,
            retriever,
            gateway,
            auditor,
            store: Arc::new(MemoryStore::new()),
            clock: Arc::new(SystemClock),
            ids: Arc::new(RandomIds),
            templates: PromptTemplates::default(),
            history_budget: DEFAULT_HISTORY_BUDGET,
            default_k: DEFAULT_K,
            session_locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_store(mut self, store: Arc<dyn SessionStore>) -> Self {
        self.store = store;
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_ids(mut self, ids: Arc<dyn IdSource>) -> Self {
        self.ids = ids;
        self
    }

    pub fn with_templates(mut self, templates: PromptTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_history_budget(mut self, budget: usize) -> Self {
        self.history_budget = budget;
        self
    }

    pub fn with_default_k(mut self, k: usize) -> Self {
        self.default_k = k;
        self
    }

    pub fn index(&self) -> &ArticleIndex {
        &self.index
    }

    pub fn auditor(&self) -> &Auditor {
        &self.auditor
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Result<RetrievalResult, RetrievalError> {
        retrieve(self.retriever.as_ref(), query, k)
    }

    pub fn create_session(&self) -> Result<ConsultSession, ConsultError> {
        let session = ConsultSession {
            session_id: self.ids.next_id(),
            created_at_ms: self.clock.now_ms(),
            config: SessionConfig { k: self.default_k, threshold: self.auditor.threshold(), backend: self.gateway.describe() },
            turns: Vec::new(),
        };
        self.store.create(&session)?;
        info!(session = %session.session_id, "session created");
        Ok(session)
    }

    pub fn session(&self, session_id: &str) -> Result<ConsultSession, ConsultError> {
        self.store.get(session_id)?.ok_or_else(|| ConsultError::UnknownSession(session_id.to_string()))
    }

    fn lock_for(&self, session_id: &str) -> Arc<Mutex<()>> {
        self.session_locks.lock().unwrap().entry(session_id.to_string()).or_default().clone()
    }

    /// One turn of the inference loop. The turn is appended to the session
    /// whether or not it succeeds; failures come back as
    /// [`ConsultError::TurnFailed`] carrying the partial turn.
    pub fn consult(&self, session_id: &str, message: &str, overrides: &ConsultOverrides) -> Result<ConsultTurn, ConsultError> {
        let lock = self.lock_for(session_id);
        let _guard = lock.lock().unwrap();
        let session = self.session(session_id)?;
        let started = self.clock.now_ms();
        let k = overrides.k.unwrap_or(session.config.k);

        let mut turn = ConsultTurn {
            turn_index: session.turns.len(),
            user_message: message.to_string(),
            retrieved: RetrievalResult { query: message.to_string(), ranked: Vec::new() },
            included_keys: Vec::new(),
            prompt: String::new(),
            answer: String::new(),
            audit: AuditReport::default(),
            timing_ms: 0,
            status: TurnStatus::Ok,
            error: None,
        };
        let outcome = self.run_turn(&mut turn, &session, k, overrides);
        turn.timing_ms = self.clock.now_ms().saturating_sub(started);
        if let Err((stage, e)) = &outcome {
            turn.status = TurnStatus::Failed;
            turn.error = Some(e.to_string());
            warn!(session = session_id, ?stage, "turn failed: {e}");
        }
        self.store.append_turn(session_id, &turn)?;
        match outcome {
            Ok(()) => Ok(turn),
            Err((stage, e)) => Err(ConsultError::TurnFailed { reason: e.to_string(), stage, turn: Box::new(turn) }),
        }
    }

    fn run_turn(
        &self,
        turn: &mut ConsultTurn,
        session: &ConsultSession,
        k: usize,
        overrides: &ConsultOverrides,
    ) -> Result<(), (FailureStage, ConsultError)> {
        if turn.user_message.trim().is_empty() {
            return Err((FailureStage::Query, ConsultError::EmptyQuery));
        }
        turn.retrieved = self.retrieve(&turn.user_message, k).map_err(|e| (FailureStage::Retrieval, e.into()))?;
        let allowed: Option<BTreeSet<&CitationKey>> = overrides.included_keys.as_ref().map(|ks| ks.iter().collect());
        turn.included_keys =
            turn.retrieved.keys().filter(|k| allowed.as_ref().is_none_or(|a| a.contains(k))).cloned().collect();
        let articles: Vec<&Article> = turn.included_keys.iter().filter_map(|k| self.index.lookup(k)).collect();
        turn.prompt = compose_inference_prompt(&turn.user_message, &articles, &session.turns, &self.templates, self.history_budget)
            .map_err(|e| (FailureStage::Query, e))?;
        turn.answer = self.gateway.chat(&ChatRequest::user(turn.prompt.clone())).map_err(|e| (FailureStage::Chat, e.into()))?;
        turn.audit = self.auditor.audit(&turn.answer).map_err(|e| (FailureStage::Audit, e.into()))?;
        Ok(())
    }

    /// Answers every question once, with (r1) or without (r0) the top-k
    /// articles. Response ids pair across conditions: `q0001-r0` / `q0001-r1`.
    pub fn run_condition_batch(&self, questions: &[String], with_retrieval: bool) -> Result<Vec<BatchResponse>, ConsultError> {
        if questions.is_empty() {
            return Err(ConsultError::EmptyQuery);
        }
        let condition = if with_retrieval { "r1" } else { "r0" };
        Ok(questions
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let question_id = format!("q{:04}", i + 1);
                let mut resp = BatchResponse {
                    id: format!("{question_id}-{condition}"),
                    question_id,
                    condition: condition.to_string(),
                    question: q.clone(),
                    prompt: String::new(),
                    answer: String::new(),
                    audit: None,
                    error: None,
                };
                if let Err(e) = self.batch_item(&mut resp, with_retrieval) {
                    warn!(id = %resp.id, "batch item failed: {e}");
                    resp.error = Some(e.to_string());
                }
                resp
            })
            .collect())
    }

    fn batch_item(&self, resp: &mut BatchResponse, with_retrieval: bool) -> Result<(), ConsultError> {
        let articles: Vec<&Article> = if with_retrieval {
            let r = self.retrieve(&resp.question, self.default_k)?;
            r.keys().filter_map(|k| self.index.lookup(k)).collect()
        } else {
            Vec::new()
        };
        resp.prompt = compose_inference_prompt(&resp.question, &articles, &[], &self.templates, self.history_budget)?;
        resp.answer = self.gateway.chat(&ChatRequest::user(resp.prompt.clone()))?;
        resp.audit = Some(self.auditor.audit(&resp.answer)?);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchResponse {
    pub id: String,
    pub question_id: String,
    pub condition: String,
    pub question: String,
    pub prompt: String,
    pub answer: String,
    #[serde(default)]
    pub audit: Option<AuditReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{register_mock, DefaultPolicy, MockTable};
    use crate::prompts::DISCLAIMER;
    use crate::retriever::LexicalIndex;

    fn index() -> Arc<ArticleIndex> {
        let arts = [
            (1046, "结婚应当男女双方完全自愿，禁止任何一方对另一方加以强迫，禁止任何组织或者个人加以干涉。"),
            (1047, "结婚年龄，男不得早于二十二周岁，女不得早于二十周岁。"),
            (1049, "要求结婚的男女双方应当亲自到婚姻登记机关申请结婚登记。"),
            (304, "共有人可以协商确定分割方式。"),
        ];
        Arc::new(
            ArticleIndex::from_articles(
                arts.iter()
                    .map(|(n, t)| Article { law_title: "民法典".into(), article_no: *n, paragraph_no: None, text: t.to_string(), source_id: String::new() })
                    .collect(),
                Default::default(),
            )
            .unwrap(),
        )
    }

    fn service(policy: DefaultPolicy) -> ConsultService {
        let idx = index();
        let lex = Arc::new(LexicalIndex::with_defaults(&idx).unwrap());
        let auditor = Auditor::new(idx.clone(), crate::audit::DEFAULT_SIM_THRESHOLD).unwrap();
        ConsultService::new(idx, lex, Arc::new(register_mock(MockTable::new(), policy)), auditor)
            .with_clock(Arc::new(FixedClock(0)))
            .with_ids(Arc::new(SeededIds::new(1)))
    }

    #[test]
    fn prompt_with_and_without_articles() {
        let idx = index();
        let arts: Vec<&Article> = idx.articles().take(3).collect();
        let t = PromptTemplates::default();
        let p = compose_inference_prompt("多大可以结婚？", &arts, &[], &t, 4000).unwrap();
        assert!(p.contains("[1] ") && p.contains("[3] ") && !p.contains("[4] ") && p.contains(DISCLAIMER));
        let p0 = compose_inference_prompt("多大可以结婚？", &[], &[], &t, 4000).unwrap();
        assert!(!p0.contains(&t.reference_header) && !p0.contains(DISCLAIMER));
        assert_eq!(compose_inference_prompt(" ", &[], &[], &t, 4000), Err(ConsultError::EmptyQuery));
    }

    #[test]
    fn turn_with_toggle() {
        let svc = service(DefaultPolicy::Constant { logprob_per_token: -1.0, text: "根据《民法典》第一千零四十七条的规定，结婚年龄，男不得早于二十二周岁，女不得早于二十周岁。".into() });
        let s = svc.create_session().unwrap();
        let t = svc.consult(&s.session_id, "男方多大年龄可以结婚？", &ConsultOverrides::default()).unwrap();
        assert!(t.retrieved.keys().any(|k| *k == CitationKey::article("民法典", 1047)));
        assert!(!t.audit.has_h1 && t.audit.mentions_articles());

        let drop = t.included_keys.iter().find(|k| **k != CitationKey::article("民法典", 1047)).unwrap().clone();
        let keep: Vec<CitationKey> = t.included_keys.iter().filter(|k| **k != drop).cloned().collect();
        let t2 = svc
            .consult(&s.session_id, "男方多大年龄可以结婚？", &ConsultOverrides { k: None, included_keys: Some(keep) })
            .unwrap();
        assert!(!t2.prompt.contains(&svc.index().lookup(&drop).unwrap().text));
        assert_eq!(svc.session(&s.session_id).unwrap().turns.len(), 2);
    }

    #[test]
    fn failed_turn_is_recorded() {
        let svc = service(DefaultPolicy::Error);
        let s = svc.create_session().unwrap();
        let err = svc.consult(&s.session_id, "结婚年龄", &ConsultOverrides::default()).unwrap_err();
        assert!(matches!(err, ConsultError::TurnFailed { stage: FailureStage::Chat, .. }));
        let stored = svc.session(&s.session_id).unwrap();
        assert_eq!(stored.turns[0].status, TurnStatus::Failed);
        assert!(matches!(svc.consult("nope", "x", &ConsultOverrides::default()), Err(ConsultError::UnknownSession(_))));
    }

    #[test]
    fn history_budget_drops_oldest() {
        let t = PromptTemplates::default();
        let mk = |i: usize| ConsultTurn {
            turn_index: i,
            user_message: format!("question {i}"),
            retrieved: RetrievalResult { query: String::new(), ranked: Vec::new() },
            included_keys: Vec::new(),
            prompt: String::new(),
            answer: "a".repeat(50),
            audit: AuditReport::default(),
            timing_ms: 0,
            status: TurnStatus::Ok,
            error: None,
        };
        let turns: Vec<ConsultTurn> = (0..5).map(mk).collect();
        let h = condense_history(&turns, &t, 160);
        assert!(h.contains("question 4") && h.contains("question 3") && !h.contains("question 2"));
        assert!(h.chars().count() <= 160);
        assert_eq!(condense_history(&turns, &t, 10), "");
    }

    #[test]
    fn jsonl_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let svc = service(DefaultPolicy::Echo).with_store(Arc::new(JsonlStore::open(dir.path()).unwrap()));
        let s = svc.create_session().unwrap();
        let _ = svc.consult(&s.session_id, "结婚年龄", &ConsultOverrides::default());
        let back = svc.session(&s.session_id).unwrap();
        assert_eq!(back.turns.len(), 1);
        assert_eq!(back.session_id, s.session_id);
        assert!(matches!(svc.session("../etc"), Err(ConsultError::UnknownSession(_))));
    }
}
