//! BM25 article retrieval, Macro-Recall@k evaluation and distractor sampling.
//!
//! Term weight for a query term `t` in document `d`:
//!
//! ```text
//! idf(t)    = ln(1 + (N - df + 0.5) / (df + 0.5))
//! score(t,d) = idf(t) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * |d| / avgdl))
//! ```
//!
//! summed over the distinct query terms. Ties rank by ascending key.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ArticleIndex, CitationKey};
use crate::tokenize::TokenizerConfig;

pub const DEFAULT_K: usize = 3;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RetrievalError {
    #[error("article corpus is empty")]
    EmptyCorpus,
    #[error("query is empty after tokenization")]
    EmptyQuery,
    #[error("k must be positive")]
    ZeroK,
    #[error("no retrieval runs to evaluate")]
    NoData,
    #[error("gold annotation for {query:?} must hold 1..=3 keys, got {count}")]
    BadGold { query: String, count: usize },
    #[error("need {requested} distractors but only {available} non-gold articles exist")]
    InsufficientCorpus { requested: usize, available: usize },
    #[error("scoring backend failed: {0}")]
    Backend(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredKey {
    pub key: CitationKey,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub ranked: Vec<ScoredKey>,
}

impl RetrievalResult {
    pub fn keys(&self) -> impl Iterator<Item = &CitationKey> {
        self.ranked.iter().map(|s| &s.key)
    }

    pub fn top_k(&self, k: usize) -> impl Iterator<Item = &CitationKey> {
        self.keys().take(k)
    }
}

/// Anything that can score every article for a query. The lexical index is
/// one implementation; an embedding service can be plugged in behind the
/// same contract.
pub trait ArticleScorer: Send + Sync {
    fn score_all(&self, query: &str) -> Result<Vec<ScoredKey>, RetrievalError>;
}

/// Ranks `scores` by descending score, ascending key on ties, and truncates to `k`.
pub fn rank(mut scores: Vec<ScoredKey>, k: usize) -> Vec<ScoredKey> {
    scores.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.key.cmp(&b.key))
    });
    let mut seen = std::collections::HashSet::new();
    scores.retain(|s| seen.insert(s.key.clone()));
    scores.truncate(k);
    scores
}

pub fn retrieve(scorer: &dyn ArticleScorer, query: &str, k: usize) -> Result<RetrievalResult, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let scores = scorer.score_all(query)?;
    Ok(RetrievalResult { query: query.to_string(), ranked: rank(scores, k) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DocEntry {
    key: CitationKey,
    len: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Posting {
    doc: u32,
    tf: u32,
}

/// Inverted index over article texts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LexicalIndex {
    params: Bm25Params,
    tokenizer: TokenizerConfig,
    docs: Vec<DocEntry>,
    avg_len: f64,
    postings: BTreeMap<String, Vec<Posting>>,
}

impl LexicalIndex {
    pub fn build(articles: &ArticleIndex, tokenizer: TokenizerConfig, params: Bm25Params) -> Result<Self, RetrievalError> {
        if articles.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let mut docs = Vec::with_capacity(articles.len());
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut total_len: u64 = 0;

        for (doc, article) in articles.articles().enumerate() {
            let tokens = tokenizer.tokenize(&article.text);
            total_len += tokens.len() as u64;
            docs.push(DocEntry { key: article.key(), len: tokens.len() as u32 });
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, tf) in tf {
                postings.entry(term).or_default().push(Posting { doc: doc as u32, tf });
            }
        }
        let avg_len = total_len as f64 / docs.len() as f64;
        Ok(Self { params, tokenizer, docs, avg_len, postings })
    }

    pub fn with_defaults(articles: &ArticleIndex) -> Result<Self, RetrievalError> {
        Self::build(articles, TokenizerConfig::default(), Bm25Params::default())
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    /// Number of documents with at least one indexed term.
    pub fn num_nonempty_docs(&self) -> usize {
        self.docs.iter().filter(|d| d.len > 0).count()
    }

    pub fn num_terms(&self) -> usize {
        self.postings.len()
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    fn idf(&self, df: usize) -> f64 {
        let n = self.docs.len() as f64;
        let df = df as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    pub fn retrieve(&self, query: &str, k: usize) -> Result<RetrievalResult, RetrievalError> {
        retrieve(self, query, k)
    }

    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string(self)
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

impl ArticleScorer for LexicalIndex {
    fn score_all(&self, query: &str) -> Result<Vec<ScoredKey>, RetrievalError> {
        let terms: BTreeSet<String> = self.tokenizer.tokenize(query).into_iter().collect();
        if terms.is_empty() {
            return Err(RetrievalError::EmptyQuery);
        }
        let Bm25Params { k1, b } = self.params;
        let mut acc = vec![0.0f64; self.docs.len()];
        for term in &terms {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(list.len());
            for p in list {
                let dl = self.docs[p.doc as usize].len as f64;
                let tf = p.tf as f64;
                acc[p.doc as usize] += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / self.avg_len));
            }
        }
        Ok(self
            .docs
            .iter()
            .zip(acc)
            .map(|(d, score)| ScoredKey { key: d.key.clone(), score })
            .collect())
    }
}

/// Gold articles for one query (at most three, as annotated).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub query: String,
    #[serde(alias = "gold")]
    pub gold_keys: BTreeSet<CitationKey>,
}

pub const MAX_GOLD: usize = 3;

impl GoldAnnotation {
    pub fn new(query: impl Into<String>, gold_keys: impl IntoIterator<Item = CitationKey>) -> Result<Self, RetrievalError> {
        let query = query.into();
        let gold_keys: BTreeSet<_> = gold_keys.into_iter().collect();
        if gold_keys.is_empty() || gold_keys.len() > MAX_GOLD {
            return Err(RetrievalError::BadGold { query, count: gold_keys.len() });
        }
        Ok(Self { query, gold_keys })
    }

    /// A gold key without a paragraph is satisfied by any paragraph of its article.
    pub fn matches(gold: &CitationKey, retrieved: &CitationKey) -> bool {
        if gold.paragraph_no.is_none() {
            gold.same_article(retrieved)
        } else {
            gold == retrieved
        }
    }

    pub fn recall_at(&self, result: &RetrievalResult, k: usize) -> f64 {
        let top: Vec<&CitationKey> = result.top_k(k).collect();
        let hit = self
            .gold_keys
            .iter()
            .filter(|g| top.iter().any(|r| Self::matches(g, r)))
            .count();
        hit as f64 / self.gold_keys.len() as f64
    }
}

/// Per-query recall@k averaged uniformly over queries.
pub fn macro_recall_at_k(runs: &[(RetrievalResult, GoldAnnotation)], k: usize) -> Result<f64, RetrievalError> {
    if runs.is_empty() {
        return Err(RetrievalError::NoData);
    }
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    let sum: f64 = runs.iter().map(|(r, g)| g.recall_at(r, k)).sum();
    Ok(sum / runs.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMetrics {
    pub macro_recall_at: BTreeMap<usize, f64>,
    pub n_queries: usize,
}

pub fn evaluate_retrieval(runs: &[(RetrievalResult, GoldAnnotation)], ks: &[usize]) -> Result<RetrievalMetrics, RetrievalError> {
    let mut macro_recall_at = BTreeMap::new();
    for &k in ks {
        macro_recall_at.insert(k, macro_recall_at_k(runs, k)?);
    }
    Ok(RetrievalMetrics { macro_recall_at, n_queries: runs.len() })
}

/// How distractors are drawn: a share of near-misses from just below the
/// retrieval cutoff, the rest uniformly from the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistractorPolicy {
    pub near_miss_ratio: f64,
    /// Near-misses come from ranks `rank_cutoff + 1 ..= rank_cutoff + window`.
    pub rank_cutoff: usize,
    pub window: usize,
}

impl Default for DistractorPolicy {
    fn default() -> Self {
        Self { near_miss_ratio: 0.5, rank_cutoff: DEFAULT_K, window: 10 }
    }
}

fn is_gold(gold: &BTreeSet<CitationKey>, key: &CitationKey) -> bool {
    gold.iter().any(|g| GoldAnnotation::matches(g, key) || g == key)
}

/// Samples `count` distinct non-gold article keys, deterministic for `seed`.
pub fn sample_distractors(
    index: &ArticleIndex,
    scorer: &dyn ArticleScorer,
    query: &str,
    gold_keys: &BTreeSet<CitationKey>,
    count: usize,
    seed: u64,
    policy: &DistractorPolicy,
) -> Result<Vec<CitationKey>, RetrievalError> {
    let non_gold: Vec<&CitationKey> = index.keys().filter(|k| !is_gold(gold_keys, k)).collect();
    if count > non_gold.len() {
        return Err(RetrievalError::InsufficientCorpus { requested: count, available: non_gold.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_near = ((count as f64) * policy.near_miss_ratio.clamp(0.0, 1.0)).round() as usize;

    let mut near_pool: Vec<CitationKey> = match scorer.score_all(query) {
        Ok(scores) => rank(scores, policy.rank_cutoff + policy.window)
            .into_iter()
            .skip(policy.rank_cutoff)
            .map(|s| s.key)
            .filter(|k| !is_gold(gold_keys, k))
            .collect(),
        Err(RetrievalError::EmptyQuery) => Vec::new(),
        Err(e) => return Err(e),
    };
    near_pool.shuffle(&mut rng);
    near_pool.truncate(n_near);

    let mut rest: Vec<CitationKey> = non_gold
        .into_iter()
        .filter(|k| !near_pool.contains(k))
        .cloned()
        .collect();
    rest.shuffle(&mut rng);

    let mut out = near_pool;
    let need = count - out.len();
    out.extend(rest.into_iter().take(need));
    Ok(out)
}

/// Maps keys to their per-query rank positions (1-based); handy for reports.
pub fn rank_positions(result: &RetrievalResult) -> HashMap<&CitationKey, usize> {
    result.keys().enumerate().map(|(i, k)| (k, i + 1)).collect()
}
