//! Lowest-perplexity multi-choice evaluation and human-evaluation statistics.

mod human;

use std::collections::HashSet;
use std::sync::LazyLock;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::gateway::{Capability, Gateway, GatewayError};

pub use human::{
    aggregate_rankings, hallucination_proportions, pairwise_winrate, redundancy_proxy, redundancy_rates, render_hallucination_table,
    render_pairwise, render_rankings, HallucinationRates, HumanRankRecord, PairwiseRecord, RankEntry, RankingSummary,
    RedundancyJudgment, RedundancyRate, SystemRanks, Winner, WinRates,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid item {id}: {reason}")]
    InvalidItem { id: String, reason: String },
    #[error("invalid run metadata: {0}")]
    BadMeta(String),
    #[error("malformed ballot for question {0}")]
    MalformedBallot(String),
    #[error("no data to aggregate")]
    NoData,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// exp(-logprob_sum / token_count).
pub fn perplexity_of(logprob_sum: f64, token_count: u32) -> Result<f64, EvalError> {
    if token_count == 0 {
        return Err(EvalError::Domain("token_count must be at least 1".into()));
    }
    if !logprob_sum.is_finite() {
        return Err(EvalError::Domain(format!("non-finite log-probability {logprob_sum}")));
    }
    Ok((-logprob_sum / token_count as f64).exp())
}

/// A multi-choice instance: the model scores each continuation given `prompt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalChoiceItem {
    pub id: String,
    pub prompt: String,
    pub choices: Vec<String>,
    pub gold_index: usize,
}

impl EvalChoiceItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |reason: &str| Err(EvalError::InvalidItem { id: self.id.clone(), reason: reason.to_string() });
        if self.choices.len() < 2 {
            return bad("needs at least two choices");
        }
        if self.gold_index >= self.choices.len() {
            return bad("gold_index out of range");
        }
        let distinct: HashSet<&str> = self.choices.iter().map(String::as_str).collect();
        if distinct.len() != self.choices.len() {
            return bad("choices are not distinct");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredChoice {
    pub choice_index: usize,
    pub logprob_sum: f64,
    pub token_count: u32,
    pub perplexity: f64,
}

impl ScoredChoice {
    pub fn new(choice_index: usize, logprob_sum: f64, token_count: u32) -> Result<Self, EvalError> {
        let perplexity = perplexity_of(logprob_sum, token_count)?;
        Ok(Self { choice_index, logprob_sum, token_count, perplexity })
    }

    pub fn mean_logprob(&self) -> f64 {
        self.logprob_sum / self.token_count as f64
    }
}

/// Index of the lowest-perplexity choice; ties go to the lowest index.
pub fn argmin_perplexity(scores: &[ScoredChoice]) -> Option<usize> {
    let mut best: Option<&ScoredChoice> = None;
    for s in scores {
        if best.is_none_or(|b| s.perplexity < b.perplexity) {
            best = Some(s);
        }
    }
    best.map(|b| b.choice_index)
}

/// Index of the highest mean per-token log-likelihood; ties go to the lowest index.
pub fn argmax_mean_logprob(scores: &[ScoredChoice]) -> Option<usize> {
    let mut best: Option<&ScoredChoice> = None;
    for s in scores {
        if best.is_none_or(|b| s.mean_logprob() > b.mean_logprob()) {
            best = Some(s);
        }
    }
    best.map(|b| b.choice_index)
}

static STAGE_TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^s[0-8]$").unwrap());

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRunMeta {
    pub run_id: String,
    #[serde(default)]
    pub stage_tag: Option<String>,
    #[serde(default)]
    pub with_retrieval: bool,
    #[serde(default)]
    pub dataset_name: String,
    #[serde(default)]
    pub backend: String,
}

impl EvalRunMeta {
    pub fn new(run_id: impl Into<String>, dataset_name: impl Into<String>) -> Self {
        Self { run_id: run_id.into(), dataset_name: dataset_name.into(), ..Self::default() }
    }

    pub fn with_stage(mut self, tag: &str) -> Result<Self, EvalError> {
        if !STAGE_TAG.is_match(tag) {
            return Err(EvalError::BadMeta(format!("stage tag {tag:?} is not one of s0..s8")));
        }
        self.stage_tag = Some(tag.to_string());
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        match &self.stage_tag {
            Some(t) if !STAGE_TAG.is_match(t) => Err(EvalError::BadMeta(format!("stage tag {t:?} is not one of s0..s8"))),
            _ => Ok(()),
        }
    }

    /// Applies a `key=value,...` spec such as `stage=s3,retrieval=false`.
    /// Recognized keys: stage, retrieval, dataset, run.
    pub fn apply_spec(mut self, spec: &str) -> Result<Self, EvalError> {
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').ok_or_else(|| EvalError::BadMeta(format!("expected key=value, got {part:?}")))?;
            let v = v.trim();
            match k.trim() {
                "stage" => self = self.with_stage(v)?,
                "retrieval" => {
                    self.with_retrieval = v.parse().map_err(|_| EvalError::BadMeta(format!("retrieval must be true or false, got {v:?}")))?
                }
                "dataset" => self.dataset_name = v.to_string(),
                "run" => self.run_id = v.to_string(),
                other => return Err(EvalError::BadMeta(format!("unknown key {other:?}"))),
            }
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub id: String,
    pub gold_index: usize,
    /// `None` when scoring failed.
    pub predicted: Option<usize>,
    pub scores: Vec<ScoredChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ItemResult {
    pub fn is_correct(&self) -> bool {
        self.predicted == Some(self.gold_index)
    }

    pub fn failed(&self) -> bool {
        self.predicted.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub meta: EvalRunMeta,
    pub per_item: Vec<ItemResult>,
    pub accuracy: f64,
    pub correct: usize,
    /// Items that count towards accuracy.
    pub evaluated: usize,
    pub failed: usize,
    pub strict: bool,
}

impl EvalReport {
    /// Rebuilds the summary from `per_item`; used on construction and to verify reports.
    pub fn from_items(meta: EvalRunMeta, per_item: Vec<ItemResult>, strict: bool) -> Self {
        let correct = per_item.iter().filter(|r| r.is_correct()).count();
        let failed = per_item.iter().filter(|r| r.failed()).count();
        let evaluated = if strict { per_item.len() } else { per_item.len() - failed };
        let accuracy = if evaluated == 0 { 0.0 } else { correct as f64 / evaluated as f64 };
        Self { meta, per_item, accuracy, correct, evaluated, failed, strict }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EvalOptions {
    /// Count failed items as incorrect instead of excluding them.
    pub strict: bool,
}

fn score_item(gateway: &Gateway, item: &EvalChoiceItem) -> Result<ItemResult, EvalError> {
    let mut scores = Vec::with_capacity(item.choices.len());
    for (i, choice) in item.choices.iter().enumerate() {
        let r = gateway.score_continuation(&item.prompt, choice)?;
        scores.push(ScoredChoice::new(i, r.logprob_sum, r.token_count)?);
    }
    let predicted = argmin_perplexity(&scores);
    let by_loglik = argmax_mean_logprob(&scores);
    if predicted != by_loglik {
        return Err(EvalError::Domain(format!(
            "item {}: argmin perplexity {predicted:?} disagrees with argmax mean log-likelihood {by_loglik:?}",
            item.id
        )));
    }
    Ok(ItemResult { id: item.id.clone(), gold_index: item.gold_index, predicted, scores, error: None })
}

/// Scores every choice of every item and predicts the lowest-perplexity
/// choice. Items are scored in parallel (bounded by the gateway window);
/// `per_item` follows input order.
pub fn eval_multichoice(gateway: &Gateway, items: &[EvalChoiceItem], meta: EvalRunMeta, options: EvalOptions) -> Result<EvalReport, EvalError> {
    meta.validate()?;
    for item in items {
        item.validate()?;
    }
    if !gateway.supports(Capability::Score) {
        return Err(GatewayError::CapabilityError { backend: gateway.describe(), capability: Capability::Score }.into());
    }
    let results: Vec<Result<ItemResult, EvalError>> = items.par_iter().map(|item| score_item(gateway, item)).collect();
    let mut per_item = Vec::with_capacity(items.len());
    for (item, res) in items.iter().zip(results) {
        match res {
            Ok(r) => per_item.push(r),
            Err(e @ EvalError::Gateway(GatewayError::CapabilityError { .. })) => return Err(e),
            Err(e) => {
                warn!(item = %item.id, "scoring failed: {e}");
                per_item.push(ItemResult {
                    id: item.id.clone(),
                    gold_index: item.gold_index,
                    predicted: None,
                    scores: Vec::new(),
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let report = EvalReport::from_items(meta, per_item, options.strict);
    if report.failed > 0 {
        warn!(failed = report.failed, strict = options.strict, "some items could not be scored");
    }
    Ok(report)
}

/// Table of accuracies (%) with one row per run and one column per dataset.
pub fn render_accuracy_table(reports: &[EvalReport]) -> String {
    let mut datasets: Vec<&str> = Vec::new();
    let mut rows: Vec<String> = Vec::new();
    for r in reports {
        if !datasets.contains(&r.meta.dataset_name.as_str()) {
            datasets.push(&r.meta.dataset_name);
        }
        let label = row_label(&r.meta);
        if !rows.contains(&label) {
            rows.push(label);
        }
    }
    let mut out = String::from("| Model |");
    for d in &datasets {
        out.push_str(&format!(" {d} |"));
    }
    out.push_str("\n|---|");
    out.push_str(&"---:|".repeat(datasets.len()));
    out.push('\n');
    for row in &rows {
        out.push_str(&format!("| {row} |"));
        for d in &datasets {
            let cell = reports
                .iter()
                .find(|r| &row_label(&r.meta) == row && r.meta.dataset_name == *d)
                .map(|r| format!("{:.1}", r.accuracy * 100.0))
                .unwrap_or_else(|| "-".into());
            out.push_str(&format!(" {cell} |"));
        }
        out.push('\n');
    }
    out
}

fn row_label(meta: &EvalRunMeta) -> String {
    match &meta.stage_tag {
        Some(t) => format!("{t} ({})", meta.run_id),
        None => meta.run_id.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{register_mock, DefaultPolicy, MockTable, ScoreResult};

    #[test]
    fn perplexity_examples() {
        assert!((perplexity_of(-4.0, 2).unwrap() - 7.389_056_098_930_65).abs() < 1e-12);
        assert_eq!(perplexity_of(0.0, 5).unwrap(), 1.0);
        assert!((perplexity_of(-3.0, 1).unwrap() - 20.085_536_923_187_668).abs() < 1e-12);
        assert!(matches!(perplexity_of(-1.0, 0), Err(EvalError::Domain(_))));
    }

    fn item(id: &str, gold: usize) -> EvalChoiceItem {
        EvalChoiceItem { id: id.into(), prompt: format!("q{id}"), choices: vec!["yes".into(), "no".into()], gold_index: gold }
    }

    #[test]
    fn two_choice_item() {
        let mut table = MockTable::new();
        table.insert_score("q1", "yes", ScoreResult { logprob_sum: -4.0, token_count: 2 });
        table.insert_score("q1", "no", ScoreResult { logprob_sum: -3.0, token_count: 1 });
        let gw = register_mock(table, DefaultPolicy::Error);
        let report = eval_multichoice(&gw, &[item("1", 0)], EvalRunMeta::new("r", "d"), EvalOptions::default()).unwrap();
        assert_eq!(report.per_item[0].predicted, Some(0));
        assert_eq!(report.accuracy, 1.0);
    }

    #[test]
    fn failures_excluded_unless_strict() {
        let mut table = MockTable::new();
        for (q, a, b) in [("q1", -1.0, -2.0), ("q2", -2.0, -1.0), ("q3", -1.0, -2.0)] {
            table.insert_score(q, "yes", ScoreResult { logprob_sum: a, token_count: 1 });
            table.insert_score(q, "no", ScoreResult { logprob_sum: b, token_count: 1 });
        }
        let gw = register_mock(table, DefaultPolicy::Error);
        let items = [item("1", 0), item("2", 0), item("3", 0), item("4", 0)];
        let report = eval_multichoice(&gw, &items, EvalRunMeta::new("r", "d"), EvalOptions::default()).unwrap();
        assert_eq!((report.correct, report.evaluated, report.failed), (2, 3, 1));
        assert!((report.accuracy - 2.0 / 3.0).abs() < 1e-15);
        let strict = eval_multichoice(&gw, &items, EvalRunMeta::new("r", "d"), EvalOptions { strict: true }).unwrap();
        assert_eq!(strict.accuracy, 0.5);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let scores = [ScoredChoice::new(0, -2.0, 2).unwrap(), ScoredChoice::new(1, -1.0, 1).unwrap()];
        assert_eq!(argmin_perplexity(&scores), Some(0));
        assert_eq!(argmax_mean_logprob(&scores), Some(0));
    }

    #[test]
    fn meta_spec() {
        let m = EvalRunMeta::new("r", "jem").apply_spec("stage=s3,retrieval=false").unwrap();
        assert_eq!(m.stage_tag.as_deref(), Some("s3"));
        assert!(!m.with_retrieval);
        assert!(EvalRunMeta::default().apply_spec("stage=s9").is_err());
        assert!(EvalRunMeta::default().apply_spec("retrieval=maybe").is_err());
    }

    #[test]
    fn invalid_items_rejected() {
        let gw = register_mock(MockTable::new(), DefaultPolicy::Echo);
        let mut bad = item("1", 0);
        bad.choices = vec!["x".into(), "x".into()];
        assert!(matches!(
            eval_multichoice(&gw, &[bad], EvalRunMeta::default(), EvalOptions::default()),
            Err(EvalError::InvalidItem { .. })
        ));
    }
}
