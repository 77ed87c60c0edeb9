//! Dataset construction: true/false query transformation, distillation
//! prompts, consultation SFT records, JE-M items and the charge benchmark.

mod benchmarks;
mod consult_sft;
mod transform;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::CitationKey;
use crate::retriever::RetrievalError;

pub use benchmarks::{
    build_charge_benchmark, build_jem_items, confusable_charge_names, render_charge_summary, ChargeDocument, JemConfig, CONFUSABLE_CHARGES,
};
pub use consult_sft::{assemble_consult_sft, build_consult_sft, ConsultSeed, ConsultSftOptions};
pub use transform::{
    build_distill_prompt, build_icl_transform_prompt, filter_transferred_query, transform_mcq_regex, BannedWords, DistillMode,
    Exemplar, FilterDecision, PatternTable, QualityGate, Rejected, TransformPattern, TransformStats,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ForgeError {
    #[error("invalid MCQ item {id}: {reason}")]
    InvalidItem { id: String, reason: String },
    #[error("expected exactly 3 complete exemplars: {0}")]
    BadExemplars(String),
    #[error("QA2E prompt needs a gold verdict")]
    MissingGold,
    #[error("gold and distractor articles overlap on {0}")]
    OverlapError(CitationKey),
    #[error("article {0} is not in the index")]
    UnknownArticle(CitationKey),
    #[error("not enough single-charge documents for {charge}: need {needed}, have {available}")]
    InsufficientDocs { charge: String, needed: usize, available: usize },
    #[error("charge list must hold 9 distinct non-empty names")]
    BadChargeList,
    #[error("bad pattern {name}: {reason}")]
    BadPattern { name: String, reason: String },
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OptionLabel {
    A,
    B,
    C,
    D,
}

impl OptionLabel {
    pub const ALL: [OptionLabel; 4] = [OptionLabel::A, OptionLabel::B, OptionLabel::C, OptionLabel::D];
}

impl fmt::Display for OptionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// A four-option judicial examination question; one or more options may be correct.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MCQItem {
    pub id: String,
    pub stem: String,
    pub options: BTreeMap<OptionLabel, String>,
    pub correct: BTreeSet<OptionLabel>,
}

impl MCQItem {
    pub fn validate(&self) -> Result<(), ForgeError> {
        let bad = |reason: &str| Err(ForgeError::InvalidItem { id: self.id.clone(), reason: reason.into() });
        if self.stem.trim().is_empty() {
            return bad("empty stem");
        }
        if self.options.len() != 4 || self.options.values().any(|o| o.trim().is_empty()) {
            return bad("needs four non-empty options A-D");
        }
        if self.correct.is_empty() {
            return bad("no correct option");
        }
        Ok(())
    }

    pub fn option(&self, label: OptionLabel) -> &str {
        self.options.get(&label).map(String::as_str).unwrap_or("")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TransformMethod {
    Regex,
    Icl,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrueFalseQuery {
    pub source_id: String,
    pub option_label: OptionLabel,
    pub query_text: String,
    pub gold: bool,
    pub method: TransformMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SftKind {
    Q2EA,
    QA2E,
    Expert,
    Consult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextArticle {
    pub key: CitationKey,
    pub relevant: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SeedMeta {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SFTExample {
    pub kind: SftKind,
    pub input_text: String,
    #[serde(default)]
    pub target_text: Option<String>,
    #[serde(default)]
    pub context_articles: Vec<ContextArticle>,
    pub seed_meta: SeedMeta,
}

/// Non-SFT records written by the forge, tagged with `kind`. SFT records
/// are written as [`SFTExample`], whose own `kind` (Q2EA, QA2E, EXPERT,
/// CONSULT) serves as the discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ForgeRecord {
    TrueFalseQuery(TrueFalseQuery),
    /// A prompt meant for the chat gateway (ICL transformation or distillation).
    Prompt { id: String, purpose: String, prompt: String },
    EvalItem(crate::evaluator::EvalChoiceItem),
}

pub fn write_jsonl<W: Write, T: Serialize>(mut out: W, records: &[T]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

/// Parses JSONL, skipping blank lines. Errors carry the 1-based line number.
pub fn read_jsonl<R: BufRead, T: DeserializeOwned>(reader: R) -> Result<Vec<T>, String> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| e.to_string())?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| format!("line {}: {e}", i + 1))?);
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) fn mcq(id: &str, stem: &str, options: [&str; 4], correct: &[OptionLabel]) -> MCQItem {
    MCQItem {
        id: id.into(),
        stem: stem.into(),
        options: OptionLabel::ALL.into_iter().zip(options.map(String::from)).collect(),
        correct: correct.iter().copied().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mcq_json_shape() {
        let src = r#"{"id": "1", "stem": "s", "options": {"A": "a", "B": "b", "C": "c", "D": "d"}, "correct": ["A", "C"]}"#;
        let item: MCQItem = serde_json::from_str(src).unwrap();
        item.validate().unwrap();
        assert_eq!(item.option(OptionLabel::C), "c");
        let three = r#"{"id": "2", "stem": "s", "options": {"A": "a", "B": "b", "C": "c"}, "correct": ["A"]}"#;
        assert!(serde_json::from_str::<MCQItem>(three).unwrap().validate().is_err());
    }

    #[test]
    fn records_are_tagged() {
        let rec = ForgeRecord::Prompt { id: "x".into(), purpose: "icl".into(), prompt: "p".into() };
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.starts_with(r#"{"kind":"prompt""#));
        let back: Vec<ForgeRecord> = read_jsonl(format!("{line}\n\n").as_bytes()).unwrap();
        assert_eq!(back, vec![rec]);
    }
}
