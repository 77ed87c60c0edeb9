use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ContextArticle, ForgeError, SFTExample, SeedMeta, SftKind};
use crate::corpus::{Article, ArticleIndex, CitationKey};
use crate::prompts::PromptTemplates;
use crate::retriever::{sample_distractors, ArticleScorer, DistractorPolicy, GoldAnnotation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConsultSftOptions {
    /// Include the irrelevant-article disclaimer in the input, as at inference time.
    pub disclaimer: bool,
    pub templates: PromptTemplates,
}

impl Default for ConsultSftOptions {
    fn default() -> Self {
        Self { disclaimer: true, templates: PromptTemplates::default() }
    }
}

fn overlaps(gold: &CitationKey, other: &CitationKey) -> bool {
    gold == other || GoldAnnotation::matches(gold, other)
}

/// Consultation SFT record: gold and distractor articles shuffled by `seed`,
/// with `relevant` set for gold articles only.
pub fn build_consult_sft(
    question: &str,
    gold: &[Article],
    distractors: &[Article],
    response: Option<&str>,
    seed: u64,
    options: &ConsultSftOptions,
) -> Result<SFTExample, ForgeError> {
    for d in distractors {
        let dk = d.key();
        if gold.iter().any(|g| overlaps(&g.key(), &dk)) {
            return Err(ForgeError::OverlapError(dk));
        }
    }
    let mut context: Vec<(&Article, bool)> =
        gold.iter().map(|a| (a, true)).chain(distractors.iter().map(|a| (a, false))).collect();
    context.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let articles: Vec<&Article> = context.iter().map(|(a, _)| *a).collect();
    let input_text = options.templates.consult_prompt(&articles, options.disclaimer, "", question);
    Ok(SFTExample {
        kind: SftKind::Consult,
        input_text,
        target_text: response.map(str::to_string),
        context_articles: context.iter().map(|(a, relevant)| ContextArticle { key: a.key(), relevant: *relevant }).collect(),
        seed_meta: SeedMeta { source: "consult".into(), seed: Some(seed) },
    })
}

/// Input record for consultation forging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsultSeed {
    #[serde(default)]
    pub id: Option<String>,
    pub question: String,
    #[serde(default)]
    pub gold: Vec<CitationKey>,
    #[serde(default)]
    pub response: Option<String>,
}

/// Looks up the gold articles, samples `n_distractors` others and builds the record.
pub fn assemble_consult_sft(
    index: &ArticleIndex,
    scorer: &dyn ArticleScorer,
    record: &ConsultSeed,
    n_distractors: usize,
    seed: u64,
    policy: &DistractorPolicy,
    options: &ConsultSftOptions,
) -> Result<SFTExample, ForgeError> {
    let gold: Vec<Article> = record
        .gold
        .iter()
        .map(|k| index.lookup(k).cloned().ok_or_else(|| ForgeError::UnknownArticle(k.clone())))
        .collect::<Result<_, _>>()?;
    let gold_keys: BTreeSet<CitationKey> = record.gold.iter().cloned().collect();
    let distractor_keys = sample_distractors(index, scorer, &record.question, &gold_keys, n_distractors, seed, policy)?;
    let distractors: Vec<Article> = distractor_keys
        .iter()
        .map(|k| index.lookup(k).cloned().ok_or_else(|| ForgeError::UnknownArticle(k.clone())))
        .collect::<Result<_, _>>()?;
    let mut ex = build_consult_sft(&record.question, &gold, &distractors, record.response.as_deref(), seed, options)?;
    if let Some(id) = &record.id {
        ex.seed_meta.source = format!("consult:{id}");
    }
    Ok(ex)
}
