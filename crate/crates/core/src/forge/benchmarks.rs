use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ForgeError, MCQItem, OptionLabel};
use crate::evaluator::EvalChoiceItem;

/// The nine easily confused charges, in four groups: forcible seizure /
/// robbery, theft / criminal conversion, arson / arson by negligence, and
/// offering bribes / accepting bribes / embezzlement.
pub const CONFUSABLE_CHARGES: [(&str, &str); 9] = [
    ("抢夺罪", "Forcible seizure"),
    ("抢劫罪", "Robbery"),
    ("盗窃罪", "Theft"),
    ("侵占罪", "Criminal conversion"),
    ("放火罪", "Arson"),
    ("失火罪", "Arson by negligence"),
    ("行贿罪", "Offering bribes"),
    ("受贿罪", "Acceptance of bribes"),
    ("贪污罪", "Embezzlement"),
];

pub fn confusable_charge_names() -> Vec<String> {
    CONFUSABLE_CHARGES.iter().map(|(zh, _)| zh.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JemConfig {
    /// `{stem}` and `{option}` are substituted.
    pub template: String,
    pub affirmative: String,
    pub negative: String,
}

impl Default for JemConfig {
    fn default() -> Self {
        Self { template: "问题：{stem}\n陈述：{option}\n该陈述是否正确？答：".into(), affirmative: "正确".into(), negative: "错误".into() }
    }
}

impl JemConfig {
    pub fn english() -> Self {
        Self {
            template: "Question: {stem}\nStatement: {option}\nIs the statement correct? Answer:".into(),
            affirmative: "Correct".into(),
            negative: "Incorrect".into(),
        }
    }
}

/// Four true/false items from one MCQ, one per option, in label order.
/// Choice 0 is the affirmative continuation; gold is 0 iff the option is correct.
pub fn build_jem_items(item: &MCQItem, config: &JemConfig) -> Result<Vec<EvalChoiceItem>, ForgeError> {
    item.validate()?;
    Ok(OptionLabel::ALL
        .iter()
        .map(|&label| EvalChoiceItem {
            id: format!("{}-{label}", item.id),
            prompt: config.template.replace("{stem}", item.stem.trim()).replace("{option}", item.option(label).trim()),
            choices: vec![config.affirmative.clone(), config.negative.clone()],
            gold_index: if item.correct.contains(&label) { 0 } else { 1 },
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChargeDocument {
    pub id: String,
    pub fact: String,
    pub charges: BTreeSet<String>,
}

/// Samples `n_per_charge` single-charge documents for each charge. Items
/// come out grouped by charge in list order; within a charge they keep corpus
/// order. Repeated document ids keep their first occurrence.
pub fn build_charge_benchmark(
    documents: &[ChargeDocument],
    charge_list: &[String],
    n_per_charge: usize,
    seed: u64,
) -> Result<Vec<EvalChoiceItem>, ForgeError> {
    let distinct: BTreeSet<&str> = charge_list.iter().map(String::as_str).collect();
    if charge_list.len() != 9 || distinct.len() != 9 || distinct.iter().any(|c| c.trim().is_empty()) {
        return Err(ForgeError::BadChargeList);
    }
    let mut seen = HashSet::new();
    let mut pools: BTreeMap<&str, Vec<&ChargeDocument>> = BTreeMap::new();
    for doc in documents {
        if doc.charges.len() != 1 || !seen.insert(doc.id.as_str()) {
            continue;
        }
        let charge = doc.charges.first().unwrap();
        if distinct.contains(charge.as_str()) {
            pools.entry(charge.as_str()).or_default().push(doc);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_per_charge * 9);
    for (gold_index, charge) in charge_list.iter().enumerate() {
        let pool = pools.get(charge.as_str()).map(Vec::as_slice).unwrap_or(&[]);
        if pool.len() < n_per_charge {
            return Err(ForgeError::InsufficientDocs { charge: charge.clone(), needed: n_per_charge, available: pool.len() });
        }
        let mut picked = index::sample(&mut rng, pool.len(), n_per_charge).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| EvalChoiceItem {
            id: pool[i].id.clone(),
            prompt: pool[i].fact.clone(),
            choices: charge_list.to_vec(),
            gold_index,
        }));
    }
    Ok(out)
}

/// Markdown table of items per charge, with English names for the known charges.
pub fn render_charge_summary(items: &[EvalChoiceItem]) -> String {
    let mut counts: Vec<(String, usize)> = Vec::new();
    if let Some(first) = items.first() {
        counts = first.choices.iter().map(|c| (c.clone(), 0)).collect();
    }
    for item in items {
        if let Some(c) = counts.get_mut(item.gold_index) {
            c.1 += 1;
        }
    }
    let mut out = String::from("| Charge | English | Items |\n|---|---|---:|\n");
    for (name, n) in counts {
        let en = CONFUSABLE_CHARGES.iter().find(|(zh, _)| *zh == name).map(|(_, en)| *en).unwrap_or("-");
        out.push_str(&format!("| {name} | {en} | {n} |\n"));
    }
    out
}
