use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::audit::AuditReport;
use crate::corpus::CitationKey;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankEntry {
    pub system_id: String,
    pub rank: u32,
}

/// One annotator ballot. Draw ballots may leave `entries` empty.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanRankRecord {
    pub question_id: String,
    #[serde(default)]
    pub entries: Vec<RankEntry>,
    #[serde(default)]
    pub draw: bool,
}

impl HumanRankRecord {
    pub fn ranked(question_id: impl Into<String>, entries: &[(&str, u32)]) -> Self {
        Self {
            question_id: question_id.into(),
            entries: entries.iter().map(|(s, r)| RankEntry { system_id: s.to_string(), rank: *r }).collect(),
            draw: false,
        }
    }

    pub fn draw(question_id: impl Into<String>) -> Self {
        Self { question_id: question_id.into(), entries: Vec::new(), draw: true }
    }

    /// Non-draw ballots must rank each system once with ranks 1..=n.
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.draw {
            return Ok(());
        }
        let bad = || EvalError::MalformedBallot(self.question_id.clone());
        if self.entries.is_empty() {
            return Err(bad());
        }
        let ranks: BTreeSet<u32> = self.entries.iter().map(|e| e.rank).collect();
        let systems: BTreeSet<&str> = self.entries.iter().map(|e| e.system_id.as_str()).collect();
        let n = self.entries.len() as u32;
        if ranks.len() != self.entries.len() || systems.len() != self.entries.len() || ranks != (1..=n).collect() {
            return Err(bad());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRanks {
    /// rank -> proportion of all ballots.
    pub ranks: BTreeMap<u32, f64>,
    pub draw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingSummary {
    pub total: usize,
    pub draw: f64,
    pub systems: BTreeMap<String, SystemRanks>,
}

/// Rank proportions per system; draws count in the denominator and share one proportion.
pub fn aggregate_rankings(records: &[HumanRankRecord], systems: &[String]) -> Result<RankingSummary, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoData);
    }
    let expected: BTreeSet<&str> = systems.iter().map(String::as_str).collect();
    let n_ranks = systems.len() as u32;
    let mut counts: BTreeMap<&str, BTreeMap<u32, usize>> =
        expected.iter().map(|s| (*s, (1..=n_ranks).map(|r| (r, 0)).collect())).collect();
    let mut draws = 0usize;
    for rec in records {
        rec.validate()?;
        if rec.draw {
            draws += 1;
            continue;
        }
        let ranked: BTreeSet<&str> = rec.entries.iter().map(|e| e.system_id.as_str()).collect();
        if ranked != expected {
            return Err(EvalError::MalformedBallot(rec.question_id.clone()));
        }
        for e in &rec.entries {
            *counts.get_mut(e.system_id.as_str()).unwrap().get_mut(&e.rank).unwrap() += 1;
        }
    }
    let total = records.len() as f64;
    let draw = draws as f64 / total;
    let systems = counts
        .into_iter()
        .map(|(s, c)| {
            let ranks = c.into_iter().map(|(r, n)| (r, n as f64 / total)).collect();
            (s.to_string(), SystemRanks { ranks, draw })
        })
        .collect();
    Ok(RankingSummary { total: records.len(), draw, systems })
}

/// Markdown table with one row per system: rank proportions then draw, in percent.
pub fn render_rankings(summary: &RankingSummary) -> String {
    let n = summary.systems.values().map(|s| s.ranks.len()).max().unwrap_or(0) as u32;
    let mut out = String::from("| System |");
    for r in 1..=n {
        out.push_str(&format!(" Rank {r} |"));
    }
    out.push_str(" Draw |\n|---|");
    out.push_str(&"---:|".repeat(n as usize + 1));
    out.push('\n');
    for (name, s) in &summary.systems {
        out.push_str(&format!("| {name} |"));
        for r in 1..=n {
            out.push_str(&format!(" {:.2}% |", s.ranks.get(&r).copied().unwrap_or(0.0) * 100.0));
        }
        out.push_str(&format!(" {:.2}% |\n", s.draw * 100.0));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Winner {
    A,
    B,
    #[serde(rename = "draw", alias = "Draw")]
    Draw,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairwiseRecord {
    pub question_id: String,
    pub winner: Winner,
}

/// Percentages in [0, 100].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinRates {
    pub a: f64,
    pub b: f64,
    pub draw: f64,
    pub total: usize,
}

pub fn pairwise_winrate(records: &[PairwiseRecord]) -> Result<WinRates, EvalError> {
    if records.is_empty() {
        return Err(EvalError::NoData);
    }
    let n = records.len() as f64;
    let pct = |w: Winner| records.iter().filter(|r| r.winner == w).count() as f64 / n * 100.0;
    Ok(WinRates { a: pct(Winner::A), b: pct(Winner::B), draw: pct(Winner::Draw), total: records.len() })
}

pub fn render_pairwise(rates: &WinRates, a_label: &str, b_label: &str) -> String {
    format!(
        "| {a_label} wins | {b_label} wins | Draw |\n|---:|---:|---:|\n| {:.2}% | {:.2}% | {:.2}% |\n",
        rates.a, rates.b, rates.draw
    )
}

/// Percentages over the responses that mention at least one article.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HallucinationRates {
    pub h1_pct: f64,
    pub h2_pct: f64,
    pub citing: usize,
    pub total: usize,
}

/// H1 and H2 proportions are reported separately; a response can count in both.
pub fn hallucination_proportions<T>(responses: &[(T, AuditReport)]) -> Result<HallucinationRates, EvalError> {
    let citing: Vec<&AuditReport> = responses.iter().map(|(_, r)| r).filter(|r| r.mentions_articles()).collect();
    if citing.is_empty() {
        return Err(EvalError::NoData);
    }
    let n = citing.len() as f64;
    let h1 = citing.iter().filter(|r| r.has_h1).count() as f64;
    let h2 = citing.iter().filter(|r| r.has_h2).count() as f64;
    Ok(HallucinationRates { h1_pct: h1 / n * 100.0, h2_pct: h2 / n * 100.0, citing: citing.len(), total: responses.len() })
}

/// One row per condition (e.g. r0, r1).
pub fn render_hallucination_table(rows: &[(&str, HallucinationRates)]) -> String {
    let mut out = String::from("| Condition | H1 (%) | H2 (%) | Citing responses |\n|---|---:|---:|---:|\n");
    for (label, r) in rows {
        out.push_str(&format!("| {label} | {:.1} | {:.1} | {}/{} |\n", r.h1_pct, r.h2_pct, r.citing, r.total));
    }
    out
}

/// Human yes/no judgment of whether a response used irrelevant articles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedundancyJudgment {
    pub question_id: String,
    pub system_id: String,
    pub redundant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedundancyRate {
    pub system_id: String,
    pub rate: f64,
    pub judged: usize,
    /// True for the automated distractor-citation estimate.
    pub proxy: bool,
}

pub fn redundancy_rates(judgments: &[RedundancyJudgment]) -> Result<Vec<RedundancyRate>, EvalError> {
    if judgments.is_empty() {
        return Err(EvalError::NoData);
    }
    let mut by_system: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for j in judgments {
        let e = by_system.entry(&j.system_id).or_default();
        e.0 += j.redundant as usize;
        e.1 += 1;
    }
    Ok(by_system
        .into_iter()
        .map(|(s, (red, n))| RedundancyRate { system_id: s.to_string(), rate: red as f64 / n as f64, judged: n, proxy: false })
        .collect())
}

/// Automated estimate: share of responses citing any of the distractor
/// articles that were placed in their context. Agreement with human
/// judgment is not established.
pub fn redundancy_proxy(system_id: &str, responses: &[(AuditReport, BTreeSet<CitationKey>)]) -> Result<RedundancyRate, EvalError> {
    if responses.is_empty() {
        return Err(EvalError::NoData);
    }
    let cites_distractor = |report: &AuditReport, distractors: &BTreeSet<CitationKey>| {
        report.findings.iter().any(|f| {
            let cited = f.citation.key();
            distractors.iter().any(|d| d.same_article(&cited) || f.matched_key.as_ref().is_some_and(|m| m.same_article(d)))
        })
    };
    let hits = responses.iter().filter(|(r, d)| cites_distractor(r, d)).count();
    Ok(RedundancyRate { system_id: system_id.to_string(), rate: hits as f64 / responses.len() as f64, judged: responses.len(), proxy: true })
}
