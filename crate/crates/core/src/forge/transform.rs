use std::collections::HashMap;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use super::{ForgeError, MCQItem, OptionLabel, TransformMethod, TrueFalseQuery};
use crate::prompts::{DISTILL_HEADER, ICL_HEADER, ICL_INSTRUCTION};

/// One stem/option rewrite. Placeholders `{name}` in `template` are filled
/// from named groups of both regexes; without an option regex the whole
/// option (minus a trailing full stop) is available as `{option}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformPattern {
    pub name: String,
    pub stem: String,
    #[serde(default)]
    pub option: Option<String>,
    pub template: String,
    /// Lowercase the first letter of every option capture.
    #[serde(default)]
    pub lowercase_option: bool,
}

#[derive(Debug, Clone)]
struct Compiled {
    spec: TransformPattern,
    stem: Regex,
    option: Regex,
}

#[derive(Debug, Clone)]
pub struct PatternTable {
    patterns: Vec<Compiled>,
}

const DEFAULT_OPTION: &str = r"^(?s)(?P<option>.+?)[.。]?$";

fn default_patterns() -> Vec<TransformPattern> {
    let p = |name: &str, stem: &str, option: Option<&str>, template: &str, lowercase_option: bool| TransformPattern {
        name: name.into(),
        stem: stem.into(),
        option: option.map(String::from),
        template: template.into(),
        lowercase_option,
    };
    const EN_TAKEN: &str =
        r"(?i)^(?P<ctx>.+?),?\s*which of the following (?:options |measures |actions )?(?:should|can|may) be taken\s*\?$";
    vec![
        p("en_up_to", EN_TAKEN, Some(r"^It is up to (?P<agent>.+?) to (?P<action>.+?)\.?$"), "{ctx}, can {agent} {action}?", false),
        p("en_taken", EN_TAKEN, None, "{ctx}, is it appropriate to {option}?", true),
        p(
            "en_incorrect",
            r"(?i)^(?P<ctx>.+?),?\s*which of the following (?:statements |options |views |claims )?(?:is|are) (?:incorrect|false|wrong|not correct)\s*\?$",
            None,
            "{ctx}, is it incorrect that {option}?",
            true,
        ),
        p(
            "en_correct",
            r"(?i)^(?P<ctx>.+?),?\s*which of the following (?:statements |options |views |claims )?(?:is|are) (?:correct|true|right)\s*\?$",
            None,
            "{ctx}, is it correct that {option}?",
            true,
        ),
        p(
            "zh_incorrect",
            r"^(?P<ctx>.+?)[，,]\s*(?:下列|以下)(?:哪些|哪一|哪个|哪项)?(?:选项|说法|表述|观点|做法|判断|行为)?(?:中)?(?:是)?(?:错误|不正确|不合法|不成立)的(?:是|有)?[：:？?]?$",
            None,
            "{ctx}，{option}，这一说法是否错误？",
            false,
        ),
        p(
            "zh_correct",
            r"^(?P<ctx>.+?)[，,]\s*(?:下列|以下)(?:哪些|哪一|哪个|哪项)?(?:选项|说法|表述|观点|做法|判断|行为)?(?:中)?(?:是)?(?:正确|合法|成立)的(?:是|有)?[：:？?]?$",
            None,
            "{ctx}，{option}，这一说法是否正确？",
            false,
        ),
    ]
}

impl Default for PatternTable {
    fn default() -> Self {
        Self::new(default_patterns()).expect("built-in patterns compile")
    }
}

impl PatternTable {
    pub fn new(patterns: Vec<TransformPattern>) -> Result<Self, ForgeError> {
        let compile = |name: &str, re: &str| {
            Regex::new(re).map_err(|e| ForgeError::BadPattern { name: name.to_string(), reason: e.to_string() })
        };
        let patterns = patterns
            .into_iter()
            .map(|spec| {
                let stem = compile(&spec.name, &spec.stem)?;
                let option = compile(&spec.name, spec.option.as_deref().unwrap_or(DEFAULT_OPTION))?;
                Ok(Compiled { spec, stem, option })
            })
            .collect::<Result<_, ForgeError>>()?;
        Ok(Self { patterns })
    }

    /// A JSON array of [`TransformPattern`].
    pub fn from_json(s: &str) -> Result<Self, ForgeError> {
        let specs: Vec<TransformPattern> =
            serde_json::from_str(s).map_err(|e| ForgeError::BadPattern { name: "<file>".into(), reason: e.to_string() })?;
        Self::new(specs)
    }

    pub fn specs(&self) -> impl Iterator<Item = &TransformPattern> {
        self.patterns.iter().map(|c| &c.spec)
    }

    /// Rewrites a stem/option pair with the first matching pattern.
    pub fn apply(&self, stem: &str, option: &str) -> Option<String> {
        let (stem, option) = (stem.trim(), option.trim());
        for p in &self.patterns {
            let (Some(sc), Some(oc)) = (p.stem.captures(stem), p.option.captures(option)) else {
                continue;
            };
            let mut vars: HashMap<&str, String> = HashMap::new();
            collect(&p.stem, &sc, false, &mut vars);
            collect(&p.option, &oc, p.spec.lowercase_option, &mut vars);
            return Some(fill(&p.spec.template, &vars));
        }
        None
    }
}

fn collect<'r>(re: &'r Regex, caps: &Captures, lowercase: bool, vars: &mut HashMap<&'r str, String>) {
    for name in re.capture_names().flatten() {
        if let Some(m) = caps.name(name) {
            let mut v = m.as_str().trim().to_string();
            if lowercase {
                v = lowercase_first(&v);
            }
            vars.insert(name, v);
        }
    }
}

fn lowercase_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        // Leave acronyms such as "PRC" alone.
        Some(c) if c.is_ascii_uppercase() && !chars.clone().next().is_some_and(|n| n.is_ascii_uppercase()) => {
            c.to_ascii_lowercase().to_string() + chars.as_str()
        }
        _ => s.to_string(),
    }
}

fn fill(template: &str, vars: &HashMap<&str, String>) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejected(pub String);

/// Regex transformation of one question/option pair into a true/false query.
pub fn transform_mcq_regex(item: &MCQItem, label: OptionLabel, table: &PatternTable) -> Result<TrueFalseQuery, Rejected> {
    item.validate().map_err(|e| Rejected(e.to_string()))?;
    let query_text = table.apply(&item.stem, item.option(label)).ok_or_else(|| Rejected("no pattern".into()))?;
    Ok(TrueFalseQuery {
        source_id: item.id.clone(),
        option_label: label,
        query_text,
        gold: item.correct.contains(&label),
        method: TransformMethod::Regex,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BannedWords(pub Vec<String>);

impl Default for BannedWords {
    fn default() -> Self {
        Self(
            ["option", "from following", "from the following", "as below", "选项", "下列", "以下", "如下"]
                .into_iter()
                .map(String::from)
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum FilterDecision {
    Keep,
    Drop(String),
}

/// Drops queries containing a banned phrase (plain substring, Latin case-folded).
pub fn filter_transferred_query(query_text: &str, banned: &BannedWords) -> FilterDecision {
    let folded = query_text.to_lowercase();
    match banned.0.iter().find(|w| !w.is_empty() && folded.contains(&w.to_lowercase())) {
        Some(w) => FilterDecision::Drop(format!("banned: {w}")),
        None => FilterDecision::Keep,
    }
}

/// Banned-phrase filter plus a length window in characters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct QualityGate {
    pub banned: BannedWords,
    pub min_chars: usize,
    pub max_chars: usize,
}

impl Default for QualityGate {
    fn default() -> Self {
        Self { banned: BannedWords::default(), min_chars: 10, max_chars: 512 }
    }
}

impl QualityGate {
    pub fn check(&self, query_text: &str) -> FilterDecision {
        if let FilterDecision::Drop(r) = filter_transferred_query(query_text, &self.banned) {
            return FilterDecision::Drop(r);
        }
        let n = query_text.trim().chars().count();
        if n < self.min_chars {
            FilterDecision::Drop(format!("too short: {n} < {}", self.min_chars))
        } else if n > self.max_chars {
            FilterDecision::Drop(format!("too long: {n} > {}", self.max_chars))
        } else {
            FilterDecision::Keep
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformStats {
    pub pairs: usize,
    pub transformed: usize,
    pub no_pattern: usize,
    pub dropped: usize,
}

impl PatternTable {
    /// Regex-transforms every option of every item and applies the gate.
    pub fn transform_all(&self, items: &[MCQItem], gate: &QualityGate) -> (Vec<TrueFalseQuery>, TransformStats) {
        let mut stats = TransformStats::default();
        let mut out = Vec::new();
        for item in items {
            for label in OptionLabel::ALL {
                stats.pairs += 1;
                match transform_mcq_regex(item, label, self) {
                    Err(_) => stats.no_pattern += 1,
                    Ok(q) => match gate.check(&q.query_text) {
                        FilterDecision::Keep => {
                            stats.transformed += 1;
                            out.push(q);
                        }
                        FilterDecision::Drop(_) => stats.dropped += 1,
                    },
                }
            }
        }
        (out, stats)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub question: String,
    pub option: String,
    pub output: String,
}

/// In-context transformation prompt with three annotated exemplars. The
/// result ends with `Output:` and no trailing whitespace.
pub fn build_icl_transform_prompt(item: &MCQItem, label: OptionLabel, exemplars: &[Exemplar]) -> Result<String, ForgeError> {
    if exemplars.len() != 3 {
        return Err(ForgeError::BadExemplars(format!("got {}", exemplars.len())));
    }
    if let Some(i) = exemplars
        .iter()
        .position(|e| e.question.trim().is_empty() || e.option.trim().is_empty() || e.output.trim().is_empty())
    {
        return Err(ForgeError::BadExemplars(format!("exemplar {} has an empty field", i + 1)));
    }
    let option = item.option(label).trim();
    if item.stem.trim().is_empty() || option.is_empty() {
        return Err(ForgeError::InvalidItem { id: item.id.clone(), reason: format!("empty question or option {label}") });
    }
    let mut s = format!("{ICL_HEADER}\n\n");
    for (i, e) in exemplars.iter().enumerate() {
        s.push_str(&format!(
            "# Example {}:\n### Question: {}\n### Option: {}\nOutput: {}\n\n",
            i + 1,
            e.question.trim(),
            e.option.trim(),
            e.output.trim()
        ));
    }
    s.push_str(&format!("{ICL_INSTRUCTION}\n### Question: {}\n### Option: {option}\nOutput:", item.stem.trim()));
    Ok(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistillMode {
    /// Teacher sees the question only and gives explanation then answer.
    Q2EA,
    /// Teacher sees question and gold answer and writes the explanation.
    QA2E,
}

/// Teacher prompt for a true/false query. QA2E needs the gold verdict.
pub fn build_distill_prompt(query_text: &str, gold: Option<bool>, mode: DistillMode) -> Result<String, ForgeError> {
    let q = query_text.trim();
    match mode {
        DistillMode::Q2EA => Ok(format!(
            "{DISTILL_HEADER}\n\n### Question: {q}\n\n### Requirements: Please analyze the question step by step first, and state your final answer at the end.\n\nOutput:"
        )),
        DistillMode::QA2E => {
            let gold = gold.ok_or(ForgeError::MissingGold)?;
            let (yn, ci) = if gold { ("Yes", "Correct") } else { ("No", "Incorrect") };
            Ok(format!(
                "{DISTILL_HEADER}\n\n### Question: {q}\n\n### Directions: The answer of given question can be \"{yn}\" or \"{ci}\". Please answer it step by step. If the question is about case analysis, please analyze the reasons behind the party's decision to take such action. If the question is about legal concept, please list the legal basis involved in your answer.\n\nOutput:"
            ))
        }
    }
}
