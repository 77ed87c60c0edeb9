//! Citation extraction from generated text and Valid / H1 / H2 classification
//! against an [`ArticleIndex`].
//!
//! * `H1`: the cited article does not exist and the attributed content matches
//!   nothing in the index (fabricated).
//! * `H2`: the cited key does not exist but the attributed content is real,
//!   i.e. it belongs to a different title or article number.

use std::collections::HashMap;
use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ArticleIndex, CitationKey, TitleAliases};
use crate::numerals::parse_arabic_or_chinese;
use crate::tokenize::is_cjk;

pub const DEFAULT_SIM_THRESHOLD: f64 = 0.35;
pub const MAX_QUOTED_CHARS: usize = 200;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum AuditError {
    #[error("article index is empty")]
    EmptyCorpus,
    #[error("similarity threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("text to audit is empty")]
    EmptyText,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Citation {
    pub law_title: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub article_no: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paragraph_no: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quoted_content: Option<String>,
    /// Character (not byte) offsets `[start, end)` of the citation marker.
    pub span: (usize, usize),
}

impl Citation {
    pub fn key(&self) -> CitationKey {
        CitationKey {
            law_title: self.law_title.clone(),
            article_no: self.article_no,
            paragraph_no: self.paragraph_no,
        }
    }

    /// Renders in the canonical Chinese form, `《T》第N条[第M款][规定：content。]`.
    pub fn render_zh(&self) -> String {
        let mut s = self.key().render_zh();
        if let Some(c) = &self.quoted_content {
            s.push_str("规定：");
            s.push_str(c);
            s.push('。');
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Valid,
    H1,
    H2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditFinding {
    pub citation: Citation,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_key: Option<CitationKey>,
    pub similarity: f64,
    /// Set when a cited key exists but the attributed content diverges from it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub findings: Vec<AuditFinding>,
    pub has_h1: bool,
    pub has_h2: bool,
}

impl AuditReport {
    pub fn from_findings(findings: Vec<AuditFinding>) -> Self {
        let has_h1 = findings.iter().any(|f| f.verdict == Verdict::H1);
        let has_h2 = findings.iter().any(|f| f.verdict == Verdict::H2);
        Self { findings, has_h1, has_h2 }
    }

    /// True when at least one legal-article reference was found.
    pub fn mentions_articles(&self) -> bool {
        !self.findings.is_empty()
    }

    pub fn count(&self, verdict: Verdict) -> usize {
        self.findings.iter().filter(|f| f.verdict == verdict).count()
    }
}

// ---------------------------------------------------------------------------
// Content similarity

/// Feature counts for content similarity: character bigrams over the CJK
/// characters of the text, plus lowercased Latin words minus a short stopword
/// list. Punctuation and whitespace are ignored.
#[derive(Debug, Clone, Default)]
pub struct BigramVector {
    counts: HashMap<String, u32>,
    norm: f64,
}

const LATIN_STOPWORDS: &[&str] = &[
    "a", "an", "the", "and", "or", "of", "to", "in", "on", "for", "by", "with", "is", "are", "be",
    "shall", "may", "not", "no", "but", "it", "its", "this", "that", "as", "at", "from",
];

impl BigramVector {
    pub fn new(text: &str) -> Self {
        let mut counts: HashMap<String, u32> = HashMap::new();
        let cjk: Vec<char> = text.chars().filter(|&c| is_cjk(c)).collect();
        if cjk.len() == 1 {
            counts.insert(cjk[0].to_string(), 1);
        }
        for w in cjk.windows(2) {
            *counts.entry(w.iter().collect()).or_default() += 1;
        }
        for word in text.split(|c: char| !c.is_alphanumeric() || is_cjk(c)) {
            if word.is_empty() {
                continue;
            }
            let word = word.to_lowercase();
            if !LATIN_STOPWORDS.contains(&word.as_str()) {
                *counts.entry(word).or_default() += 1;
            }
        }
        let norm = counts.values().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        Self { counts, norm }
    }

    pub fn cosine(&self, other: &BigramVector) -> f64 {
        if self.norm == 0.0 || other.norm == 0.0 {
            return 0.0;
        }
        let (small, large) = if self.counts.len() <= other.counts.len() { (self, other) } else { (other, self) };
        let dot: f64 = small
            .counts
            .iter()
            .filter_map(|(k, &v)| large.counts.get(k).map(|&w| v as f64 * w as f64))
            .sum();
        (dot / (self.norm * other.norm)).clamp(0.0, 1.0)
    }
}

pub fn bigram_cosine(a: &str, b: &str) -> f64 {
    BigramVector::new(a).cosine(&BigramVector::new(b))
}

/// Precomputed bigram vectors of every article, in key order.
#[derive(Debug, Clone)]
pub struct ContentIndex {
    entries: Vec<(CitationKey, BigramVector)>,
}

impl ContentIndex {
    pub fn build(index: &ArticleIndex) -> Self {
        Self { entries: index.articles().map(|a| (a.key(), BigramVector::new(&a.text))).collect() }
    }

    /// Best match satisfying `filter`; ties go to the smallest key.
    fn best_match<F>(&self, content: &BigramVector, filter: F) -> Option<(&CitationKey, f64)>
    where
        F: Fn(&CitationKey) -> bool,
    {
        let mut best: Option<(&CitationKey, f64)> = None;
        for (key, vec) in &self.entries {
            if !filter(key) {
                continue;
            }
            let sim = content.cosine(vec);
            if best.is_none_or(|(_, s)| sim > s) {
                best = Some((key, sim));
            }
        }
        best
    }

    fn similarity_to(&self, key: &CitationKey, content: &BigramVector) -> Option<f64> {
        self.entries
            .iter()
            .filter(|(k, _)| k == key || (key.paragraph_no.is_none() && k.same_article(key)))
            .map(|(_, v)| content.cosine(v))
            .max_by(|a, b| a.total_cmp(b))
    }
}

// ---------------------------------------------------------------------------
// Extraction

const LAW_WORDS: &str = r"(?:Code|Law|Act|Regulations?|Rules|Provisions|Constitution|Interpretations?|Measures|Ordinance)";
const CONNECTORS: &str = r"(?:of|and|for|on|the|in|to|with)";

static ZH_CITATION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?P<prefix>根据|依据|按照|依照)?\s*《(?P<title>[^《》\n]{1,40})》\s*(?:第(?P<art>[零〇一二两三四五六七八九十百千万0-9０-９]+)条(?:第(?P<para>[零〇一二两三四五六七八九十0-9０-９]+)款)?)?",
    )
    .unwrap()
});

static EN_ARTICLE: LazyLock<Regex> = LazyLock::new(|| {
    let title = format!(r"[A-Z][A-Za-z'\-]*(?:\s+(?:{CONNECTORS}\s+)*[A-Z][A-Za-z'\-]*)*");
    Regex::new(&format!(
        r"(?:\b[Aa]ccording\s+(?:to\s+)?)?\bArticle\s+(?P<art>\d{{1,3}}(?:,\d{{3}})+|\d+)(?:,?\s+paragraph\s+(?P<para>\d+))?\s+of\s+(?:the\s+)?(?P<title>{title})"
    ))
    .unwrap()
});

static EN_TITLE_ONLY: LazyLock<Regex> = LazyLock::new(|| {
    let title = format!(r"(?:[A-Z][A-Za-z'\-]*\s+(?:{CONNECTORS}\s+)*)*{LAW_WORDS}");
    Regex::new(&format!(r"\b[Aa]ccording\s+(?:to\s+)?(?:the\s+)?(?P<title>{title})\s*[,，]")).unwrap()
});

static LEADING_FILLER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"^[\s,，:：]*(?:的)?(?:明确规定|规定|指出|载明|明确|(?:which\s+)?(?:states|provides|stipulates|says)(?:\s+that)?)?[\s,，:：“"「『]*"#,
    )
    .unwrap()
});

fn is_terminator(c: char, next: Option<char>) -> bool {
    match c {
        '。' | '！' | '？' | '；' | '!' | '?' | ';' | '\n' | '…' => true,
        '.' => next.is_none_or(|n| n.is_whitespace() || n == '.'),
        _ => false,
    }
}

/// The clause following a citation marker, up to the next sentence terminator.
fn quoted_after(rest: &str) -> Option<String> {
    let skip = LEADING_FILLER.find(rest).map_or(0, |m| m.end());
    let body = &rest[skip..];
    let chars: Vec<char> = body.chars().collect();
    let mut end = chars.len();
    for (i, &c) in chars.iter().enumerate() {
        if is_terminator(c, chars.get(i + 1).copied()) {
            end = i;
            break;
        }
    }
    let clause: String = chars[..end].iter().take(MAX_QUOTED_CHARS).collect();
    let clause = clause
        .trim()
        .trim_end_matches(['”', '"', '」', '』', ',', '，', '.', '…'])
        .trim();
    (!clause.is_empty()).then(|| clause.to_string())
}

struct Candidate {
    start: usize,
    end: usize,
    citation: Citation,
}

/// Extracts citations left to right with non-overlapping spans. Titles are
/// canonicalized with `aliases`.
pub fn extract_citations(text: &str, aliases: &TitleAliases) -> Vec<Citation> {
    let mut candidates: Vec<Candidate> = Vec::new();

    let mut push = |m_start: usize, m_end: usize, title: &str, art: Option<u32>, para: Option<u32>| {
        let Ok(law_title) = crate::corpus::canonicalize_title(title, aliases) else { return };
        candidates.push(Candidate {
            start: m_start,
            end: m_end,
            citation: Citation {
                law_title,
                article_no: art,
                paragraph_no: para,
                quoted_content: None,
                span: (0, 0),
            },
        });
    };

    for caps in ZH_CITATION.captures_iter(text) {
        let m = caps.get(0).unwrap();
        let title = &caps["title"];
        match caps.name("art") {
            Some(art) => {
                let Ok(art) = parse_arabic_or_chinese(art.as_str()) else { continue };
                let para = caps.name("para").and_then(|p| parse_arabic_or_chinese(p.as_str()).ok());
                push(m.start(), m.end(), title, Some(art), para);
            }
            None if caps.name("prefix").is_some() => push(m.start(), m.end(), title, None, None),
            None => {}
        }
    }
    for caps in EN_ARTICLE.captures_iter(text) {
        let m = caps.get(0).unwrap();
        let Ok(art) = parse_arabic_or_chinese(&caps["art"]) else { continue };
        let para = caps.name("para").and_then(|p| p.as_str().parse().ok());
        push(m.start(), m.end(), &caps["title"], Some(art), para);
    }
    for caps in EN_TITLE_ONLY.captures_iter(text) {
        let m = caps.get(0).unwrap();
        // The trailing comma belongs to the clause, not the marker.
        let end = caps.name("title").unwrap().end();
        push(m.start(), end, &caps["title"], None, None);
    }

    candidates.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
    let mut kept: Vec<Candidate> = Vec::new();
    for c in candidates {
        if kept.last().is_some_and(|k| c.start < k.end) {
            continue;
        }
        kept.push(c);
    }
    // attributed content stops where the next citation starts
    let bounds: Vec<usize> = kept.iter().skip(1).map(|c| c.start).chain([text.len()]).collect();
    kept.into_iter()
        .zip(bounds)
        .map(|(c, next)| {
            let mut citation = c.citation;
            citation.quoted_content = quoted_after(&text[c.end..next]);
            citation.span = (text[..c.start].chars().count(), text[..c.end].chars().count());
            citation
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Classification

fn check_threshold(t: f64) -> Result<(), AuditError> {
    if t > 0.0 && t <= 1.0 {
        Ok(())
    } else {
        Err(AuditError::BadThreshold(t))
    }
}

fn classify_with(
    citation: &Citation,
    index: &ArticleIndex,
    content_index: &ContentIndex,
    threshold: f64,
) -> Result<AuditFinding, AuditError> {
    if index.is_empty() {
        return Err(AuditError::EmptyCorpus);
    }
    check_threshold(threshold)?;
    let key = citation.key();
    let content = citation.quoted_content.as_deref().map(BigramVector::new);
    let finding = |verdict, matched_key: Option<&CitationKey>, similarity: f64, warning| AuditFinding {
        citation: citation.clone(),
        verdict,
        matched_key: matched_key.cloned(),
        similarity,
        warning,
    };

    if key.is_title_only() {
        let Some(content) = content else {
            return Ok(finding(Verdict::H1, None, 0.0, None));
        };
        let same = content_index.best_match(&content, |k| k.law_title == key.law_title);
        if let Some((k, s)) = same.filter(|(_, s)| *s >= threshold) {
            return Ok(finding(Verdict::Valid, Some(k), s, None));
        }
        let any = content_index.best_match(&content, |_| true);
        return Ok(match any {
            Some((k, s)) if s >= threshold => finding(Verdict::H2, Some(k), s, None),
            Some((_, s)) => finding(Verdict::H1, None, s, None),
            None => finding(Verdict::H1, None, 0.0, None),
        });
    }

    if let Some(article) = index.lookup(&key) {
        let (similarity, warning) = match &content {
            Some(c) => {
                let s = content_index.similarity_to(&key, c).unwrap_or(0.0);
                let w = (s < threshold).then(|| format!("attributed content diverges from {} (similarity {s:.3})", article.key()));
                (s, w)
            }
            None => (1.0, None),
        };
        return Ok(finding(Verdict::Valid, Some(&article.key()), similarity, warning));
    }

    let Some(content) = content else {
        return Ok(finding(Verdict::H1, None, 0.0, None));
    };
    Ok(match content_index.best_match(&content, |_| true) {
        Some((k, s)) if s >= threshold => finding(Verdict::H2, Some(k), s, None),
        Some((_, s)) => finding(Verdict::H1, None, s, None),
        None => finding(Verdict::H1, None, 0.0, None),
    })
}

/// Classifies one citation. Builds content vectors on the fly; use
/// [`Auditor`] when auditing many texts against the same index.
pub fn classify_citation(citation: &Citation, index: &ArticleIndex, sim_threshold: f64) -> Result<AuditFinding, AuditError> {
    classify_with(citation, index, &ContentIndex::build(index), sim_threshold)
}

pub fn audit_response(text: &str, index: &ArticleIndex, sim_threshold: f64) -> Result<AuditReport, AuditError> {
    Auditor::new(Arc::new(index.clone()), sim_threshold)?.audit(text)
}

/// Reusable auditor over one index.
#[derive(Debug, Clone)]
pub struct Auditor {
    index: Arc<ArticleIndex>,
    content: Arc<ContentIndex>,
    threshold: f64,
}

impl Auditor {
    pub fn new(index: Arc<ArticleIndex>, threshold: f64) -> Result<Self, AuditError> {
        if index.is_empty() {
            return Err(AuditError::EmptyCorpus);
        }
        check_threshold(threshold)?;
        let content = Arc::new(ContentIndex::build(&index));
        Ok(Self { index, content, threshold })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn with_threshold(&self, threshold: f64) -> Result<Self, AuditError> {
        check_threshold(threshold)?;
        Ok(Self { threshold, ..self.clone() })
    }

    pub fn index(&self) -> &ArticleIndex {
        &self.index
    }

    pub fn extract(&self, text: &str) -> Vec<Citation> {
        extract_citations(text, self.index.aliases())
    }

    pub fn classify(&self, citation: &Citation) -> Result<AuditFinding, AuditError> {
        classify_with(citation, &self.index, &self.content, self.threshold)
    }

    pub fn audit(&self, text: &str) -> Result<AuditReport, AuditError> {
        if text.trim().is_empty() {
            return Err(AuditError::EmptyText);
        }
        let findings = self
            .extract(text)
            .iter()
            .map(|c| self.classify(c))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AuditReport::from_findings(findings))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Article;

    fn civil_code_en() -> ArticleIndex {
        let arts = [
            (1046, "A man and a woman shall enter into matrimony freely and voluntarily. Neither party may compel the other to conclude a marriage against the latter's will."),
            (1047, "A man shall attain the age of twenty-two, and a woman the age of twenty to enter into matrimony."),
            (1048, "Persons who are lineal relatives by blood, or collateral relatives by blood within three generations are prohibited from marrying each other."),
        ];
        ArticleIndex::from_articles(
            arts.iter()
                .map(|(n, t)| Article { law_title: "民法典".into(), article_no: *n, paragraph_no: None, text: t.to_string(), source_id: String::new() })
                .collect(),
            [("Civil Code", "民法典"), ("the Civil Code", "民法典")].into_iter().collect(),
        )
        .unwrap()
    }

    #[test]
    fn extract_chinese() {
        let cs = extract_citations("根据《民法典》第一千零八十条规定，完成离婚登记，即解除婚姻关系。", &TitleAliases::new());
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].key(), CitationKey::article("民法典", 1080));
        assert_eq!(cs[0].quoted_content.as_deref(), Some("完成离婚登记，即解除婚姻关系"));
        assert_eq!(cs[0].span, (0, 14));
    }

    #[test]
    fn extract_english_h2() {
        let text = "According Article 32 of the Marriage and Family Administration Regulations, a man should fully attained the age of twenty-two years old to get married, and a woman the age of twenty years old...";
        let cs = extract_citations(text, &TitleAliases::new());
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].law_title, "Marriage and Family Administration Regulations");
        assert_eq!(cs[0].article_no, Some(32));
        assert!(cs[0].quoted_content.as_deref().unwrap().starts_with("a man should fully attained"));
    }

    #[test]
    fn extract_none() {
        assert!(extract_citations("今天天气很好。The weather is nice.", &TitleAliases::new()).is_empty());
        // a bare title mention is not a citation
        assert!(extract_citations("《民法典》是一部重要的法律。", &TitleAliases::new()).is_empty());
    }

    #[test]
    fn quoted_content_stops_at_next_citation() {
        let cs = extract_citations("依据《民法典》第九千条，以及《刑法》第二百六十四条：盗窃公私财物。", &TitleAliases::new());
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].quoted_content.as_deref(), Some("以及"));
        assert_eq!(cs[1].quoted_content.as_deref(), Some("盗窃公私财物"));
    }

    #[test]
    fn extract_paragraph_and_separator() {
        let cs = extract_citations("Article 1,047 of the Civil Code and 《婚姻法》第二十一条第一款规定：“有下列情形之一的，为无效婚姻”。", &TitleAliases::new());
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].article_no, Some(1047));
        assert_eq!(cs[0].law_title, "Civil Code");
        assert_eq!((cs[1].article_no, cs[1].paragraph_no), (Some(21), Some(1)));
        assert_eq!(cs[1].quoted_content.as_deref(), Some("有下列情形之一的，为无效婚姻"));
    }

    #[test]
    fn classify_worked_examples() {
        let idx = civil_code_en();
        let valid = audit_response("According Article 1047 of the Civil Code, in China, a man shall attain the age of twenty-two, and a woman the age of twenty to enter into matrimony.", &idx, DEFAULT_SIM_THRESHOLD).unwrap();
        assert_eq!(valid.findings[0].verdict, Verdict::Valid);

        let h2 = audit_response("According Article 32 of the Marriage and Family Administration Regulations, a man should fully attained the age of twenty-two years old to get married, and a woman the age of twenty years old...", &idx, DEFAULT_SIM_THRESHOLD).unwrap();
        assert_eq!(h2.findings[0].verdict, Verdict::H2);
        assert_eq!(h2.findings[0].matched_key, Some(CitationKey::article("民法典", 1047)));
        assert!(h2.has_h2 && !h2.has_h1);

        let h1 = audit_response("According the Civil Code, an adult may marriage, but a minor may not marriage...", &idx, DEFAULT_SIM_THRESHOLD).unwrap();
        assert_eq!(h1.findings[0].citation.article_no, None);
        assert_eq!(h1.findings[0].verdict, Verdict::H1);
    }

    #[test]
    fn thresholds() {
        let idx = civil_code_en();
        let c = Citation { law_title: "民法典".into(), article_no: Some(1), paragraph_no: None, quoted_content: None, span: (0, 1) };
        for bad in [0.0, -0.1, 1.5] {
            assert_eq!(classify_citation(&c, &idx, bad).unwrap_err(), AuditError::BadThreshold(bad));
        }
        assert_eq!(classify_citation(&c, &idx, 0.35).unwrap().verdict, Verdict::H1);
    }

    #[test]
    fn cosine_basics() {
        assert!((bigram_cosine("结婚年龄", "结婚年龄") - 1.0).abs() < 1e-12);
        assert_eq!(bigram_cosine("ab", "cd"), 0.0);
        assert_eq!(bigram_cosine("结婚", "离婚"), 0.0);
        assert_eq!(bigram_cosine("the age", "the law"), 0.0);
        assert_eq!(bigram_cosine("", "abc"), 0.0);
    }
}
