//! Statute ingestion into an immutable, canonically keyed article index.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::numerals::{parse_designation, render_chinese_numeral, ParseError};

pub const INDEX_FORMAT: &str = "lexlab-article-index";
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("statute corpus is empty")]
    EmptyCorpus,
    #[error("duplicate article key {0}")]
    DuplicateKey(CitationKey),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unsupported index file: {0}")]
    BadIndexFile(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Identity of a statute article. `article_no = None` denotes a title-only
/// reference ("根据《民法典》…").
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CitationKey {
    #[serde(alias = "title")]
    pub law_title: String,
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "article")]
    pub article_no: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "paragraph")]
    pub paragraph_no: Option<u32>,
}

impl CitationKey {
    pub fn article(title: impl Into<String>, article_no: u32) -> Self {
        Self { law_title: title.into(), article_no: Some(article_no), paragraph_no: None }
    }

    pub fn title_only(title: impl Into<String>) -> Self {
        Self { law_title: title.into(), article_no: None, paragraph_no: None }
    }

    pub fn with_paragraph(mut self, paragraph_no: u32) -> Self {
        self.paragraph_no = Some(paragraph_no);
        self
    }

    pub fn is_title_only(&self) -> bool {
        self.article_no.is_none()
    }

    /// Same title and article number, ignoring paragraph granularity.
    pub fn same_article(&self, other: &CitationKey) -> bool {
        self.law_title == other.law_title && self.article_no == other.article_no
    }

    /// Canonical Chinese rendering, e.g. `《民法典》第一千零四十七条`.
    pub fn render_zh(&self) -> String {
        let mut s = format!("《{}》", self.law_title);
        if let Some(n) = self.article_no {
            s.push('第');
            s.push_str(&render_chinese_numeral(n));
            s.push('条');
            if let Some(p) = self.paragraph_no {
                s.push('第');
                s.push_str(&render_chinese_numeral(p));
                s.push('款');
            }
        }
        s
    }
}

impl fmt::Display for CitationKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render_zh())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Article {
    pub law_title: String,
    pub article_no: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paragraph_no: Option<u32>,
    pub text: String,
    #[serde(default)]
    pub source_id: String,
}

impl Article {
    pub fn key(&self) -> CitationKey {
        CitationKey {
            law_title: self.law_title.clone(),
            article_no: Some(self.article_no),
            paragraph_no: self.paragraph_no,
        }
    }

    /// `《民法典》第一千零四十七条：结婚年龄…`
    pub fn render_reference(&self) -> String {
        format!("{}：{}", self.key().render_zh(), self.text)
    }
}

/// Maps translated or abbreviated titles onto one canonical form.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TitleAliases(BTreeMap<String, String>);

impl TitleAliases {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, alias: impl Into<String>, canonical: impl Into<String>) {
        self.0.insert(normalize_alias(&alias.into()), canonical.into());
    }

    pub fn resolve(&self, stripped: &str) -> Option<&str> {
        self.0.get(&normalize_alias(stripped)).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Reads a JSON object `{"alias": "canonical", ...}`.
    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        let raw: BTreeMap<String, String> = serde_json::from_str(s)?;
        let mut out = Self::new();
        for (k, v) in raw {
            out.insert(k, v);
        }
        Ok(out)
    }
}

impl<A: Into<String>, C: Into<String>> FromIterator<(A, C)> for TitleAliases {
    fn from_iter<T: IntoIterator<Item = (A, C)>>(iter: T) -> Self {
        let mut out = Self::new();
        for (a, c) in iter {
            out.insert(a, c);
        }
        out
    }
}

fn normalize_alias(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

const TITLE_MARKS: &[char] = &['《', '》', '〈', '〉', '"', '“', '”', '‘', '’', '「', '」', '『', '』'];

/// Strips title marks and quotes, trims, then applies the alias table.
pub fn canonicalize_title(raw: &str, aliases: &TitleAliases) -> Result<String, ParseError> {
    let stripped: String = raw.chars().filter(|c| !TITLE_MARKS.contains(c)).collect();
    let stripped = stripped.split_whitespace().collect::<Vec<_>>().join(" ");
    if stripped.is_empty() {
        return Err(ParseError(raw.to_string()));
    }
    if let Some(c) = aliases.resolve(&stripped) {
        return Ok(c.to_string());
    }
    Ok(stripped)
}

/// One line of a statute file before validation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawStatuteRecord {
    pub title: String,
    pub article: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paragraph: Option<String>,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

/// Field names used when reading statute JSONL. The defaults match
/// `{title, article, paragraph?, text, source_id?}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordSchema {
    pub title: String,
    pub article: String,
    pub paragraph: String,
    pub text: String,
    pub source_id: String,
}

impl Default for RecordSchema {
    fn default() -> Self {
        Self {
            title: "title".into(),
            article: "article".into(),
            paragraph: "paragraph".into(),
            text: "text".into(),
            source_id: "source_id".into(),
        }
    }
}

impl RecordSchema {
    fn field_string(v: &serde_json::Value, name: &str) -> Option<String> {
        match v.get(name)? {
            serde_json::Value::String(s) => Some(s.clone()),
            serde_json::Value::Number(n) => Some(n.to_string()),
            _ => None,
        }
    }

    /// Maps one JSON value onto a raw record, or explains why it cannot.
    pub fn extract(&self, v: &serde_json::Value) -> Result<RawStatuteRecord, String> {
        let get = |name: &str| {
            Self::field_string(v, name).ok_or_else(|| format!("missing or non-string field `{name}`"))
        };
        Ok(RawStatuteRecord {
            title: get(&self.title)?,
            article: get(&self.article)?,
            paragraph: Self::field_string(v, &self.paragraph),
            text: get(&self.text)?,
            source_id: Self::field_string(v, &self.source_id),
        })
    }
}

/// Reads statute JSONL. Lines that are not valid records come back as `Err`
/// and are counted as rejections by [`ingest_statutes`].
pub fn read_statute_jsonl<R: BufRead>(
    reader: R,
    schema: &RecordSchema,
) -> Result<Vec<Result<RawStatuteRecord, String>>, std::io::Error> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str::<serde_json::Value>(&line)
            .map_err(|e| format!("line {}: {e}", i + 1))
            .and_then(|v| schema.extract(&v).map_err(|e| format!("line {}: {e}", i + 1)));
        out.push(rec);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildStats {
    pub ingested: usize,
    pub rejected: usize,
    #[serde(default)]
    pub rejections: Vec<String>,
}

/// Immutable article index keyed by `(title, article, paragraph)`.
#[derive(Debug, Clone)]
pub struct ArticleIndex {
    entries: BTreeMap<CitationKey, Article>,
    title_set: BTreeSet<String>,
    aliases: TitleAliases,
    build_stats: BuildStats,
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    format: String,
    version: u32,
    aliases: TitleAliases,
    build_stats: BuildStats,
    articles: Vec<Article>,
}

fn validate_record(rec: &RawStatuteRecord, aliases: &TitleAliases) -> Result<Article, String> {
    let law_title = canonicalize_title(&rec.title, aliases).map_err(|e| e.to_string())?;
    let designation = parse_designation(&rec.article).map_err(|e| e.to_string())?;
    let paragraph_no = match &rec.paragraph {
        None => designation.paragraph_no,
        Some(p) => {
            let p = parse_paragraph(p).map_err(|e| e.to_string())?;
            if designation.paragraph_no.is_some_and(|d| d != p) {
                return Err(format!("conflicting paragraph in {:?} and {p}", rec.article));
            }
            Some(p)
        }
    };
    let text = rec.text.trim();
    if text.is_empty() {
        return Err(format!("empty text for {} {}", law_title, rec.article));
    }
    Ok(Article {
        law_title,
        article_no: designation.article_no,
        paragraph_no,
        text: text.to_string(),
        source_id: rec.source_id.clone().unwrap_or_default(),
    })
}

fn parse_paragraph(s: &str) -> Result<u32, ParseError> {
    let t = s.trim();
    let inner = t.strip_prefix('第').and_then(|t| t.strip_suffix('款'));
    match inner {
        Some(n) => crate::numerals::parse_chinese_numeral(n)
            .or_else(|_| crate::numerals::parse_article_number(n)),
        None => crate::numerals::parse_article_number(t),
    }
}

/// Builds an index from raw records. Malformed records are logged and counted;
/// duplicate keys abort the build.
pub fn ingest_statutes<I>(records: I, aliases: TitleAliases) -> Result<ArticleIndex, CorpusError>
where
    I: IntoIterator<Item = Result<RawStatuteRecord, String>>,
{
    let mut entries = BTreeMap::new();
    let mut stats = BuildStats::default();
    let mut seen_any = false;

    for rec in records {
        seen_any = true;
        let article = match rec.and_then(|r| validate_record(&r, &aliases)) {
            Ok(a) => a,
            Err(reason) => {
                warn!(%reason, "rejected statute record");
                stats.rejected += 1;
                stats.rejections.push(reason);
                continue;
            }
        };
        let key = article.key();
        if entries.contains_key(&key) {
            return Err(CorpusError::DuplicateKey(key));
        }
        entries.insert(key, article);
        stats.ingested += 1;
    }
    if !seen_any || entries.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    stats.rejections.sort();
    Ok(ArticleIndex::assemble(entries, aliases, stats))
}

impl ArticleIndex {
    fn assemble(entries: BTreeMap<CitationKey, Article>, aliases: TitleAliases, build_stats: BuildStats) -> Self {
        let title_set = entries.keys().map(|k| k.law_title.clone()).collect();
        Self { entries, title_set, aliases, build_stats }
    }

    /// Builds directly from validated articles.
    pub fn from_articles(articles: Vec<Article>, aliases: TitleAliases) -> Result<Self, CorpusError> {
        let mut entries = BTreeMap::new();
        for a in articles {
            if a.article_no == 0 || a.text.trim().is_empty() || a.law_title.is_empty() {
                return Err(CorpusError::BadIndexFile(format!("invalid article {}", a.key())));
            }
            let key = a.key();
            if entries.insert(key.clone(), a).is_some() {
                return Err(CorpusError::DuplicateKey(key));
            }
        }
        if entries.is_empty() {
            return Err(CorpusError::EmptyCorpus);
        }
        let stats = BuildStats { ingested: entries.len(), ..Default::default() };
        Ok(Self::assemble(entries, aliases, stats))
    }

    /// Exact-key lookup. A key without a paragraph also matches a
    /// paragraph-granular index, returning the lowest paragraph of that article.
    /// Title-only keys never match.
    pub fn lookup(&self, key: &CitationKey) -> Option<&Article> {
        key.article_no?;
        if let Some(a) = self.entries.get(key) {
            return Some(a);
        }
        if key.paragraph_no.is_none() {
            return self.article_paragraphs(key).next();
        }
        None
    }

    /// Every record belonging to the article (whole-article or per-paragraph).
    pub fn article_paragraphs<'a>(&'a self, key: &CitationKey) -> impl Iterator<Item = &'a Article> + 'a {
        let lo = CitationKey { paragraph_no: None, ..key.clone() };
        let title = key.law_title.clone();
        let no = key.article_no;
        self.entries
            .range(lo..)
            .take_while(move |(k, _)| k.law_title == title && k.article_no == no)
            .map(|(_, a)| a)
    }

    pub fn contains_title(&self, title: &str) -> bool {
        self.title_set.contains(title)
    }

    pub fn canonicalize(&self, raw_title: &str) -> Result<String, ParseError> {
        canonicalize_title(raw_title, &self.aliases)
    }

    pub fn aliases(&self) -> &TitleAliases {
        &self.aliases
    }

    pub fn titles(&self) -> impl Iterator<Item = &str> {
        self.title_set.iter().map(String::as_str)
    }

    pub fn articles(&self) -> impl ExactSizeIterator<Item = &Article> {
        self.entries.values()
    }

    pub fn keys(&self) -> impl ExactSizeIterator<Item = &CitationKey> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn build_stats(&self) -> &BuildStats {
        &self.build_stats
    }

    pub fn to_json(&self) -> Result<String, CorpusError> {
        let file = IndexFile {
            format: INDEX_FORMAT.to_string(),
            version: INDEX_VERSION,
            aliases: self.aliases.clone(),
            build_stats: self.build_stats.clone(),
            articles: self.entries.values().cloned().collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self, CorpusError> {
        let file: IndexFile = serde_json::from_str(s)?;
        if file.format != INDEX_FORMAT {
            return Err(CorpusError::BadIndexFile(format!("format {:?}", file.format)));
        }
        if file.version != INDEX_VERSION {
            return Err(CorpusError::BadIndexFile(format!("version {}", file.version)));
        }
        let stats = file.build_stats;
        let mut idx = Self::from_articles(file.articles, file.aliases)?;
        idx.build_stats = stats;
        Ok(idx)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CorpusError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
