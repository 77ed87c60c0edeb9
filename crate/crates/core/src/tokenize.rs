//! Mixed-script tokenization: character bigrams over CJK runs, lowercased
//! words over everything else.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    /// Emit overlapping bigrams for CJK runs (unigrams when false).
    pub cjk_bigrams: bool,
    pub lowercase: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self { cjk_bigrams: true, lowercase: true }
    }
}

pub fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0xF900..=0xFAFF | 0x20000..=0x2A6DF | 0x3007)
}

enum Run {
    Cjk,
    Word,
}

impl TokenizerConfig {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut buf: Vec<char> = Vec::new();
        let mut kind: Option<Run> = None;

        let flush = |buf: &mut Vec<char>, kind: &Option<Run>, out: &mut Vec<String>| {
            match kind {
                Some(Run::Cjk) if self.cjk_bigrams && buf.len() > 1 => {
                    out.extend(buf.windows(2).map(|w| w.iter().collect::<String>()));
                }
                Some(Run::Cjk) => out.extend(buf.iter().map(|c| c.to_string())),
                Some(Run::Word) if !buf.is_empty() => {
                    let w: String = buf.iter().collect();
                    out.push(if self.lowercase { w.to_lowercase() } else { w });
                }
                _ => {}
            }
            buf.clear();
        };

        for c in text.chars() {
            let next = if is_cjk(c) {
                Some(Run::Cjk)
            } else if c.is_alphanumeric() {
                Some(Run::Word)
            } else {
                None
            };
            let same = matches!((&kind, &next), (Some(Run::Cjk), Some(Run::Cjk)) | (Some(Run::Word), Some(Run::Word)));
            if !same {
                flush(&mut buf, &kind, &mut out);
                kind = next;
            }
            if kind.is_some() {
                buf.push(c);
            }
        }
        flush(&mut buf, &kind, &mut out);
        out
    }
}
