//! Prompt templates shared by dataset forging and the consult service.
//!
//! All fields are plain strings so a deployment can swap in other wording
//! (for example Chinese phrasing) through a JSON config.

use serde::{Deserialize, Serialize};

use crate::corpus::Article;

pub const ICL_HEADER: &str = "Here is a question from the National Judicial Examination and one of its options. The question texts will begin with \"### Question:\" and the option texts with \"### Option:\". Please concatenate them as a single true-or-false question. A few examples are illustrated below.";

pub const ICL_INSTRUCTION: &str = "Now, please concatenate the following question and option as a single fluent and coherent query. The output should not contain phrases like \"options\", \"from following\", \"as below\".";

pub const DISTILL_HEADER: &str = "Here is a question about law, could you please answer it and give me a detailed analysis?";

pub const DISCLAIMER: &str =
    "There may be irrelevant articles in the reference articles, so please avoid quoting those unrelated ones when replying.";

pub const CONSULT_REQUIREMENTS: [&str; 6] = [
    "properly citing legal articles",
    "giving well-founded analyses based on the facts of the case and legal articles",
    "responding comprehensively and analyzing the potential possibilities",
    "asking appropriate questions to dig out facts to assist in further answers",
    "using plain language",
    "giving preliminary legal opinions and consulting conclusions",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplates {
    pub lawyer_role: String,
    pub requirements: Vec<String>,
    pub reference_header: String,
    pub disclaimer: String,
    pub history_header: String,
    pub question_header: String,
    pub answer_cue: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            lawyer_role: "You are a professional lawyer. Please respond to the client's legal consultation.".into(),
            requirements: CONSULT_REQUIREMENTS.iter().map(|s| s.to_string()).collect(),
            reference_header: "Reference articles:".into(),
            disclaimer: DISCLAIMER.into(),
            history_header: "Conversation so far:".into(),
            question_header: "Client:".into(),
            answer_cue: "Lawyer:".into(),
        }
    }
}

impl PromptTemplates {
    /// Role line followed by the numbered response requirements.
    pub fn role_block(&self) -> String {
        let mut s = self.lawyer_role.clone();
        if !self.requirements.is_empty() {
            s.push_str(" Your response should meet the following requirements:");
            for (i, r) in self.requirements.iter().enumerate() {
                s.push_str(&format!(" ({}) {r}", i + 1));
                s.push(if i + 1 == self.requirements.len() { '.' } else { ',' });
            }
        }
        s
    }

    /// Numbered reference entries, one per line: `[1] 《民法典》第一千零四十七条：...`.
    pub fn reference_block(&self, articles: &[&Article]) -> String {
        let mut s = self.reference_header.clone();
        for (i, a) in articles.iter().enumerate() {
            s.push_str(&format!("\n[{}] {}", i + 1, a.render_reference()));
        }
        s
    }

    /// Full consultation prompt: role and requirements, reference articles
    /// with an optional disclaimer, condensed history, then the question.
    /// With no articles the reference block and disclaimer are left out.
    pub fn consult_prompt(&self, articles: &[&Article], disclaimer: bool, history: &str, question: &str) -> String {
        let mut s = self.role_block();
        if !articles.is_empty() {
            s.push_str("\n\n");
            s.push_str(&self.reference_block(articles));
            if disclaimer {
                s.push('\n');
                s.push_str(&self.disclaimer);
            }
        }
        if !history.is_empty() {
            s.push_str(&format!("\n\n{}\n{history}", self.history_header));
        }
        s.push_str(&format!("\n\n{} {}\n{}", self.question_header, question.trim(), self.answer_cue));
        s
    }
}
