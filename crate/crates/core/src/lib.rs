//! Legal statute indexing, article retrieval, dataset forging, perplexity
//! evaluation, citation auditing and retrieval-augmented consultation.

pub mod audit;
pub mod consult;
pub mod corpus;
pub mod evaluator;
pub mod forge;
pub mod gateway;
pub mod numerals;
pub mod prompts;
pub mod retriever;
pub mod tokenize;

pub use audit::{AuditFinding, AuditReport, Auditor, Citation, Verdict};
pub use consult::{ConsultOverrides, ConsultService, ConsultSession, ConsultTurn};
pub use corpus::{Article, ArticleIndex, CitationKey, TitleAliases};
pub use evaluator::{EvalChoiceItem, EvalReport, HumanRankRecord, ScoredChoice};
pub use forge::{MCQItem, SFTExample, TrueFalseQuery};
pub use gateway::{BackendConfig, Gateway};
pub use numerals::{parse_article_number, ParseError};
pub use retriever::{LexicalIndex, RetrievalResult};
