//! Explain-then-process grammar prompting harness.
//!
//! The pipeline has two steps. A generator model is first asked to explain a
//! grammatical paradigm (see [`explain`]); the explanation is then prepended to
//! forced-choice minimal-pair questions put to a target model (see
//! [`templates`] and [`runner`]). Every pair is judged in three counterbalanced
//! A/B trials and the graded judgments are rolled up into macro-averaged
//! accuracy tables, SLM/LLM gap statistics and paired comparisons (see
//! [`analysis`] and [`report`]).

pub mod analysis;
pub mod corpus;
pub mod digest;
pub mod explain;
pub mod llm;
pub mod report;
pub mod runner;
pub mod templates;


pub use analysis::{
    CategoryScore, GapReport, Group, MacroAverage, PairedComparison, ParadigmScore,
};
pub use corpus::{CorpusManifest, Dataset, MinimalPair, ParadigmSpec, SourceFormat};
pub use explain::{ExplanationCache, GrammarExplanation, HygieneReport};
pub use llm::{BackendKind, ChatRequest, ChatResponse, LlmClient, MockPolicy};
pub use runner::{Choice, Judgment, ParsePath, RunManifest, TrialPlan};
pub use templates::{Audience, ConditionKind, ConditionSpec, Order, PromptBundle, TemplateSet};
