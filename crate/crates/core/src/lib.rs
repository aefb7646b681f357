//! Clarification-question generation for social and moral situations.
//!
//! A question is good when the answers it invites can push a moral judgment in
//! opposite directions. This crate scores that property (the *defeasibility
//! reward*: Jensen–Shannon divergence between the judgments of a weakener- and a
//! strengthener-updated situation), trains a token-level question policy on it
//! with PPO, and provides baselines, evaluation metrics, corpus tooling, and the
//! state machine behind a three-turn interactive judgment loop.
//!
//! Every learned component (question policy, answer simulator, fusion model,
//! judgment oracle, NLI, QA, similarity) sits behind a trait in [`backends`],
//! with deterministic fixtures for testing and an HTTP client for remote models.

pub mod backends;
pub mod data;
pub mod defeasibility;
pub mod divergence;
pub mod domain;
pub mod eval;
pub mod pipelines;
pub mod ppo;
pub mod session;
pub mod text;

pub use divergence::{argmax_judgment, jsd, jsd_raw};
pub use domain::{
    Answer, DistributionError, JudgmentClass, JudgmentDistribution, Question, Situation,
    UpdateType, UpdatedSituation,
};
