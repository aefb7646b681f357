//! Baseline question selectors.
//!
//! * fine-tuned: one question straight from the question generator;
//! * discriminator: one question per wh-start, keep the one a relevance
//!   classifier likes best;
//! * pipeline: one question per wh-start, keep the one with the highest
//!   defeasibility reward, optionally with answer filtering;
//! * why: always ask a why-question.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{self, BackendError, DecodingParams, GenerationRequest, RelevanceScorer, TextGenerator};
use crate::data::GoldRecord;
use crate::defeasibility::{RewardEngine, RewardFn};
use crate::domain::{Question, Situation};
use crate::text;

/// The twelve question starts used for wh-conditioned generation.
pub const DEFAULT_WH_STARTS: [&str; 12] = [
    "what", "how", "who", "do", "are", "did", "is", "where", "have", "was", "when", "would",
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("no question starts given")]
    NoStarts,
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("need questions from at least two situations, got {0}")]
    CorpusTooSmall(usize),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub wh_start: String,
    pub question: Question,
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub situation: Situation,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn questions(&self) -> impl Iterator<Item = &Question> {
        self.candidates.iter().map(|c| &c.question)
    }
}

/// Input for wh-conditioned generation: `<situation>. Q.: <wh-word>`.
pub fn wh_prompt(s: &Situation, wh: &str) -> String {
    format!("{}. Q.: {}", s.text(), wh)
}

/// One question per distinct start. Questions that do not begin with their
/// start are dropped with a warning.
pub fn generate_candidates(
    generator: &dyn TextGenerator,
    s: &Situation,
    starts: &[impl AsRef<str>],
    params: &DecodingParams,
) -> Result<CandidateSet, PipelineError> {
    if starts.is_empty() {
        return Err(PipelineError::NoStarts);
    }
    params.validate()?;
    let mut candidates: Vec<Candidate> = Vec::new();
    for start in starts {
        let wh = start.as_ref().trim().to_lowercase();
        if wh.is_empty() || candidates.iter().any(|c| c.wh_start == wh) {
            continue;
        }
        let out = generator.generate(&GenerationRequest::new(wh_prompt(s, &wh), *params))?;
        let question = Question::new(out.text.trim());
        if question.wh_start() != Some(wh.as_str()) {
            log::warn!("dropping {:?}: does not start with {wh:?}", question.text());
            continue;
        }
        candidates.push(Candidate {
            wh_start: wh,
            question,
            score: None,
        });
    }
    Ok(CandidateSet {
        situation: s.clone(),
        candidates,
    })
}

/// Index of the first maximal score.
fn first_argmax(scores: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, x) in scores.into_iter().enumerate() {
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best.map(|(i, _)| i)
}

/// Scores every candidate for relevance and returns the most relevant one.
pub fn discriminator_select(c: &mut CandidateSet, scorer: &dyn RelevanceScorer) -> Result<Question, PipelineError> {
    if c.candidates.is_empty() {
        return Err(PipelineError::EmptyCandidates);
    }
    for cand in &mut c.candidates {
        cand.score = Some(scorer.relevance(c.situation.text(), cand.question.text())?);
    }
    let i = first_argmax(c.candidates.iter().map(|x| x.score.unwrap_or(f64::NEG_INFINITY))).expect("nonempty");
    Ok(c.candidates[i].question.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Relevance {
    Relevant,
    Irrelevant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscriminatorExample {
    pub situation: Situation,
    pub question: Question,
    pub label: Relevance,
}

fn same_question(a: &str, b: &str) -> bool {
    a.trim().eq_ignore_ascii_case(b.trim())
}

/// Balanced relevance data: every gold question is a positive, paired with the
/// most token-F1-similar question from a different situation as a negative.
/// Candidates that match one of the situation's own gold questions are
/// skipped; ties go to the earlier question in corpus order.
pub fn build_discriminator_data(gold: &[GoldRecord]) -> Result<Vec<DiscriminatorExample>, PipelineError> {
    let mut situations: Vec<&str> = gold.iter().map(|r| r.situation.text()).collect();
    situations.sort_unstable();
    situations.dedup();
    if situations.len() < 2 {
        return Err(PipelineError::CorpusTooSmall(situations.len()));
    }
    let pool: Vec<(&Situation, &Question)> = gold
        .iter()
        .flat_map(|r| r.questions.iter().map(move |q| (&r.situation, q)))
        .collect();
    let own_questions = |s: &Situation| -> Vec<&Question> {
        pool.iter().filter(|(t, _)| t.text() == s.text()).map(|(_, q)| *q).collect()
    };
    let mut out = Vec::new();
    for rec in gold {
        let own = own_questions(&rec.situation);
        for q in &rec.questions {
            let mut negative: Option<(usize, f64)> = None;
            for (i, (t, cand)) in pool.iter().enumerate() {
                if t.text() == rec.situation.text() || own.iter().any(|o| same_question(o.text(), cand.text())) {
                    continue;
                }
                let f1 = text::token_f1(q.text(), cand.text());
                if negative.is_none_or(|(_, best)| f1 > best) {
                    negative = Some((i, f1));
                }
            }
            let Some((i, _)) = negative else {
                log::warn!("no negative for {:?}; skipping positive", q.text());
                continue;
            };
            out.push(DiscriminatorExample {
                situation: rec.situation.clone(),
                question: q.clone(),
                label: Relevance::Relevant,
            });
            out.push(DiscriminatorExample {
                situation: rec.situation.clone(),
                question: pool[i].1.clone(),
                label: Relevance::Irrelevant,
            });
        }
    }
    Ok(out)
}

/// Defeasibility score of a candidate, with or without answer filtering.
pub trait DivergenceScorer: Send + Sync {
    fn divergence(&self, s: &Situation, q: &Question, use_nli_filter: bool) -> Result<f64, BackendError>;
}

impl DivergenceScorer for RewardEngine {
    fn divergence(&self, s: &Situation, q: &Question, use_nli_filter: bool) -> Result<f64, BackendError> {
        if !use_nli_filter {
            return self.without_filter().raw_reward(s, q);
        }
        if self.classifier.is_none() {
            return Err(BackendError::InvalidRequest("answer filtering requested but no NLI classifier is configured".into()));
        }
        self.raw_reward(s, q)
    }
}

impl<F> DivergenceScorer for F
where
    F: Fn(&Situation, &Question, bool) -> Result<f64, BackendError> + Send + Sync,
{
    fn divergence(&self, s: &Situation, q: &Question, use_nli_filter: bool) -> Result<f64, BackendError> {
        self(s, q, use_nli_filter)
    }
}

/// Scores every candidate by its defeasibility reward and returns the best.
pub fn divergence_rank(
    c: &mut CandidateSet,
    scorer: &dyn DivergenceScorer,
    use_nli_filter: bool,
) -> Result<Question, PipelineError> {
    if c.candidates.is_empty() {
        return Err(PipelineError::EmptyCandidates);
    }
    for cand in &mut c.candidates {
        cand.score = Some(scorer.divergence(&c.situation, &cand.question, use_nli_filter)?);
    }
    let i = first_argmax(c.candidates.iter().map(|x| x.score.unwrap_or(f64::NEG_INFINITY))).expect("nonempty");
    Ok(c.candidates[i].question.clone())
}

/// Question from the fine-tuned generator, with no wh-conditioning.
pub fn finetuned_question(
    generator: &dyn TextGenerator,
    s: &Situation,
    params: &DecodingParams,
) -> Result<Question, PipelineError> {
    Ok(backends::generate_question(generator, s, params)?.value)
}

pub fn why_question(generator: &dyn TextGenerator, s: &Situation, params: &DecodingParams) -> Result<Question, PipelineError> {
    let c = generate_candidates(generator, s, &["why"], params)?;
    c.candidates
        .into_iter()
        .next()
        .map(|c| c.question)
        .ok_or(PipelineError::EmptyCandidates)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Finetuned,
    Discriminator,
    Pipeline,
    PipelineNli,
    Why,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Finetuned,
        Method::Discriminator,
        Method::Pipeline,
        Method::PipelineNli,
        Method::Why,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Finetuned => "finetuned",
            Method::Discriminator => "discriminator",
            Method::Pipeline => "pipeline",
            Method::PipelineNli => "pipeline-nli",
            Method::Why => "why",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| PipelineError::UnknownMethod(s.to_string()))
    }
}
