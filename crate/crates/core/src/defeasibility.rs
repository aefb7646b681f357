//! The defeasibility reward.
//!
//! For a situation and a candidate question the engine imagines one weakener
//! and one strengthener answer, discards answers an NLI model says are
//! entailed by or contradict the situation, fuses each surviving answer into
//! an updated situation, judges both updated situations, and scores the
//! question by the Jensen–Shannon divergence between the two judgments.
//! Before training, the mean and standard deviation of that score over one
//! question per training situation are recorded and used to standardize it.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    self, BackendError, DecodingParams, GenerationRequest, JudgmentOracle, NliClassifier, NliLabel,
    TextGenerator,
};
use crate::divergence::{argmax_judgment, jsd};
use crate::domain::{Answer, JudgmentClass, JudgmentDistribution, Question, Situation, UpdateType, UpdatedSituation};

/// Answer samples drawn per update type before giving up on that side.
pub const DEFAULT_SAMPLES_PER_TYPE: usize = 4;

#[derive(Debug, Error)]
pub enum RewardError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("cannot estimate reward statistics from an empty sample")]
    EmptySample,
    #[error("reward cache: {0}")]
    Cache(String),
}

/// One kept answer with its fused situation and judgment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateOutcome {
    pub answer: Answer,
    pub fused: UpdatedSituation,
    pub judgment: JudgmentDistribution,
}

/// A question with its simulated weakener/strengthener outcomes. A side is
/// `None` when every sampled answer for it was filtered out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefeasibleQA {
    pub situation: Situation,
    pub question: Question,
    pub weakener: Option<UpdateOutcome>,
    pub strengthener: Option<UpdateOutcome>,
}

impl DefeasibleQA {
    pub fn side(&self, u: UpdateType) -> Option<&UpdateOutcome> {
        match u {
            UpdateType::Weakener => self.weakener.as_ref(),
            UpdateType::Strengthener => self.strengthener.as_ref(),
        }
    }

    pub fn judgment(&self, u: UpdateType) -> Option<&JudgmentDistribution> {
        self.side(u).map(|o| &o.judgment)
    }
}

/// JSD between the weakener and strengthener judgments, or 0 when either side
/// is missing.
pub fn raw_reward(d: &DefeasibleQA) -> f64 {
    match (d.judgment(UpdateType::Weakener), d.judgment(UpdateType::Strengthener)) {
        (Some(w), Some(s)) => jsd(w, s),
        _ => 0.0,
    }
}

/// Keep an answer only when it is neutral with respect to the situation.
pub fn filter_answer(s: &Situation, a: &Answer, classifier: &dyn NliClassifier) -> Result<bool, BackendError> {
    Ok(backends::nli(classifier, s.text(), a.text())? == NliLabel::Neutral)
}

/// Input for the fusion model: `<situation>, Q.: <question>, A.: <answer>`.
pub fn fusion_prompt(s: &Situation, q: &Question, a: &Answer) -> String {
    format!("{}, Q.: {}, A.: {}", s.text(), q.text(), a.text())
}

/// Deterministic fusion used when no fusion model answers.
pub fn fallback_fusion(s: &Situation, a: &Answer) -> String {
    format!("{}, given that {}", s.text(), a.text())
}

/// Fuses situation, question and answer into one updated situation. Never
/// fails: a missing, failing or empty fusion backend yields
/// [`fallback_fusion`].
pub fn fuse(
    s: &Situation,
    q: &Question,
    a: &Answer,
    fusion: Option<&dyn TextGenerator>,
    params: &DecodingParams,
) -> UpdatedSituation {
    let fused = fusion
        .and_then(|f| match f.generate(&GenerationRequest::new(fusion_prompt(s, q, a), *params)) {
            Ok(g) => Some(g.text.trim().to_owned()),
            Err(e) => {
                log::debug!("fusion backend failed, using fallback: {e}");
                None
            }
        })
        .filter(|t| !t.is_empty())
        .unwrap_or_else(|| fallback_fusion(s, a));
    UpdatedSituation {
        text: fused,
        situation: s.clone(),
        question: q.clone(),
        answer: a.clone(),
    }
}

/// Raw reward source for a (situation, question) pair.
pub trait RewardFn: Send + Sync {
    fn raw_reward(&self, s: &Situation, q: &Question) -> Result<f64, BackendError>;
}

impl<F> RewardFn for F
where
    F: Fn(&Situation, &Question) -> Result<f64, BackendError> + Send + Sync,
{
    fn raw_reward(&self, s: &Situation, q: &Question) -> Result<f64, BackendError> {
        self(s, q)
    }
}

/// Simulates answers and computes the defeasibility reward.
#[derive(Clone)]
pub struct RewardEngine {
    pub answerer: Arc<dyn TextGenerator>,
    /// `None` disables answer filtering.
    pub classifier: Option<Arc<dyn NliClassifier>>,
    /// `None` always uses the fallback fusion template.
    pub fusion: Option<Arc<dyn TextGenerator>>,
    pub oracle: Arc<dyn JudgmentOracle>,
    pub samples_per_type: usize,
    pub decoding: DecodingParams,
    pub cache: Option<Arc<RewardCache>>,
}

impl RewardEngine {
    pub fn new(answerer: Arc<dyn TextGenerator>, oracle: Arc<dyn JudgmentOracle>) -> Self {
        Self {
            answerer,
            classifier: None,
            fusion: None,
            oracle,
            samples_per_type: DEFAULT_SAMPLES_PER_TYPE,
            decoding: DecodingParams::default(),
            cache: None,
        }
    }

    pub fn with_classifier(mut self, classifier: Arc<dyn NliClassifier>) -> Self {
        self.classifier = Some(classifier);
        self
    }

    pub fn with_fusion(mut self, fusion: Arc<dyn TextGenerator>) -> Self {
        self.fusion = Some(fusion);
        self
    }

    pub fn with_samples(mut self, k: usize) -> Self {
        self.samples_per_type = k.max(1);
        self
    }

    pub fn with_decoding(mut self, decoding: DecodingParams) -> Self {
        self.decoding = decoding;
        self
    }

    /// Attaches a cache. A cache must only be shared between engines with the
    /// same backends and filtering setting.
    pub fn with_cache(mut self, cache: Arc<RewardCache>) -> Self {
        self.cache = Some(cache);
        self
    }

    /// The same engine with filtering switched off.
    pub fn without_filter(&self) -> Self {
        Self {
            classifier: None,
            cache: None,
            ..self.clone()
        }
    }

    /// Samples up to `samples_per_type` answers for `u` and returns the first
    /// one that passes the filter, fused and judged.
    pub fn simulate_side(
        &self,
        s: &Situation,
        q: &Question,
        u: UpdateType,
    ) -> Result<Option<UpdateOutcome>, BackendError> {
        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(s, q, u)) {
            return Ok(Some(hit));
        }
        let base_seed = self.decoding.seed.unwrap_or(0);
        for i in 0..self.samples_per_type.max(1) {
            let params = DecodingParams {
                seed: Some(base_seed.wrapping_add(i as u64)),
                ..self.decoding
            };
            let answer = backends::generate_answer(self.answerer.as_ref(), s, q, u, &params)?.value;
            if let Some(c) = &self.classifier {
                if !filter_answer(s, &answer, c.as_ref())? {
                    continue;
                }
            }
            let fused = fuse(s, q, &answer, self.fusion.as_deref(), &self.decoding);
            let judgment = backends::judge(self.oracle.as_ref(), &fused.text)?;
            let outcome = UpdateOutcome {
                answer,
                fused,
                judgment,
            };
            if let Some(c) = &self.cache {
                c.insert(s, q, u, outcome.clone());
            }
            return Ok(Some(outcome));
        }
        Ok(None)
    }

    pub fn simulate_pair(&self, s: &Situation, q: &Question) -> Result<DefeasibleQA, BackendError> {
        Ok(DefeasibleQA {
            situation: s.clone(),
            question: q.clone(),
            weakener: self.simulate_side(s, q, UpdateType::Weakener)?,
            strengthener: self.simulate_side(s, q, UpdateType::Strengthener)?,
        })
    }
}

impl RewardFn for RewardEngine {
    fn raw_reward(&self, s: &Situation, q: &Question) -> Result<f64, BackendError> {
        Ok(raw_reward(&self.simulate_pair(s, q)?))
    }
}

/// Reward standardization constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardStats {
    pub mu0: f64,
    pub sigma0: f64,
    pub sample_size: usize,
}

impl RewardStats {
    /// Standard deviations below this are treated as zero and clamped to 1.
    pub const MIN_SIGMA: f64 = 1e-12;

    pub fn identity() -> Self {
        Self {
            mu0: 0.0,
            sigma0: 1.0,
            sample_size: 1,
        }
    }

    /// Sample mean and sample (n − 1) standard deviation; a single reward or
    /// zero variance gives `sigma0 = 1`.
    pub fn from_rewards(rewards: &[f64]) -> Result<Self, RewardError> {
        let n = rewards.len();
        if n == 0 {
            return Err(RewardError::EmptySample);
        }
        let mu0 = rewards.iter().sum::<f64>() / n as f64;
        let sigma0 = if n == 1 {
            1.0
        } else {
            let var = rewards.iter().map(|r| (r - mu0).powi(2)).sum::<f64>() / (n - 1) as f64;
            let sd = var.sqrt();
            if sd < Self::MIN_SIGMA {
                1.0
            } else {
                sd
            }
        };
        Ok(Self {
            mu0,
            sigma0,
            sample_size: n,
        })
    }

    pub fn is_clamped(&self) -> bool {
        self.sigma0 == 1.0
    }
}

pub fn normalize_reward(r: f64, stats: &RewardStats) -> f64 {
    (r - stats.mu0) / stats.sigma0
}

/// Generates one question per situation (seed `base + i` for situation `i`),
/// scores it, and returns the reward statistics along with the raw sample.
pub fn estimate_stats(
    situations: &[Situation],
    policy: &dyn TextGenerator,
    params: &DecodingParams,
    reward: &dyn RewardFn,
) -> Result<(RewardStats, Vec<f64>), RewardError> {
    if situations.is_empty() {
        return Err(RewardError::EmptySample);
    }
    let base = params.seed.unwrap_or(0);
    let mut rewards = Vec::with_capacity(situations.len());
    for (i, s) in situations.iter().enumerate() {
        let p = params.with_seed(base.wrapping_add(i as u64));
        let q = backends::generate_question(policy, s, &p)?.value;
        rewards.push(reward.raw_reward(s, &q)?);
    }
    Ok((RewardStats::from_rewards(&rewards)?, rewards))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarityLabels {
    pub strengthener: Answer,
    pub weakener: Answer,
    /// Both candidates moved the judgment equally; labels follow input order.
    pub ambiguous: bool,
}

/// Decides which of two prompted answers weakens and which strengthens the
/// default judgment of `s`.
///
/// Movement is the change in `p_good − p_bad` between `judge(s)` and the
/// judgment of `s` fused with the candidate. When the base judgment is ok or
/// good the candidate that moves further toward good strengthens; when it is
/// bad the candidate that moves further toward bad strengthens.
pub fn label_answer_polarity(
    s: &Situation,
    a_good: &str,
    a_bad: &str,
    oracle: &dyn JudgmentOracle,
    fusion: Option<&dyn TextGenerator>,
    params: &DecodingParams,
) -> Result<PolarityLabels, BackendError> {
    let empty = |_| BackendError::InvalidRequest("candidate answer is empty".into());
    let first = Answer::new(a_good, UpdateType::Strengthener).map_err(empty)?;
    let second = Answer::new(a_bad, UpdateType::Weakener).map_err(empty)?;
    let no_question = Question::new("");
    let base = backends::judge(oracle, s.text())?;
    let lean = |d: &JudgmentDistribution| d.good() - d.bad();
    let movement = |a: &Answer| -> Result<f64, BackendError> {
        let fused = fuse(s, &no_question, a, fusion, params);
        Ok(lean(&backends::judge(oracle, &fused.text)?) - lean(&base))
    };
    let (m1, m2) = (movement(&first)?, movement(&second)?);
    if m1 == m2 {
        return Ok(PolarityLabels {
            strengthener: first,
            weakener: second,
            ambiguous: true,
        });
    }
    let toward_good_first = m1 > m2;
    let first_strengthens = match argmax_judgment(&base) {
        JudgmentClass::Bad => !toward_good_first,
        JudgmentClass::Ok | JudgmentClass::Good => toward_good_first,
    };
    let (strengthener, weakener) = if first_strengthens {
        (first, second)
    } else {
        (second, first)
    };
    Ok(PolarityLabels {
        strengthener: strengthener.with_update_type(UpdateType::Strengthener),
        weakener: weakener.with_update_type(UpdateType::Weakener),
        ambiguous: false,
    })
}

/// One cached, kept answer (JSONL record).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheRecord {
    pub situation: String,
    pub question: String,
    pub update_type: UpdateType,
    pub answer: String,
    pub fused: String,
    pub judgment: [f64; 3],
}

type CacheKey = (String, String, UpdateType);

/// Thread-safe store of kept answers keyed by (situation, question, update type).
#[derive(Debug, Default)]
pub struct RewardCache {
    entries: Mutex<HashMap<CacheKey, UpdateOutcome>>,
}

impl RewardCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, s: &Situation, q: &Question, u: UpdateType) -> Option<UpdateOutcome> {
        self.entries
            .lock()
            .unwrap()
            .get(&(s.text().to_owned(), q.text().to_owned(), u))
            .cloned()
    }

    pub fn insert(&self, s: &Situation, q: &Question, u: UpdateType, outcome: UpdateOutcome) {
        self.entries
            .lock()
            .unwrap()
            .insert((s.text().to_owned(), q.text().to_owned(), u), outcome);
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RewardError> {
        let file = File::open(path.as_ref()).map_err(|e| RewardError::Cache(e.to_string()))?;
        let cache = Self::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| RewardError::Cache(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: CacheRecord =
                serde_json::from_str(&line).map_err(|e| RewardError::Cache(format!("line {}: {e}", i + 1)))?;
            let bad = |m: String| RewardError::Cache(format!("line {}: {m}", i + 1));
            let s = Situation::new(rec.situation).map_err(|e| bad(e.to_string()))?;
            let q = Question::new(rec.question);
            let answer = Answer::new(rec.answer, rec.update_type).map_err(|e| bad(e.to_string()))?;
            let judgment = JudgmentDistribution::from_array(rec.judgment).map_err(|e| bad(e.to_string()))?;
            let outcome = UpdateOutcome {
                fused: UpdatedSituation {
                    text: rec.fused,
                    situation: s.clone(),
                    question: q.clone(),
                    answer: answer.clone(),
                },
                answer,
                judgment,
            };
            cache.insert(&s, &q, rec.update_type, outcome);
        }
        Ok(cache)
    }

    /// Writes all entries, sorted by key for stable output.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RewardError> {
        let entries = self.entries.lock().unwrap();
        let mut keys: Vec<&CacheKey> = entries.keys().collect();
        keys.sort();
        let file = File::create(path.as_ref()).map_err(|e| RewardError::Cache(e.to_string()))?;
        let mut w = BufWriter::new(file);
        for k in keys {
            let o = &entries[k];
            let rec = CacheRecord {
                situation: k.0.clone(),
                question: k.1.clone(),
                update_type: k.2,
                answer: o.answer.text().to_owned(),
                fused: o.fused.text.clone(),
                judgment: o.judgment.as_array(),
            };
            let line = serde_json::to_string(&rec).map_err(|e| RewardError::Cache(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| RewardError::Cache(e.to_string()))?;
        }
        w.flush().map_err(|e| RewardError::Cache(e.to_string()))
    }
}
