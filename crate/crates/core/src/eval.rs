//! Automatic evaluation.
//!
//! Question metrics: share of questions a QA model cannot answer from the
//! situation alone, best similarity to any reference question, average
//! defeasibility score and judgment-flip rate. Update-generation metrics:
//! BLEU-4 and ROUGE-L over lowercased whitespace tokens. Plus a harness that
//! retrains on seeded subsamples of the training data and averages the
//! resulting score curves over fixed step windows.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{self, BackendError, JudgmentOracle, QaModel, SimilarityScorer};
use crate::defeasibility::{raw_reward, DefeasibleQA, RewardEngine};
use crate::divergence::argmax_judgment;
use crate::domain::{JudgmentDistribution, Question, Situation, UpdateType};
use crate::text;

/// Tokenization used by [`bleu4`] and [`rouge_l`], recorded in reports.
pub const TOKENIZATION: &str = "lowercased whitespace";

pub const DEFAULT_WINDOW: usize = 1000;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("nothing to evaluate")]
    Empty,
    #[error("no reference questions")]
    NoReferences,
    #[error("length mismatch: {0} records vs {1} base judgments")]
    LengthMismatch(usize, usize),
    #[error("fraction {0} outside (0, 1]")]
    Fraction(f64),
}

/// Share of questions the QA model cannot answer from the situation.
pub fn informativeness(items: &[(Situation, Question)], qa: &dyn QaModel) -> Result<f64, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut unanswerable = 0usize;
    for (s, q) in items {
        if !backends::qa_answerable(qa, s.text(), q)? {
            unanswerable += 1;
        }
    }
    Ok(unanswerable as f64 / items.len() as f64)
}

pub fn max_reference_similarity(
    candidate: &Question,
    references: &[Question],
    scorer: &dyn SimilarityScorer,
) -> Result<f64, EvalError> {
    if references.is_empty() {
        return Err(EvalError::NoReferences);
    }
    let mut best = 0.0f64;
    for r in references {
        best = best.max(backends::similarity(scorer, candidate.text(), r.text())?);
    }
    Ok(best)
}

/// Mean over items of [`max_reference_similarity`].
pub fn mean_max_similarity(
    items: &[(Question, Vec<Question>)],
    scorer: &dyn SimilarityScorer,
) -> Result<f64, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut sum = 0.0;
    for (c, refs) in items {
        sum += max_reference_similarity(c, refs, scorer)?;
    }
    Ok(sum / items.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceSummary {
    pub mean_jsd: f64,
    /// Flipped answers over answers present; 0 when there are none.
    pub pct_flips: f64,
    pub answers: usize,
    pub flips: usize,
}

/// Average defeasibility score and the share of simulated answers whose
/// updated judgment has a different argmax than the base situation's.
pub fn divergence_report(
    records: &[DefeasibleQA],
    base_judgments: &[JudgmentDistribution],
) -> Result<DivergenceSummary, EvalError> {
    if records.len() != base_judgments.len() {
        return Err(EvalError::LengthMismatch(records.len(), base_judgments.len()));
    }
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut answers, mut flips) = (0usize, 0usize);
    for (r, base) in records.iter().zip(base_judgments) {
        let base_class = argmax_judgment(base);
        for u in UpdateType::BOTH {
            if let Some(j) = r.judgment(u) {
                answers += 1;
                if argmax_judgment(j) != base_class {
                    flips += 1;
                }
            }
        }
    }
    Ok(DivergenceSummary {
        mean_jsd: records.iter().map(raw_reward).sum::<f64>() / records.len() as f64,
        pct_flips: if answers == 0 { 0.0 } else { flips as f64 / answers as f64 },
        answers,
        flips,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    #[default]
    None,
    /// Adds one to the matched and total counts of the 2- to 4-gram precisions.
    AddOne,
}

fn ngrams(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram matches and candidate n-gram total.
fn modified_precision(cand: &[String], refs: &[Vec<String>], n: usize) -> (usize, usize) {
    let counts = ngrams(cand, n);
    let mut max_ref: HashMap<&[String], usize> = HashMap::new();
    for r in refs {
        for (g, c) in ngrams(r, n) {
            let e = max_ref.entry(g).or_insert(0);
            *e = (*e).max(c);
        }
    }
    let matched = counts
        .iter()
        .map(|(g, c)| (*c).min(max_ref.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, cand.len().saturating_sub(n - 1))
}

/// Sentence BLEU-4 with uniform weights and the brevity penalty against the
/// reference closest in length (shorter on ties). Orders longer than the
/// candidate are left out of the geometric mean.
pub fn bleu4(candidate: &str, references: &[&str], smoothing: Smoothing) -> f64 {
    let cand = text::tokens(candidate);
    let refs: Vec<Vec<String>> = references.iter().map(|r| text::tokens(r)).collect();
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut logs = Vec::with_capacity(4);
    for n in 1..=4 {
        let (m, total) = modified_precision(&cand, &refs, n);
        let (m, total) = match smoothing {
            Smoothing::AddOne if n > 1 => (m + 1, total + 1),
            _ => (m, total),
        };
        if total == 0 {
            // Candidate too short for this order.
            continue;
        }
        if m == 0 {
            return 0.0;
        }
        logs.push((m as f64 / total as f64).ln());
    }
    let log_mean = logs.iter().sum::<f64>() / logs.len() as f64;
    let c = cand.len();
    let r = refs
        .iter()
        .map(Vec::len)
        .min_by_key(|&l| (l.abs_diff(c), l))
        .expect("nonempty");
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * log_mean.exp()
}

fn lcs(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    for x in a {
        let mut cur = vec![0usize; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        prev = cur;
    }
    prev[b.len()]
}

/// LCS-based F1 over lowercased whitespace tokens.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = text::tokens(candidate);
    let r = text::tokens(reference);
    if c.is_empty() && r.is_empty() {
        return 1.0;
    }
    let l = lcs(&c, &r);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / c.len() as f64;
    let rec = l as f64 / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

/// Mean BLEU-4 and mean best-reference ROUGE-L over (candidate, references).
pub fn update_generation_scores(pairs: &[(String, Vec<String>)], smoothing: Smoothing) -> Result<(f64, f64), EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let (mut b, mut r) = (0.0, 0.0);
    for (cand, refs) in pairs {
        if refs.is_empty() {
            return Err(EvalError::NoReferences);
        }
        let refs: Vec<&str> = refs.iter().map(String::as_str).collect();
        b += bleu4(cand, &refs, smoothing);
        r += refs.iter().map(|x| rouge_l(cand, x)).fold(0.0, f64::max);
    }
    let n = pairs.len() as f64;
    Ok((b / n, r / n))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus_path: Option<String>,
    pub backend_ids: Vec<String>,
    pub config_hash: Option<String>,
}

/// Metrics not computed in a run are `null`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub pct_unanswerable: Option<f64>,
    pub mean_max_similarity: Option<f64>,
    pub mean_jsd: Option<f64>,
    pub pct_judgment_flips: Option<f64>,
    pub bleu4: Option<f64>,
    pub rouge_l: Option<f64>,
    pub tokenization: String,
    pub provenance: Provenance,
}

impl EvalReport {
    pub fn rates_in_range(&self) -> bool {
        [
            self.pct_unanswerable,
            self.mean_max_similarity,
            self.mean_jsd,
            self.pct_judgment_flips,
            self.bleu4,
            self.rouge_l,
        ]
        .into_iter()
        .flatten()
        .all(|x| (0.0..=1.0).contains(&x))
    }
}

/// A generated question for a situation with its reference questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionItem {
    pub situation: Situation,
    pub question: Question,
    #[serde(default)]
    pub references: Vec<Question>,
}

/// Backends for [`evaluate_questions`]; metrics whose backend is missing are
/// skipped.
#[derive(Default, Clone, Copy)]
pub struct EvalBackends<'a> {
    pub qa: Option<&'a dyn QaModel>,
    pub similarity: Option<&'a dyn SimilarityScorer>,
    pub engine: Option<&'a RewardEngine>,
    /// Judges base situations for flip counting; defaults to the engine's oracle.
    pub oracle: Option<&'a dyn JudgmentOracle>,
}

pub fn evaluate_questions(items: &[QuestionItem], b: EvalBackends<'_>, provenance: Provenance) -> Result<EvalReport, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut report = EvalReport {
        n: items.len(),
        tokenization: TOKENIZATION.into(),
        provenance,
        ..Default::default()
    };
    if let Some(qa) = b.qa {
        let pairs: Vec<(Situation, Question)> = items.iter().map(|i| (i.situation.clone(), i.question.clone())).collect();
        report.pct_unanswerable = Some(informativeness(&pairs, qa)?);
    }
    if let Some(sim) = b.similarity {
        let with_refs: Vec<(Question, Vec<Question>)> = items
            .iter()
            .filter(|i| !i.references.is_empty())
            .map(|i| (i.question.clone(), i.references.clone()))
            .collect();
        if !with_refs.is_empty() {
            report.mean_max_similarity = Some(mean_max_similarity(&with_refs, sim)?);
        }
    }
    if let Some(engine) = b.engine {
        let oracle = b.oracle.unwrap_or(engine.oracle.as_ref());
        let mut records = Vec::with_capacity(items.len());
        let mut bases = Vec::with_capacity(items.len());
        for i in items {
            records.push(engine.simulate_pair(&i.situation, &i.question)?);
            bases.push(backends::judge(oracle, i.situation.text())?);
        }
        let d = divergence_report(&records, &bases)?;
        report.mean_jsd = Some(d.mean_jsd);
        report.pct_judgment_flips = Some(d.pct_flips);
    }
    Ok(report)
}

/// Seeded subsample of `floor(fraction * len)` items (at least one), in
/// original order.
pub fn subsample<T: Clone>(data: &[T], fraction: f64, seed: u64) -> Result<Vec<T>, EvalError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(EvalError::Fraction(fraction));
    }
    let k = ((fraction * data.len() as f64).floor() as usize).max(1).min(data.len());
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut keep = idx[..k].to_vec();
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| data[i].clone()).collect())
}

/// Averages of consecutive `window`-step blocks; a trailing partial block is
/// averaged over the steps it has.
pub fn window_means(series: &[f64], window: usize) -> Vec<WindowPoint> {
    let window = window.max(1);
    series
        .chunks(window)
        .enumerate()
        .map(|(i, c)| WindowPoint {
            end_step: i * window + c.len(),
            mean: c.iter().sum::<f64>() / c.len() as f64,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    /// Number of steps covered up to and including this window.
    pub end_step: usize,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCurve {
    pub fraction: f64,
    pub subset_size: usize,
    pub points: Vec<WindowPoint>,
}

#[derive(Debug, Error)]
pub enum AblationError<E> {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("run failed: {0}")]
    Run(E),
}

/// For each fraction: subsample `data` (same seed for every fraction), train
/// on the subsample, turn the run into a per-step score series, and average it
/// over `window`-step blocks.
pub fn ablation_harness<T, M, E>(
    data: &[T],
    fractions: &[f64],
    seed: u64,
    window: usize,
    mut train_fn: impl FnMut(&[T]) -> Result<M, E>,
    mut eval_fn: impl FnMut(&M) -> Result<Vec<f64>, E>,
) -> Result<Vec<AblationCurve>, AblationError<E>>
where
    T: Clone,
{
    if let Some(&f) = fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
        return Err(EvalError::Fraction(f).into());
    }
    if data.is_empty() {
        return Err(EvalError::Empty.into());
    }
    let mut curves = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let subset = subsample(data, fraction, seed)?;
        let run = train_fn(&subset).map_err(AblationError::Run)?;
        let series = eval_fn(&run).map_err(AblationError::Run)?;
        curves.push(AblationCurve {
            fraction,
            subset_size: subset.len(),
            points: window_means(&series, window),
        });
    }
    Ok(curves)
}
