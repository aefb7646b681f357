//! Token-level question policy and state-value model.
//!
//! An episode decodes a question one token at a time; the state at step `t` is
//! the situation together with the tokens decoded so far. [`Policy`] exposes
//! next-token log-probabilities for a state and [`ValueModel`] a scalar value.
//! The trainable variants add analytic gradients so PPO can run without an
//! autodiff framework. [`SoftmaxPolicy`] and [`LinearValue`] are small linear
//! models over (previous token, situation bucket) features, sufficient for
//! desk-scale experiments and gradient checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BackendError, DecodingParams, Generation, GenerationRequest, Result, TextGenerator};
use crate::domain::Situation;

pub type TokenId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    eos: TokenId,
}

impl Vocab {
    /// `eos` must be one of `tokens`.
    pub fn new<S: Into<String>>(tokens: impl IntoIterator<Item = S>, eos: &str) -> Result<Self> {
        let tokens: Vec<String> = tokens.into_iter().map(Into::into).collect();
        let eos = tokens
            .iter()
            .position(|t| t == eos)
            .ok_or_else(|| BackendError::InvalidRequest(format!("end-of-sequence token {eos:?} not in vocabulary")))?;
        Ok(Self { tokens, eos })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t == token)
    }

    /// Space-joined tokens, stopping at end-of-sequence.
    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .take_while(|&&t| t != self.eos)
            .map(|&t| self.tokens[t].as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub trait Policy: Send + Sync {
    fn vocab(&self) -> &Vocab;

    /// Log-probabilities over the whole vocabulary for the next token.
    fn next_log_probs(&self, situation: &Situation, prefix: &[TokenId]) -> Vec<f64>;

    fn log_prob(&self, situation: &Situation, prefix: &[TokenId], token: TokenId) -> f64 {
        self.next_log_probs(situation, prefix)[token]
    }
}

pub trait ValueModel: Send + Sync {
    fn value(&self, situation: &Situation, prefix: &[TokenId]) -> f64;
}

/// Flat parameter access for optimizers and finite-difference checks.
pub trait Parameterized {
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
}

pub trait TrainablePolicy: Policy + Parameterized + Clone {
    /// `grad += scale * d log pi(token | situation, prefix) / d params`.
    fn accumulate_log_prob_grad(
        &self,
        situation: &Situation,
        prefix: &[TokenId],
        token: TokenId,
        scale: f64,
        grad: &mut [f64],
    );
}

pub trait TrainableValue: ValueModel + Parameterized + Clone {
    /// `grad += scale * d V(situation, prefix) / d params`.
    fn accumulate_value_grad(&self, situation: &Situation, prefix: &[TokenId], scale: f64, grad: &mut [f64]);
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// FNV-1a, used to bucket situations deterministically.
fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn bucket(situation: &Situation, buckets: usize) -> usize {
    (fnv1a(situation.text()) % buckets as u64) as usize
}

/// Linear softmax policy. Logits for the next token are
/// `bias[v] + transition[prev][v] + situation[bucket(s)][v]`, where `prev` is
/// the previous token or a start marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    vocab: Vocab,
    buckets: usize,
    params: Vec<f64>,
}

impl SoftmaxPolicy {
    pub fn new(vocab: Vocab, buckets: usize) -> Self {
        let v = vocab.len();
        let buckets = buckets.max(1);
        let n = v + (v + 1) * v + buckets * v;
        Self {
            vocab,
            buckets,
            params: vec![0.0; n],
        }
    }

    pub fn set_bias(&mut self, token: TokenId, value: f64) {
        self.params[token] = value;
    }

    pub fn with_bias(mut self, token: TokenId, value: f64) -> Self {
        self.set_bias(token, value);
        self
    }

    fn offsets(&self, situation: &Situation, prefix: &[TokenId]) -> (usize, usize) {
        let v = self.vocab.len();
        let prev = prefix.last().copied().unwrap_or(v);
        let trans = v + prev * v;
        let sit = v + (v + 1) * v + bucket(situation, self.buckets) * v;
        (trans, sit)
    }
}

impl Policy for SoftmaxPolicy {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn next_log_probs(&self, situation: &Situation, prefix: &[TokenId]) -> Vec<f64> {
        let v = self.vocab.len();
        let (trans, sit) = self.offsets(situation, prefix);
        let logits: Vec<f64> = (0..v)
            .map(|k| self.params[k] + self.params[trans + k] + self.params[sit + k])
            .collect();
        log_softmax(&logits)
    }
}

impl Parameterized for SoftmaxPolicy {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

impl TrainablePolicy for SoftmaxPolicy {
    fn accumulate_log_prob_grad(
        &self,
        situation: &Situation,
        prefix: &[TokenId],
        token: TokenId,
        scale: f64,
        grad: &mut [f64],
    ) {
        let lp = self.next_log_probs(situation, prefix);
        let (trans, sit) = self.offsets(situation, prefix);
        for (k, l) in lp.iter().enumerate() {
            let d = scale * (if k == token { 1.0 } else { 0.0 } - l.exp());
            grad[k] += d;
            grad[trans + k] += d;
            grad[sit + k] += d;
        }
    }
}

/// Linear state-value model:
/// `bias + prev[prev token] + position[min(t, P-1)] + situation[bucket(s)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearValue {
    vocab_len: usize,
    positions: usize,
    buckets: usize,
    params: Vec<f64>,
}

impl LinearValue {
    pub fn new(vocab_len: usize, positions: usize, buckets: usize) -> Self {
        let positions = positions.max(1);
        let buckets = buckets.max(1);
        Self {
            vocab_len,
            positions,
            buckets,
            params: vec![0.0; 1 + (vocab_len + 1) + positions + buckets],
        }
    }

    fn indices(&self, situation: &Situation, prefix: &[TokenId]) -> [usize; 4] {
        let prev = prefix.last().copied().unwrap_or(self.vocab_len);
        let pos = prefix.len().min(self.positions - 1);
        let base_pos = 1 + self.vocab_len + 1;
        let base_sit = base_pos + self.positions;
        [0, 1 + prev, base_pos + pos, base_sit + bucket(situation, self.buckets)]
    }
}

impl ValueModel for LinearValue {
    fn value(&self, situation: &Situation, prefix: &[TokenId]) -> f64 {
        self.indices(situation, prefix).iter().map(|&i| self.params[i]).sum()
    }
}

impl Parameterized for LinearValue {
    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }
}

impl TrainableValue for LinearValue {
    fn accumulate_value_grad(&self, situation: &Situation, prefix: &[TokenId], scale: f64, grad: &mut [f64]) {
        for i in self.indices(situation, prefix) {
            grad[i] += scale;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledSequence {
    pub tokens: Vec<TokenId>,
    /// Log-probabilities of each sampled token under the policy itself (before
    /// temperature and nucleus truncation).
    pub log_probs: Vec<f64>,
    /// Decoding stopped at `max_tokens` without emitting end-of-sequence.
    pub truncated: bool,
}

/// Temperature + nucleus sampling distribution derived from log-probabilities.
pub(crate) fn sampling_distribution(log_probs: &[f64], top_p: f64, temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = log_probs.iter().map(|l| l / temperature).collect();
    let probs: Vec<f64> = log_softmax(&scaled).into_iter().map(f64::exp).collect();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    let mut keep = vec![false; probs.len()];
    let mut cum = 0.0;
    for &i in &order {
        keep[i] = true;
        cum += probs[i];
        if cum >= top_p {
            break;
        }
    }
    let total: f64 = probs.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| p).sum();
    probs
        .iter()
        .zip(&keep)
        .map(|(p, k)| if *k { p / total } else { 0.0 })
        .collect()
}

fn draw<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> TokenId {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, p) in dist.iter().enumerate() {
        if *p > 0.0 {
            last = i;
            cum += p;
            if u < cum {
                return i;
            }
        }
    }
    last
}

/// Samples one question, ending at end-of-sequence (included as the final
/// action) or after `max_tokens` actions.
pub fn sample_sequence<R: Rng + ?Sized>(
    policy: &dyn Policy,
    situation: &Situation,
    params: &DecodingParams,
    rng: &mut R,
) -> SampledSequence {
    let eos = policy.vocab().eos();
    let mut tokens = Vec::new();
    let mut log_probs = Vec::new();
    while tokens.len() < params.max_tokens {
        let lp = policy.next_log_probs(situation, &tokens);
        let dist = sampling_distribution(&lp, params.top_p, params.temperature);
        let t = draw(&dist, rng);
        tokens.push(t);
        log_probs.push(lp[t]);
        if t == eos {
            return SampledSequence {
                tokens,
                log_probs,
                truncated: false,
            };
        }
    }
    SampledSequence {
        tokens,
        log_probs,
        truncated: true,
    }
}

/// Per-token log-probabilities of a fixed token sequence.
pub fn rescore(policy: &dyn Policy, situation: &Situation, tokens: &[TokenId]) -> Vec<f64> {
    (0..tokens.len())
        .map(|t| policy.log_prob(situation, &tokens[..t], tokens[t]))
        .collect()
}

/// Adapts a token-level policy to the [`TextGenerator`] interface. The prompt
/// is taken as the situation text; the request seed (default 0) seeds sampling.
#[derive(Debug, Clone)]
pub struct PolicyGenerator<P> {
    pub policy: P,
}

impl<P: Policy> PolicyGenerator<P> {
    pub fn new(policy: P) -> Self {
        Self { policy }
    }
}

impl<P: Policy> TextGenerator for PolicyGenerator<P> {
    fn generate(&self, request: &GenerationRequest) -> Result<Generation> {
        request.params.validate()?;
        let s = Situation::new(request.prompt.clone())
            .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(request.params.seed.unwrap_or(0));
        let seq = sample_sequence(&self.policy, &s, &request.params, &mut rng);
        Ok(Generation {
            text: self.policy.vocab().decode(&seq.tokens),
            truncated: seq.truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::new(["<eos>", "what", "why", "who", "did", "you"], "<eos>").unwrap()
    }

    fn sit() -> Situation {
        Situation::new("offering a cup of coffee").unwrap()
    }

    fn random_policy(seed: u64) -> SoftmaxPolicy {
        let mut p = SoftmaxPolicy::new(vocab(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for x in p.params_mut() {
            *x = rng.random_range(-1.0..1.0);
        }
        p
    }

    #[test]
    fn log_probs_normalize() {
        let p = random_policy(1);
        for prefix in [vec![], vec![1], vec![1, 2, 3]] {
            let total: f64 = p.next_log_probs(&sit(), &prefix).iter().map(|l| l.exp()).sum();
            assert!((total - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn rescoring_reproduces_sampling_path() {
        let p = random_policy(2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let params = DecodingParams::default();
        for _ in 0..20 {
            let seq = sample_sequence(&p, &sit(), &params, &mut rng);
            let again = rescore(&p, &sit(), &seq.tokens);
            for (a, b) in seq.log_probs.iter().zip(&again) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn nucleus_keeps_smallest_covering_set() {
        let lp: Vec<f64> = [0.5f64, 0.3, 0.2].iter().map(|p| p.ln()).collect();
        let d = sampling_distribution(&lp, 0.6, 1.0);
        assert!((d[0] - 0.5 / 0.8).abs() < 1e-12);
        assert!((d[1] - 0.3 / 0.8).abs() < 1e-12);
        assert_eq!(d[2], 0.0);
        let d = sampling_distribution(&lp, 1.0, 1.0);
        assert!((d[2] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn truncation_flagged_at_max_tokens() {
        let v = vocab();
        let p = SoftmaxPolicy::new(v.clone(), 1).with_bias(v.eos(), -50.0);
        let params = DecodingParams {
            max_tokens: 3,
            ..Default::default()
        };
        let seq = sample_sequence(&p, &sit(), &params, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(seq.tokens.len(), 3);
        assert!(seq.truncated);
    }

    #[test]
    fn generator_is_deterministic_given_seed() {
        let g = PolicyGenerator::new(random_policy(4));
        let r = GenerationRequest::new("a situation", DecodingParams::default().with_seed(11));
        assert_eq!(g.generate(&r).unwrap(), g.generate(&r).unwrap());
    }

    fn finite_diff<M: Parameterized + Clone>(m: &M, i: usize, f: impl Fn(&M) -> f64) -> f64 {
        let h = 1e-6;
        let mut a = m.clone();
        a.params_mut()[i] += h;
        let mut b = m.clone();
        b.params_mut()[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let p = random_policy(5);
        let prefix = [1, 4];
        let mut grad = vec![0.0; p.params().len()];
        p.accumulate_log_prob_grad(&sit(), &prefix, 3, 1.0, &mut grad);
        for (i, g) in grad.iter().enumerate() {
            let fd = finite_diff(&p, i, |m| m.log_prob(&sit(), &prefix, 3));
            assert!((g - fd).abs() < 1e-6, "param {i}: {g} vs {fd}");
        }
    }

    #[test]
    fn value_gradient_is_indicator() {
        let mut v = LinearValue::new(6, 4, 2);
        v.params_mut().iter_mut().enumerate().for_each(|(i, x)| *x = i as f64 * 0.1);
        let mut grad = vec![0.0; v.params().len()];
        v.accumulate_value_grad(&sit(), &[2, 2, 2, 2, 2], 2.0, &mut grad);
        assert_eq!(grad.iter().filter(|g| **g == 2.0).count(), 4);
        for (i, g) in grad.iter().enumerate() {
            let fd = finite_diff(&v, i, |m| 2.0 * m.value(&sit(), &[2, 2, 2, 2, 2]));
            assert!((g - fd).abs() < 1e-6);
        }
    }
}
