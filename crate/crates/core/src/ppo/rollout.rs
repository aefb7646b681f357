use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{KlPlacement, PpoConfig, PpoError};
use crate::backends::policy::{rescore, sample_sequence, Policy, TokenId, ValueModel};
use crate::defeasibility::{normalize_reward, RewardFn, RewardStats};
use crate::domain::{Question, Situation};

/// One question-generation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub situation: Situation,
    pub tokens: Vec<TokenId>,
    pub question: String,
    pub truncated: bool,
    /// Log-probabilities of the sampled tokens under the policy that sampled them.
    pub logprobs_behavior: Vec<f64>,
    /// Log-probabilities under the frozen initial policy.
    pub logprobs_reference: Vec<f64>,
    /// `V(s_t)` under the value model at rollout time.
    pub values: Vec<f64>,
    pub raw_reward: f64,
    /// Standardized defeasibility reward for the finished question.
    pub terminal_reward: f64,
    /// Per-token `logprob_behavior - logprob_reference`.
    pub kl_penalties: Vec<f64>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn total_kl(&self) -> f64 {
        self.kl_penalties.iter().sum()
    }

    /// Fills per-token rewards from the terminal reward and KL penalties.
    pub fn shape_rewards(&mut self, kl_coef: f64, placement: KlPlacement) {
        let last = self.len() - 1;
        self.rewards = self
            .kl_penalties
            .iter()
            .enumerate()
            .map(|(t, kl)| {
                let penalty = match placement {
                    KlPlacement::Reward => -kl_coef * kl,
                    KlPlacement::Loss => 0.0,
                };
                if t == last {
                    self.terminal_reward + penalty
                } else {
                    penalty
                }
            })
            .collect();
    }
}

/// Samples a question, scores it, and fills rewards. Advantages and returns
/// are left empty; see [`compute_gae`].
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng + ?Sized>(
    policy: &dyn Policy,
    reference: &dyn Policy,
    value: &dyn ValueModel,
    situation: &Situation,
    cfg: &PpoConfig,
    reward: &dyn RewardFn,
    stats: &RewardStats,
    rng: &mut R,
) -> Result<Trajectory, PpoError> {
    let seq = sample_sequence(policy, situation, &cfg.decoding(None), rng);
    let question = policy.vocab().decode(&seq.tokens);
    let logprobs_reference = rescore(reference, situation, &seq.tokens);
    let values = (0..seq.tokens.len())
        .map(|t| value.value(situation, &seq.tokens[..t]))
        .collect();
    let kl_penalties = seq
        .log_probs
        .iter()
        .zip(&logprobs_reference)
        .map(|(cur, init)| cur - init)
        .collect();
    let raw_reward = reward.raw_reward(situation, &Question::new(question.clone()))?;
    let mut traj = Trajectory {
        situation: situation.clone(),
        tokens: seq.tokens,
        question,
        truncated: seq.truncated,
        logprobs_behavior: seq.log_probs,
        logprobs_reference,
        values,
        raw_reward,
        terminal_reward: normalize_reward(raw_reward, stats),
        kl_penalties,
        rewards: Vec::new(),
        advantages: Vec::new(),
        returns: Vec::new(),
    };
    traj.shape_rewards(cfg.kl_coef, cfg.kl_placement);
    Ok(traj)
}

/// Truncated GAE by backward recursion, with `V(s_T) = 0` after the last token:
/// `A_t = delta_t + gamma * lam * A_{t+1}`, `delta_t = r_t + gamma V_{t+1} - V_t`.
pub fn gae_advantages(rewards: &[f64], values: &[f64], gamma: f64, lam: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len());
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lam * running;
        adv[t] = running;
    }
    adv
}

/// Fills `advantages` and `returns = advantages + values`.
pub fn compute_gae(traj: &mut Trajectory, cfg: &PpoConfig) {
    traj.advantages = gae_advantages(&traj.rewards, &traj.values, cfg.gamma, cfg.lam);
    traj.returns = traj
        .advantages
        .iter()
        .zip(&traj.values)
        .map(|(a, v)| a + v)
        .collect();
}
