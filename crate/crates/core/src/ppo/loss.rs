use serde::{Deserialize, Serialize};

use super::{KlPlacement, PpoConfig, PpoError, Trajectory};
use crate::backends::policy::{Policy, TrainablePolicy, TrainableValue, ValueModel};

/// `min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)`; maximized by PPO.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip_eps: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip_eps, 1.0 + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Mean squared error.
pub fn value_loss(predicted: &[f64], targets: &[f64]) -> Result<f64, PpoError> {
    if predicted.len() != targets.len() {
        return Err(PpoError::LengthMismatch(predicted.len(), targets.len()));
    }
    if predicted.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    Ok(predicted
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / predicted.len() as f64)
}

/// Standardizes advantages across every token of the batch. A batch with zero
/// spread is only centered.
pub fn whiten_advantages(batch: &mut [Trajectory]) {
    let n: usize = batch.iter().map(|t| t.advantages.len()).sum();
    if n == 0 {
        return;
    }
    let mean = batch.iter().flat_map(|t| &t.advantages).sum::<f64>() / n as f64;
    let var = batch
        .iter()
        .flat_map(|t| &t.advantages)
        .map(|a| (a - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    let sd = var.sqrt();
    let scale = if sd > 1e-8 { 1.0 / sd } else { 1.0 };
    for t in batch.iter_mut() {
        for a in &mut t.advantages {
            *a = (*a - mean) * scale;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    /// KL term, nonzero only with [`KlPlacement::Loss`].
    pub kl: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.policy.is_finite() && self.value.is_finite() && self.kl.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossGradient {
    pub loss: LossBreakdown,
    pub policy_grad: Vec<f64>,
    pub value_grad: Vec<f64>,
}

fn check_batch(batch: &[Trajectory]) -> Result<usize, PpoError> {
    let n: usize = batch.iter().map(Trajectory::len).sum();
    if batch.is_empty() || n == 0 {
        return Err(PpoError::EmptyBatch);
    }
    for t in batch {
        if t.advantages.len() != t.len() {
            return Err(PpoError::LengthMismatch(t.advantages.len(), t.len()));
        }
        if t.returns.len() != t.len() {
            return Err(PpoError::LengthMismatch(t.returns.len(), t.len()));
        }
    }
    Ok(n)
}

/// Joint PPO loss over every token of the batch:
/// `total = value_coef * value + policy (+ kl)` with
/// `policy = -mean clipped_surrogate(exp(logp - logp_behavior), A, eps)` and
/// `value = mean (V - returns)^2`. Advantages are used as stored; whiten them
/// beforehand if desired.
pub fn ppo_loss(
    batch: &[Trajectory],
    policy: &dyn Policy,
    value: &dyn ValueModel,
    cfg: &PpoConfig,
) -> Result<LossBreakdown, PpoError> {
    let n = check_batch(batch)? as f64;
    let (mut pol, mut val, mut kl) = (0.0, 0.0, 0.0);
    for traj in batch {
        let s = &traj.situation;
        for t in 0..traj.len() {
            let prefix = &traj.tokens[..t];
            let lp = policy.log_prob(s, prefix, traj.tokens[t]);
            let ratio = (lp - traj.logprobs_behavior[t]).exp();
            pol -= clipped_surrogate(ratio, traj.advantages[t], cfg.clip_eps);
            val += (value.value(s, prefix) - traj.returns[t]).powi(2);
            if cfg.kl_placement == KlPlacement::Loss {
                kl += cfg.kl_coef * (lp - traj.logprobs_reference[t]);
            }
        }
    }
    let (pol, val, kl) = (pol / n, val / n, kl / n);
    Ok(LossBreakdown {
        total: cfg.value_coef * val + pol + kl,
        policy: pol,
        value: val,
        kl,
    })
}

/// [`ppo_loss`] together with its gradient with respect to the policy and
/// value parameters.
pub fn ppo_loss_and_grad<P: TrainablePolicy, V: TrainableValue>(
    batch: &[Trajectory],
    policy: &P,
    value: &V,
    cfg: &PpoConfig,
) -> Result<LossGradient, PpoError> {
    let n = check_batch(batch)? as f64;
    let mut policy_grad = vec![0.0; policy.params().len()];
    let mut value_grad = vec![0.0; value.params().len()];
    let (mut pol, mut val, mut kl) = (0.0, 0.0, 0.0);
    for traj in batch {
        let s = &traj.situation;
        for t in 0..traj.len() {
            let prefix = &traj.tokens[..t];
            let token = traj.tokens[t];
            let lp = policy.log_prob(s, prefix, token);
            let ratio = (lp - traj.logprobs_behavior[t]).exp();
            let adv = traj.advantages[t];
            let unclipped = ratio * adv;
            let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
            // d(-objective)/d(logp): the unclipped branch contributes ratio * A;
            // the clipped branch is flat in the policy.
            let mut dlp = if unclipped <= clipped { -unclipped / n } else { 0.0 };
            pol -= unclipped.min(clipped);
            if cfg.kl_placement == KlPlacement::Loss {
                kl += cfg.kl_coef * (lp - traj.logprobs_reference[t]);
                dlp += cfg.kl_coef / n;
            }
            if dlp != 0.0 {
                policy.accumulate_log_prob_grad(s, prefix, token, dlp, &mut policy_grad);
            }
            let err = value.value(s, prefix) - traj.returns[t];
            val += err * err;
            value.accumulate_value_grad(s, prefix, cfg.value_coef * 2.0 * err / n, &mut value_grad);
        }
    }
    let (pol, val, kl) = (pol / n, val / n, kl / n);
    Ok(LossGradient {
        loss: LossBreakdown {
            total: cfg.value_coef * val + pol + kl,
            policy: pol,
            value: val,
            kl,
        },
        policy_grad,
        value_grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::policy::{LinearValue, Parameterized, SoftmaxPolicy, Vocab};
    use crate::domain::Situation;
    use proptest::prelude::*;

    #[test]
    fn surrogate_examples() {
        assert_eq!(clipped_surrogate(1.0, 2.0, 0.3), 2.0);
        assert!((clipped_surrogate(1.5, 1.0, 0.2) - 1.2).abs() < 1e-15);
        assert!((clipped_surrogate(0.5, -1.0, 0.2) + 0.8).abs() < 1e-15);
    }

    #[test]
    fn value_loss_examples() {
        assert_eq!(value_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(value_loss(&[0.0], &[2.0]).unwrap(), 4.0);
        assert_eq!(value_loss(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(matches!(value_loss(&[1.0], &[1.0, 2.0]), Err(PpoError::LengthMismatch(1, 2))));
    }

    fn setup() -> (SoftmaxPolicy, LinearValue, Situation) {
        let vocab = Vocab::new(["<eos>", "why", "who"], "<eos>").unwrap();
        let mut p = SoftmaxPolicy::new(vocab, 1);
        p.params_mut().iter_mut().enumerate().for_each(|(i, x)| *x = (i as f64 * 0.37).sin());
        (p, LinearValue::new(3, 3, 1), Situation::new("s").unwrap())
    }

    fn traj(s: &Situation, tokens: Vec<usize>, lpb: Vec<f64>, adv: Vec<f64>, returns: Vec<f64>) -> Trajectory {
        let n = tokens.len();
        Trajectory {
            situation: s.clone(),
            tokens,
            question: String::new(),
            truncated: false,
            logprobs_behavior: lpb,
            logprobs_reference: vec![0.0; n],
            values: vec![0.0; n],
            raw_reward: 0.0,
            terminal_reward: 0.0,
            kl_penalties: vec![0.0; n],
            rewards: vec![0.0; n],
            advantages: adv,
            returns,
        }
    }

    #[test]
    fn on_policy_whitened_loss_is_zero() {
        let (p, v, s) = setup();
        let tokens = vec![1, 2, 0];
        let lp = crate::backends::policy::rescore(&p, &s, &tokens);
        let mut batch = vec![
            traj(&s, tokens.clone(), lp.clone(), vec![0.3, -1.0, 2.0], vec![0.0; 3]),
            traj(&s, tokens, lp, vec![0.5, 0.1, -0.7], vec![0.0; 3]),
        ];
        whiten_advantages(&mut batch);
        let cfg = PpoConfig::default();
        let l = ppo_loss(&batch, &p, &v, &cfg).unwrap();
        assert!(l.policy.abs() < 1e-12);
        let cfg0 = PpoConfig { value_coef: 0.0, ..Default::default() };
        let l = ppo_loss(&batch, &p, &v, &cfg0).unwrap();
        assert_eq!(l.total, l.policy);
    }

    #[test]
    fn composed_single_token_loss() {
        let (p, v, s) = setup();
        let lp = p.log_prob(&s, &[], 1);
        let t = traj(&s, vec![1], vec![lp - 1.5f64.ln()], vec![1.0], vec![0.0]);
        let cfg = PpoConfig { value_coef: 1.0, ..Default::default() };
        let l = ppo_loss(&[t], &p, &v, &cfg).unwrap();
        assert!((l.total + 1.2).abs() < 1e-12, "{l:?}");
    }

    #[test]
    fn empty_batch_rejected() {
        let (p, v, _) = setup();
        assert!(matches!(ppo_loss(&[], &p, &v, &PpoConfig::default()), Err(PpoError::EmptyBatch)));
    }

    #[test]
    fn grad_path_agrees_with_loss_path() {
        let (p, v, s) = setup();
        let batch = vec![traj(&s, vec![2, 1, 0], vec![-1.0, -0.5, -2.0], vec![0.4, -0.3, 1.1], vec![0.2, 0.1, 0.9])];
        for placement in [KlPlacement::Reward, KlPlacement::Loss] {
            let cfg = PpoConfig { kl_placement: placement, ..Default::default() };
            let a = ppo_loss(&batch, &p, &v, &cfg).unwrap();
            let b = ppo_loss_and_grad(&batch, &p, &v, &cfg).unwrap().loss;
            assert!((a.total - b.total).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn surrogate_is_lower_bound(ratio in 1e-3f64..10.0, adv in -5.0f64..5.0, eps in 0.01f64..0.9) {
            prop_assert!(clipped_surrogate(ratio, adv, eps) <= ratio * adv);
        }
    }
}
