use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PpoError;
use crate::backends::{DecodingParams, DEFAULT_TEMPERATURE, DEFAULT_TOP_P};

/// Where the KL penalty against the initial policy enters the objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlPlacement {
    /// Folded into per-token rewards: `r_t -= kl_coef * kl_t`.
    Reward,
    /// Added to the loss: `kl_coef * mean_t(log pi(a_t) - log pi_init(a_t))`.
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    /// Reward decay.
    pub gamma: f64,
    /// GAE interpolation.
    pub lam: f64,
    pub clip_eps: f64,
    /// Weight of the value loss in the joint loss.
    pub value_coef: f64,
    pub kl_coef: f64,
    pub kl_placement: KlPlacement,
    pub whiten_advantages: bool,
    pub batch_size: usize,
    pub total_steps: usize,
    pub inner_epochs: usize,
    pub max_question_tokens: usize,
    pub learning_rate: f64,
    pub top_p: f64,
    pub temperature: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            lam: 0.95,
            clip_eps: 0.2,
            value_coef: 0.5,
            kl_coef: 0.2,
            kl_placement: KlPlacement::Reward,
            whiten_advantages: true,
            batch_size: 64,
            total_steps: 6000,
            inner_epochs: 4,
            max_question_tokens: 32,
            learning_rate: 1e-5,
            top_p: DEFAULT_TOP_P,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: String| Err(PpoError::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma must be in [0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.lam) {
            return bad(format!("lam must be in [0, 1], got {}", self.lam));
        }
        if self.clip_eps.is_nan() || self.clip_eps <= 0.0 {
            return bad(format!("clip_eps must be > 0, got {}", self.clip_eps));
        }
        if self.value_coef.is_nan() || self.value_coef < 0.0 {
            return bad(format!("value_coef must be >= 0, got {}", self.value_coef));
        }
        if self.kl_coef.is_nan() || self.kl_coef < 0.0 {
            return bad(format!("kl_coef must be >= 0, got {}", self.kl_coef));
        }
        if self.batch_size == 0 || self.inner_epochs == 0 || self.max_question_tokens == 0 {
            return bad("batch_size, inner_epochs and max_question_tokens must be >= 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        self.decoding(None)
            .validate()
            .map_err(|e| PpoError::Config(e.to_string()))
    }

    /// Decoding parameters used for rollouts.
    pub fn decoding(&self, seed: Option<u64>) -> DecodingParams {
        DecodingParams {
            max_tokens: self.max_question_tokens,
            top_p: self.top_p,
            temperature: self.temperature,
            seed,
        }
    }

    /// Hex SHA-256 of the JSON-serialized config.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
