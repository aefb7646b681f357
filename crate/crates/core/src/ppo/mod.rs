//! Token-level PPO for the question policy.
//!
//! Each question is an episode whose actions are its tokens. The environment
//! reward arrives only at the final token (the standardized defeasibility
//! reward); a per-token KL penalty against the frozen initial policy keeps the
//! trained policy close to where it started. Advantages are truncated GAE
//! estimates, the policy is trained on the clipped surrogate objective and the
//! value model on squared error against `advantage + old value`, with the two
//! losses minimized jointly as `value_coef * value_loss + policy_loss`.

mod config;
mod loss;
mod optim;
mod rollout;
mod train;

pub use config::{KlPlacement, PpoConfig};
pub use loss::{clipped_surrogate, ppo_loss, ppo_loss_and_grad, value_loss, whiten_advantages, LossBreakdown, LossGradient};
pub use optim::Adam;
pub use rollout::{compute_gae, gae_advantages, rollout, Trajectory};
pub use train::{read_log_jsonl, train, write_log_jsonl, Checkpoint, StepLog, TrainOutput, Trainer};

use thiserror::Error;

use crate::backends::BackendError;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("invalid PPO config: {0}")]
    Config(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("empty batch")]
    EmptyBatch,
    #[error("length mismatch: {0} predictions vs {1} targets")]
    LengthMismatch(usize, usize),
    #[error("non-finite loss at step {step}: {breakdown:?}")]
    NonFiniteLoss { step: usize, breakdown: LossBreakdown },
    #[error("no training situations")]
    NoSituations,
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}
