use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_gae, ppo_loss_and_grad, rollout, whiten_advantages, Adam, LossBreakdown, PpoConfig, PpoError, Trajectory};
use crate::backends::policy::{TrainablePolicy, TrainableValue};
use crate::defeasibility::{RewardFn, RewardStats};
use crate::domain::Situation;

/// One record of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub mean_raw_reward: f64,
    pub mean_norm_reward: f64,
    /// Mean over trajectories of the summed per-token KL.
    pub mean_kl: f64,
    /// Losses on the fresh batch, before the first update of the step.
    pub policy_loss: f64,
    pub value_loss: f64,
}

pub fn write_log_jsonl(path: impl AsRef<Path>, log: &[StepLog]) -> Result<(), PpoError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for rec in log {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_log_jsonl(path: impl AsRef<Path>) -> Result<Vec<StepLog>, PpoError> {
    let r = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Checkpoint manifest plus flat parameter blobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub step: usize,
    pub config_hash: String,
    pub reward_stats: RewardStats,
    #[serde(skip)]
    pub policy_params: Vec<f64>,
    #[serde(skip)]
    pub value_params: Vec<f64>,
}

impl Checkpoint {
    const MANIFEST: &'static str = "manifest.json";
    const POLICY: &'static str = "policy.json";
    const VALUE: &'static str = "value.json";

    /// Writes `manifest.json`, `policy.json` and `value.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), PpoError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join(Self::MANIFEST), serde_json::to_vec_pretty(self)?)?;
        fs::write(dir.join(Self::POLICY), serde_json::to_vec(&self.policy_params)?)?;
        fs::write(dir.join(Self::VALUE), serde_json::to_vec(&self.value_params)?)?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, PpoError> {
        let dir = dir.as_ref();
        let mut ck: Checkpoint = serde_json::from_slice(&fs::read(dir.join(Self::MANIFEST))?)?;
        ck.policy_params = serde_json::from_slice(&fs::read(dir.join(Self::POLICY))?)?;
        ck.value_params = serde_json::from_slice(&fs::read(dir.join(Self::VALUE))?)?;
        Ok(ck)
    }

    /// Copies the stored parameters into models of matching shape.
    pub fn restore<P: TrainablePolicy, V: TrainableValue>(&self, policy: &mut P, value: &mut V) -> Result<(), PpoError> {
        if policy.params().len() != self.policy_params.len() {
            return Err(PpoError::LengthMismatch(self.policy_params.len(), policy.params().len()));
        }
        if value.params().len() != self.value_params.len() {
            return Err(PpoError::LengthMismatch(self.value_params.len(), value.params().len()));
        }
        policy.params_mut().copy_from_slice(&self.policy_params);
        value.params_mut().copy_from_slice(&self.value_params);
        Ok(())
    }
}

/// PPO training state. The reference policy is a frozen copy of the initial
/// policy; the behavior policy for each step is the policy as it stood when
/// the step's rollouts were sampled.
pub struct Trainer<P: TrainablePolicy, V: TrainableValue> {
    pub policy: P,
    pub value: V,
    reference: P,
    cfg: PpoConfig,
    stats: RewardStats,
    policy_opt: Adam,
    value_opt: Adam,
    rng: ChaCha8Rng,
    step: usize,
}

impl<P: TrainablePolicy, V: TrainableValue> Trainer<P, V> {
    pub fn new(policy: P, value: V, cfg: PpoConfig, stats: RewardStats, seed: u64) -> Result<Self, PpoError> {
        cfg.validate()?;
        Ok(Self {
            policy_opt: Adam::new(policy.params().len(), cfg.learning_rate),
            value_opt: Adam::new(value.params().len(), cfg.learning_rate),
            reference: policy.clone(),
            policy,
            value,
            cfg,
            stats,
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
        })
    }

    pub fn reference(&self) -> &P {
        &self.reference
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// Samples `batch_size` situations with replacement and rolls them out.
    pub fn collect(&mut self, situations: &[Situation], reward: &dyn RewardFn) -> Result<Vec<Trajectory>, PpoError> {
        if situations.is_empty() {
            return Err(PpoError::NoSituations);
        }
        let mut batch = Vec::with_capacity(self.cfg.batch_size);
        for _ in 0..self.cfg.batch_size {
            let s = &situations[self.rng.random_range(0..situations.len())];
            let mut traj = rollout(
                &self.policy,
                &self.reference,
                &self.value,
                s,
                &self.cfg,
                reward,
                &self.stats,
                &mut self.rng,
            )?;
            compute_gae(&mut traj, &self.cfg);
            batch.push(traj);
        }
        if self.cfg.whiten_advantages {
            whiten_advantages(&mut batch);
        }
        Ok(batch)
    }

    /// One outer iteration: rollouts, then `inner_epochs` optimizer steps on
    /// the joint loss.
    pub fn step(&mut self, situations: &[Situation], reward: &dyn RewardFn) -> Result<StepLog, PpoError> {
        let batch = self.collect(situations, reward)?;
        let mut first: Option<LossBreakdown> = None;
        for _ in 0..self.cfg.inner_epochs {
            let g = ppo_loss_and_grad(&batch, &self.policy, &self.value, &self.cfg)?;
            if !g.loss.is_finite() || g.policy_grad.iter().chain(&g.value_grad).any(|x| !x.is_finite()) {
                log::error!("non-finite loss at step {}: {:?}", self.step, g.loss);
                return Err(PpoError::NonFiniteLoss {
                    step: self.step,
                    breakdown: g.loss,
                });
            }
            first.get_or_insert(g.loss);
            self.policy_opt.step(self.policy.params_mut(), &g.policy_grad);
            self.value_opt.step(self.value.params_mut(), &g.value_grad);
        }
        let loss = first.expect("inner_epochs >= 1");
        let n = batch.len() as f64;
        let rec = StepLog {
            step: self.step,
            mean_raw_reward: batch.iter().map(|t| t.raw_reward).sum::<f64>() / n,
            mean_norm_reward: batch.iter().map(|t| t.terminal_reward).sum::<f64>() / n,
            mean_kl: batch.iter().map(Trajectory::total_kl).sum::<f64>() / n,
            policy_loss: loss.policy,
            value_loss: loss.value,
        };
        log::debug!("{rec:?}");
        self.step += 1;
        Ok(rec)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            config_hash: self.cfg.config_hash(),
            reward_stats: self.stats,
            policy_params: self.policy.params().to_vec(),
            value_params: self.value.params().to_vec(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput<P, V> {
    pub policy: P,
    pub value: V,
    pub log: Vec<StepLog>,
}

/// Runs `cfg.total_steps` outer iterations from a fresh [`Trainer`].
pub fn train<P: TrainablePolicy, V: TrainableValue>(
    situations: &[Situation],
    policy: P,
    value: V,
    reward: &dyn RewardFn,
    stats: RewardStats,
    cfg: &PpoConfig,
    seed: u64,
) -> Result<TrainOutput<P, V>, PpoError> {
    let mut trainer = Trainer::new(policy, value, cfg.clone(), stats, seed)?;
    let mut log = Vec::with_capacity(cfg.total_steps);
    for _ in 0..cfg.total_steps {
        log.push(trainer.step(situations, reward)?);
    }
    Ok(TrainOutput {
        policy: trainer.policy,
        value: trainer.value,
        log,
    })
}
