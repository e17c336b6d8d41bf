//! Proximal policy optimization with a clipped surrogate objective.
//!
//! Actor and critic are separate tanh networks. Rollouts are collected with
//! the current policy, advantages come from generalized advantage estimation,
//! and the policy is then optimized for several epochs over shuffled
//! minibatches while ratios are measured against the sampling-time
//! log-probabilities.

mod checkpoint;
mod gae;
mod loss;
pub mod network;
mod optim;
mod policy;
mod rollout;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::ConfigError;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint,
    CheckpointError, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gae::compute_gae;
pub use loss::{
    clipped_surrogate, gradient_check, ppo_gradient_check, ppo_loss, LossOutput, Minibatch,
};
pub use optim::{update, Optimizer, UpdateStats};
pub use policy::{
    greedy_action, log_probabilities, policy_forward, probability_ratio, sample_action,
    PolicyParams,
};
pub use rollout::{collect_rollout, Actor, RolloutBuffer, Segment};
pub use trainer::{
    write_metrics_csv, IterationMetrics, OutcomeWindow, TrainError, Trainer, TrainerState,
    METRICS_CSV_HEADER, TRAILING_WINDOW,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain gradient descent.
    Sgd,
    /// Adam with default moment decay rates.
    Adam,
}

/// PPO hyperparameters. Defaults are the basic-experiment settings except
/// for the network width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    /// Minibatch size M.
    pub batch_size: usize,
    /// Transitions collected per update, across all actors.
    pub buffer_size: usize,
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    /// Training budget in environment steps.
    pub max_steps: u64,
    /// Nominal entropy coefficient; recorded in run manifests, not applied.
    pub beta: f64,
    /// Entropy coefficient actually applied.
    pub beta_eff: f64,
    pub epochs: usize,
    pub value_loss_coef: f64,
    pub num_actors: usize,
    pub hidden_width: usize,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub optimizer: OptimizerKind,
    pub seed: u64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            batch_size: 5120,
            buffer_size: 102_400,
            clip_epsilon: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: 3.0e-4,
            max_steps: 50_000_000,
            beta: 500.0,
            beta_eff: 5.0e-3,
            epochs: 3,
            value_loss_coef: 0.5,
            num_actors: 1,
            hidden_width: 64,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            optimizer: OptimizerKind::Sgd,
            seed: 0,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(ConfigError::invalid("ppo.gamma", "must be in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(ConfigError::invalid("ppo.gae_lambda", "must be in [0, 1]"));
        }
        if !(self.clip_epsilon > 0.0) {
            return Err(ConfigError::invalid("ppo.clip_epsilon", "must be > 0"));
        }
        if self.batch_size < 1 {
            return Err(ConfigError::invalid("ppo.batch_size", "must be >= 1"));
        }
        if self.batch_size > self.buffer_size {
            return Err(ConfigError::invalid("ppo.batch_size", "must be <= ppo.buffer_size"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(ConfigError::invalid("ppo.learning_rate", "must be a finite value >= 0"));
        }
        if self.epochs < 1 {
            return Err(ConfigError::invalid("ppo.epochs", "must be >= 1"));
        }
        if self.num_actors < 1 {
            return Err(ConfigError::invalid("ppo.num_actors", "must be >= 1"));
        }
        if self.buffer_size % self.num_actors != 0 {
            return Err(ConfigError::invalid(
                "ppo.buffer_size",
                "must be a multiple of ppo.num_actors",
            ));
        }
        if self.hidden_width < 1 {
            return Err(ConfigError::invalid("ppo.hidden_width", "must be >= 1"));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(ConfigError::invalid("ppo.max_grad_norm", "must be > 0"));
        }
        for (field, value) in [
            ("ppo.beta_eff", self.beta_eff),
            ("ppo.value_loss_coef", self.value_loss_coef),
        ] {
            if !(value >= 0.0) {
                return Err(ConfigError::invalid(field, "must be >= 0"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PpoError {
    #[error("observation has {actual} features, network expects {expected}")]
    Shape { expected: usize, actual: usize },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("empty minibatch")]
    EmptyMinibatch,
    #[error("advantages have not been computed")]
    MissingAdvantages,
}
