//! Training loop: collect, estimate advantages, update, repeat.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::optim::{update, Optimizer};
use super::rollout::{collect_rollout, Actor, RolloutBuffer};
use super::{Checkpoint, PolicyParams, PpoError};
use crate::config::RunConfig;
use crate::env::EnvError;
use crate::error::ConfigError;

/// Outcomes of the most recent glasses that left the cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeWindow {
    capacity: usize,
    outcomes: VecDeque<bool>,
    successes: usize,
}

impl OutcomeWindow {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, outcomes: VecDeque::with_capacity(capacity), successes: 0 }
    }

    pub fn push(&mut self, success: bool) {
        if self.outcomes.len() == self.capacity {
            if self.outcomes.pop_front() == Some(true) {
                self.successes -= 1;
            }
        }
        self.outcomes.push_back(success);
        if success {
            self.successes += 1;
        }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.outcomes.len() == self.capacity
    }

    pub fn successes(&self) -> usize {
        self.successes
    }

    pub fn failures(&self) -> usize {
        self.outcomes.len() - self.successes
    }

    /// Whether successes reach `ratio` times the failures.
    pub fn ratio_at_least(&self, ratio: f64) -> bool {
        self.successes as f64 >= ratio * self.failures() as f64
    }
}

pub const TRAILING_WINDOW: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub env_steps: u64,
    /// Mean per-step reward of the iteration's rollout.
    pub mean_reward: f64,
    pub success_count: u64,
    pub drop_count: u64,
    pub break_count: u64,
    pub loss: f64,
    pub entropy: f64,
    pub incomplete_count: u64,
    pub trailing_successes: usize,
    pub trailing_failures: usize,
}

pub const METRICS_CSV_HEADER: [&str; 11] = [
    "iteration",
    "env_steps",
    "mean_reward",
    "success_count",
    "drop_count",
    "break_count",
    "loss",
    "entropy",
    "incomplete_count",
    "trailing_successes",
    "trailing_failures",
];

impl IterationMetrics {
    pub fn record(&self) -> [String; 11] {
        [
            self.iteration.to_string(),
            self.env_steps.to_string(),
            self.mean_reward.to_string(),
            self.success_count.to_string(),
            self.drop_count.to_string(),
            self.break_count.to_string(),
            self.loss.to_string(),
            self.entropy.to_string(),
            self.incomplete_count.to_string(),
            self.trailing_successes.to_string(),
            self.trailing_failures.to_string(),
        ]
    }
}

/// Writes rows; the header only when `header` is set (for appending).
pub fn write_metrics_csv<W: Write>(
    rows: &[IterationMetrics],
    header: bool,
    writer: W,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(writer);
    if header {
        out.write_record(METRICS_CSV_HEADER)?;
    }
    for row in rows {
        out.write_record(row.record())?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error("trainer state: {0}")]
    State(#[from] serde_json::Error),
}

/// Everything needed to continue training bit-identically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trainer {
    pub config: RunConfig,
    pub seed: u64,
    pub iteration: u64,
    pub env_steps: u64,
    pub params: PolicyParams,
    pub optimizer: Optimizer,
    pub actors: Vec<Actor>,
    rng: ChaCha8Rng,
    pub window: OutcomeWindow,
    /// Full trailing window (successes, failures) with the best ratio so far.
    pub best_window: Option<(usize, usize)>,
}

pub type TrainerState = Trainer;

impl Trainer {
    pub fn new(config: RunConfig, seed: u64) -> Result<Self, TrainError> {
        config.validate()?;
        let env_config = config.env_config();
        let obs_len = env_config.observation_len();
        let actions = env_config.action_count();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = PolicyParams::init(obs_len, actions, config.ppo.hidden_width, &mut rng);
        let actors = (0..config.ppo.num_actors)
            .map(|_| Actor::new(env_config.clone(), rng.gen()))
            .collect::<Result<Vec<_>, _>>()?;
        let optimizer = Optimizer::new(config.ppo.optimizer, params.num_params());
        Ok(Self {
            config,
            seed,
            iteration: 0,
            env_steps: 0,
            params,
            optimizer,
            actors,
            rng,
            window: OutcomeWindow::new(TRAILING_WINDOW),
            best_window: None,
        })
    }

    /// Steps each actor collects in the next iteration; the last iteration is
    /// shortened so the budget is never exceeded.
    fn steps_per_actor(&self) -> usize {
        let ppo = &self.config.ppo;
        let remaining = ppo.max_steps.saturating_sub(self.env_steps) as usize;
        (ppo.buffer_size / ppo.num_actors).min(remaining / ppo.num_actors)
    }

    pub fn is_done(&self) -> bool {
        self.steps_per_actor() == 0
    }

    fn collect(&mut self) -> Result<RolloutBuffer, PpoError> {
        let per_actor = self.steps_per_actor();
        let params = &self.params;
        let buffers: Vec<Result<RolloutBuffer, PpoError>> = if self.actors.len() == 1 {
            vec![collect_rollout(&mut self.actors[0], params, per_actor)]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = self
                    .actors
                    .iter_mut()
                    .map(|actor| scope.spawn(move || collect_rollout(actor, params, per_actor)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("rollout thread panicked")).collect()
            })
        };
        let mut merged = RolloutBuffer::new(self.params.obs_len());
        for buffer in buffers {
            merged.append(buffer?);
        }
        Ok(merged)
    }

    /// One rollout and one update.
    pub fn iterate(&mut self) -> Result<IterationMetrics, TrainError> {
        let mut buffer = self.collect()?;
        let ppo = &self.config.ppo;
        buffer.compute_advantages(ppo.gamma, ppo.gae_lambda)?;
        let stats = update(&mut self.params, &mut self.optimizer, &buffer, ppo, &mut self.rng)?;
        for &outcome in &buffer.outcomes {
            self.window.push(outcome);
        }
        if self.window.is_full() {
            let current = (self.window.successes(), self.window.failures());
            let ratio = |(s, f): (usize, usize)| s as f64 / f as f64;
            let better = self.best_window.map_or(true, |best| ratio(current) > ratio(best));
            if better {
                self.best_window = Some(current);
            }
        }
        self.iteration += 1;
        self.env_steps += buffer.len() as u64;
        Ok(IterationMetrics {
            iteration: self.iteration,
            env_steps: self.env_steps,
            mean_reward: buffer.total_reward() / buffer.len() as f64,
            success_count: buffer.successes,
            drop_count: buffer.drops,
            break_count: buffer.breaks,
            loss: stats.loss,
            entropy: stats.entropy,
            incomplete_count: buffer.incompletes,
            trailing_successes: self.window.successes(),
            trailing_failures: self.window.failures(),
        })
    }

    /// Iterates until the step budget is spent, handing each row to `sink`.
    pub fn run(
        &mut self,
        mut sink: impl FnMut(&Trainer, &IterationMetrics),
    ) -> Result<Vec<IterationMetrics>, TrainError> {
        let mut rows = Vec::new();
        while !self.is_done() {
            let row = self.iterate()?;
            sink(self, &row);
            rows.push(row);
        }
        Ok(rows)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            config: self.config.clone(),
            training_steps: self.env_steps,
        }
    }

    pub fn to_json(&self) -> Result<String, TrainError> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, TrainError> {
        Ok(serde_json::from_str(text)?)
    }
}
