use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::log_softmax;
use super::policy::sample_action;
use super::{compute_gae, PolicyParams, PpoError};
use crate::env::{EnvError, FabEnv};
use crate::world::EventKind;

/// A run of consecutive transitions with no reset inside; `bootstrap` is
/// the critic's value of the state that follows the last transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub bootstrap: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RolloutBuffer {
    pub obs_len: usize,
    observations: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub segments: Vec<Segment>,
    pub advantages: Option<Vec<f64>>,
    pub returns: Option<Vec<f64>>,
    pub successes: u64,
    pub drops: u64,
    pub breaks: u64,
    pub incompletes: u64,
    /// Outcome of every glass that left the cell, in order: true for a
    /// processed arrival.
    pub outcomes: Vec<bool>,
}

impl RolloutBuffer {
    pub fn new(obs_len: usize) -> Self {
        Self { obs_len, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn observation(&self, i: usize) -> &[f64] {
        &self.observations[i * self.obs_len..(i + 1) * self.obs_len]
    }

    pub fn push(&mut self, obs: &[f64], action: usize, reward: f64, value: f64, log_prob: f64) {
        self.observations.extend_from_slice(obs);
        self.actions.push(action);
        self.rewards.push(reward);
        self.values.push(value);
        self.log_probs.push(log_prob);
    }

    /// Closes the open segment (transitions since the last closed one).
    pub fn close_segment(&mut self, bootstrap: f64) {
        let start = self.segments.last().map_or(0, |s| s.end);
        if start < self.len() {
            self.segments.push(Segment { start, end: self.len(), bootstrap });
        }
    }

    pub fn append(&mut self, mut other: RolloutBuffer) {
        let offset = self.len();
        self.observations.append(&mut other.observations);
        self.actions.append(&mut other.actions);
        self.rewards.append(&mut other.rewards);
        self.values.append(&mut other.values);
        self.log_probs.append(&mut other.log_probs);
        self.segments.extend(other.segments.iter().map(|s| Segment {
            start: s.start + offset,
            end: s.end + offset,
            bootstrap: s.bootstrap,
        }));
        self.successes += other.successes;
        self.drops += other.drops;
        self.breaks += other.breaks;
        self.incompletes += other.incompletes;
        self.outcomes.append(&mut other.outcomes);
        self.advantages = None;
        self.returns = None;
    }

    /// GAE over each segment independently.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) -> Result<(), PpoError> {
        let mut advantages = vec![0.0; self.len()];
        let mut returns = vec![0.0; self.len()];
        for seg in &self.segments {
            let (a, r) = compute_gae(
                &self.rewards[seg.start..seg.end],
                &self.values[seg.start..seg.end],
                seg.bootstrap,
                gamma,
                lambda,
            )?;
            advantages[seg.start..seg.end].copy_from_slice(&a);
            returns[seg.start..seg.end].copy_from_slice(&r);
        }
        self.advantages = Some(advantages);
        self.returns = Some(returns);
        Ok(())
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// One environment instance with its own random stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Actor {
    pub env: FabEnv,
    pub obs: Vec<f64>,
    pub rng: ChaCha8Rng,
}

impl Actor {
    pub fn new(env_config: crate::env::EnvConfig, seed: u64) -> Result<Self, EnvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = FabEnv::new(env_config, rng.gen())?;
        let obs = env.reset(rng.gen());
        Ok(Self { env, obs, rng })
    }
}

/// Runs the stochastic policy for `steps` macro-steps. A horizon truncation
/// closes the current segment with the critic's value of the final state and
/// resets the environment with a seed from the actor's stream.
pub fn collect_rollout(
    actor: &mut Actor,
    params: &PolicyParams,
    steps: usize,
) -> Result<RolloutBuffer, PpoError> {
    let mut buffer = RolloutBuffer::new(params.obs_len());
    if actor.obs.len() != params.obs_len() {
        return Err(PpoError::Shape { expected: params.obs_len(), actual: actor.obs.len() });
    }
    for _ in 0..steps {
        let log_p = log_softmax(&params.actor.forward(&actor.obs));
        let probs: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
        let value = params.critic.forward(&actor.obs)[0];
        let action = sample_action(&probs, &mut actor.rng);
        let result = actor.env.step(action).expect("sampled action is in range");
        buffer.push(&actor.obs, action, result.reward, value, log_p[action]);
        for event in &result.events {
            match event.kind {
                EventKind::GlassUnloaded { processed: true, .. } => {
                    buffer.successes += 1;
                    buffer.outcomes.push(true);
                }
                EventKind::GlassUnloaded { processed: false, .. } => {
                    buffer.incompletes += 1;
                    buffer.outcomes.push(false);
                }
                EventKind::GlassDropped { .. } => {
                    buffer.drops += 1;
                    buffer.outcomes.push(false);
                }
                EventKind::GlassBroken { .. } => {
                    buffer.breaks += 1;
                    buffer.outcomes.push(false);
                }
                _ => {}
            }
        }
        if result.done {
            let bootstrap = params.critic.forward(&result.observation)[0];
            buffer.close_segment(bootstrap);
            let seed = actor.rng.gen();
            actor.obs = actor.env.reset(seed);
        } else {
            actor.obs = result.observation;
        }
    }
    let bootstrap = params.critic.forward(&actor.obs)[0];
    buffer.close_segment(bootstrap);
    Ok(buffer)
}
