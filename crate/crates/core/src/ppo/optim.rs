use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{ppo_loss, Minibatch};
use super::{OptimizerKind, PolicyParams, PpoConfig, PpoError, RolloutBuffer};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First-order optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, num_params: usize) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => {
                Optimizer::Adam { m: vec![0.0; num_params], v: vec![0.0; num_params], t: 0 }
            }
        }
    }

    /// One descent step along `grad`, after rescaling it to at most
    /// `max_norm` in Euclidean norm.
    pub fn step(&mut self, params: &mut PolicyParams, grad: &[f64], lr: f64, max_norm: f64) {
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let clip = if norm > max_norm { max_norm / norm } else { 1.0 };
        match self {
            Optimizer::Sgd => params.for_each_param_mut(|i, p| *p -= lr * grad[i] * clip),
            Optimizer::Adam { m, v, t } => {
                *t += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*t as i32);
                let c2 = 1.0 - ADAM_BETA2.powi(*t as i32);
                params.for_each_param_mut(|i, p| {
                    let g = grad[i] * clip;
                    m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g;
                    v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g * g;
                    let m_hat = m[i] / c1;
                    let v_hat = v[i] / c2;
                    *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                });
            }
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Mean loss over all minibatches of the first epoch.
    pub first_epoch_loss: f64,
    /// Mean loss over all minibatches.
    pub loss: f64,
    pub entropy: f64,
    pub minibatches: usize,
}

/// `epochs` passes over shuffled minibatches of the buffer. Ratios are taken
/// against the log-probabilities stored at sampling time.
pub fn update<R: Rng>(
    params: &mut PolicyParams,
    optimizer: &mut Optimizer,
    buffer: &RolloutBuffer,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats, PpoError> {
    let advantages = buffer.advantages.as_ref().ok_or(PpoError::MissingAdvantages)?;
    let returns = buffer.returns.as_ref().ok_or(PpoError::MissingAdvantages)?;
    let n = buffer.len();
    if n == 0 {
        return Err(PpoError::EmptyMinibatch);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut stats = UpdateStats::default();
    let mut first_epoch = (0.0, 0usize);
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.batch_size) {
            let batch = Minibatch {
                observations: chunk.iter().map(|&i| buffer.observation(i).to_vec()).collect(),
                actions: chunk.iter().map(|&i| buffer.actions[i]).collect(),
                old_log_probs: chunk.iter().map(|&i| buffer.log_probs[i]).collect(),
                advantages: chunk.iter().map(|&i| advantages[i]).collect(),
                returns: chunk.iter().map(|&i| returns[i]).collect(),
            };
            let out = ppo_loss(params, &batch, config)?;
            optimizer.step(params, &out.grad, config.learning_rate, config.max_grad_norm);
            stats.loss += out.loss;
            stats.entropy += out.entropy;
            stats.minibatches += 1;
            if epoch == 0 {
                first_epoch.0 += out.loss;
                first_epoch.1 += 1;
            }
        }
    }
    stats.loss /= stats.minibatches as f64;
    stats.entropy /= stats.minibatches as f64;
    stats.first_epoch_loss = first_epoch.0 / first_epoch.1 as f64;
    Ok(stats)
}
