use rand::seq::index::sample;
use rand::Rng;

use super::network::{log_softmax, MlpCache};
use super::{PolicyParams, PpoConfig, PpoError};

/// Training samples for one gradient step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Minibatch {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    /// Log-probabilities of `actions` under the sampling policy.
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Fills `old_log_probs` from a parameter snapshot.
    pub fn set_old_policy(&mut self, old: &PolicyParams) -> Result<(), PpoError> {
        self.old_log_probs = self
            .observations
            .iter()
            .zip(&self.actions)
            .map(|(obs, &a)| super::log_probabilities(old, obs).map(|lp| lp[a]))
            .collect::<Result<_, _>>()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// `-L_clip + c_v * value_loss - beta_eff * entropy`.
    pub loss: f64,
    /// Mean clipped surrogate `L_clip`.
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Gradient of `loss`, actor parameters then critic parameters.
    pub grad: Vec<f64>,
}

/// `min(r * A, clip(r, 1 - eps, 1 + eps) * A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

fn normalized(advantages: &[f64]) -> Vec<f64> {
    let n = advantages.len() as f64;
    let mean = advantages.iter().sum::<f64>() / n;
    let var = advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    advantages.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
}

/// Loss and its exact gradient over a minibatch.
pub fn ppo_loss(
    params: &PolicyParams,
    batch: &Minibatch,
    config: &PpoConfig,
) -> Result<LossOutput, PpoError> {
    if batch.is_empty() {
        return Err(PpoError::EmptyMinibatch);
    }
    let m = batch.len();
    for (name, len) in [
        ("observations", batch.observations.len()),
        ("old_log_probs", batch.old_log_probs.len()),
        ("advantages", batch.advantages.len()),
        ("returns", batch.returns.len()),
    ] {
        if len != m {
            return Err(PpoError::Length(format!("{name} has {len} entries, expected {m}")));
        }
    }
    let advantages =
        if config.normalize_advantages { normalized(&batch.advantages) } else { batch.advantages.clone() };
    let scale = 1.0 / m as f64;
    let eps = config.clip_epsilon;
    let beta = config.beta_eff;
    let c_v = config.value_loss_coef;

    let n_actor = params.actor.params().len();
    let mut grad = vec![0.0; params.num_params()];
    let (actor_grad, critic_grad) = grad.split_at_mut(n_actor);
    let mut actor_cache = MlpCache::default();
    let mut critic_cache = MlpCache::default();
    let (mut surrogate, mut value_loss, mut entropy) = (0.0, 0.0, 0.0);
    let mut d_logits = Vec::new();

    for i in 0..m {
        let obs = &batch.observations[i];
        if obs.len() != params.obs_len() {
            return Err(PpoError::Shape { expected: params.obs_len(), actual: obs.len() });
        }
        let action = batch.actions[i];
        let adv = advantages[i];

        params.actor.forward_cached(obs, &mut actor_cache);
        let log_p = log_softmax(actor_cache.output());
        let probs: Vec<f64> = log_p.iter().map(|l| l.exp()).collect();
        let ratio = (log_p[action] - batch.old_log_probs[i]).exp();
        surrogate += clipped_surrogate(ratio, adv, eps);
        let h: f64 = -probs.iter().zip(&log_p).map(|(p, l)| p * l).sum::<f64>();
        entropy += h;

        // the unclipped branch carries the gradient unless clipping binds
        let active = if adv >= 0.0 { ratio <= 1.0 + eps } else { ratio >= 1.0 - eps };
        let d_logp = if active { -scale * ratio * adv } else { 0.0 };
        d_logits.clear();
        for (j, (&p, &l)) in probs.iter().zip(&log_p).enumerate() {
            let indicator = if j == action { 1.0 } else { 0.0 };
            d_logits.push(d_logp * (indicator - p) + beta * scale * p * (l + h));
        }
        params.actor.backward(&actor_cache, &d_logits, actor_grad);

        params.critic.forward_cached(obs, &mut critic_cache);
        let v = critic_cache.output()[0];
        let err = v - batch.returns[i];
        value_loss += err * err;
        params.critic.backward(&critic_cache, &[c_v * 2.0 * err * scale], critic_grad);
    }
    surrogate *= scale;
    value_loss *= scale;
    entropy *= scale;
    Ok(LossOutput {
        loss: -surrogate + c_v * value_loss - beta * entropy,
        surrogate,
        value_loss,
        entropy,
        grad,
    })
}

/// Largest relative error between the analytic gradient returned by `f` and
/// central differences with step `h`. Checks every parameter, or a random
/// subset of `max_params` when there are more.
///
/// The relative error is `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// vanishing gradients from reporting rounding noise as error.
pub fn gradient_check<F, R>(
    params: &[f64],
    mut f: F,
    h: f64,
    max_params: usize,
    rng: &mut R,
) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    R: Rng,
{
    let (_, analytic) = f(params);
    let indices: Vec<usize> = if params.len() > max_params {
        sample(rng, params.len(), max_params).into_vec()
    } else {
        (0..params.len()).collect()
    };
    let mut probe = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in indices {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe).0;
        probe[i] = orig - h;
        let down = f(&probe).0;
        probe[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// [`gradient_check`] applied to [`ppo_loss`].
pub fn ppo_gradient_check<R: Rng>(
    params: &PolicyParams,
    batch: &Minibatch,
    config: &PpoConfig,
    h: f64,
    max_params: usize,
    rng: &mut R,
) -> Result<f64, PpoError> {
    ppo_loss(params, batch, config)?;
    let mut probe = params.clone();
    let flat = params.flat();
    Ok(gradient_check(
        &flat,
        |x| {
            probe.set_flat(x);
            let out = ppo_loss(&probe, batch, config).expect("validated above");
            (out.loss, out.grad)
        },
        h,
        max_params,
        rng,
    ))
}
