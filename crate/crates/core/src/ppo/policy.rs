use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::{log_softmax, softmax, Mlp};
use super::PpoError;

/// Actor (observation -> action logits) and critic (observation -> value).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl PolicyParams {
    /// Two hidden layers of `hidden` units for both networks, seeded uniform
    /// initialization.
    pub fn init<R: Rng>(obs_len: usize, actions: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            actor: Mlp::init(&[obs_len, hidden, hidden, actions], rng),
            critic: Mlp::init(&[obs_len, hidden, hidden, 1], rng),
        }
    }

    pub fn zeros(obs_len: usize, actions: usize, hidden: usize) -> Self {
        Self {
            actor: Mlp::zeros(&[obs_len, hidden, hidden, actions]),
            critic: Mlp::zeros(&[obs_len, hidden, hidden, 1]),
        }
    }

    pub fn obs_len(&self) -> usize {
        self.actor.input_len()
    }

    pub fn action_count(&self) -> usize {
        self.actor.output_len()
    }

    pub fn num_params(&self) -> usize {
        self.actor.params().len() + self.critic.params().len()
    }

    /// Actor parameters followed by critic parameters.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = self.actor.params().to_vec();
        out.extend_from_slice(self.critic.params());
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let (a, c) = flat.split_at(self.actor.params().len());
        self.actor.params_mut().copy_from_slice(a);
        self.critic.params_mut().copy_from_slice(c);
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(usize, &mut f64)) {
        let n = self.actor.params().len();
        for (i, p) in self.actor.params_mut().iter_mut().enumerate() {
            f(i, p);
        }
        for (i, p) in self.critic.params_mut().iter_mut().enumerate() {
            f(n + i, p);
        }
    }

    fn check(&self, obs: &[f64]) -> Result<(), PpoError> {
        if obs.len() != self.obs_len() || self.critic.input_len() != obs.len() {
            return Err(PpoError::Shape { expected: self.obs_len(), actual: obs.len() });
        }
        Ok(())
    }
}

/// Action probabilities and state value.
pub fn policy_forward(params: &PolicyParams, obs: &[f64]) -> Result<(Vec<f64>, f64), PpoError> {
    params.check(obs)?;
    let probs = softmax(&params.actor.forward(obs));
    let value = params.critic.forward(obs)[0];
    Ok((probs, value))
}

pub fn log_probabilities(params: &PolicyParams, obs: &[f64]) -> Result<Vec<f64>, PpoError> {
    params.check(obs)?;
    Ok(log_softmax(&params.actor.forward(obs)))
}

/// Inverse-CDF draw from `probs`.
pub fn sample_action<R: Rng>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut cumulative = 0.0;
    for (i, p) in probs.iter().enumerate() {
        cumulative += p;
        if u < cumulative {
            return i;
        }
    }
    // rounding left the total just below u
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Most probable action; ties go to the lowest id.
pub fn greedy_action(probs: &[f64]) -> usize {
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    best
}

/// `pi_new(a|s) / pi_old(a|s)`, evaluated in log space.
pub fn probability_ratio(
    params: &PolicyParams,
    old_params: &PolicyParams,
    obs: &[f64],
    action: usize,
) -> Result<f64, PpoError> {
    let new = log_probabilities(params, obs)?[action];
    let old = log_probabilities(old_params, obs)?[action];
    Ok((new - old).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_give_uniform_policy() {
        let params = PolicyParams::zeros(6, 4, 8);
        let (probs, value) = policy_forward(&params, &[0.5; 6]).unwrap();
        assert_eq!(probs, vec![0.25; 4]);
        assert_eq!(value, 0.0);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let params = PolicyParams::zeros(6, 4, 8);
        assert_eq!(
            policy_forward(&params, &[0.0; 5]),
            Err(PpoError::Shape { expected: 6, actual: 5 })
        );
    }

    #[test]
    fn degenerate_distribution_always_samples_its_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            assert_eq!(sample_action(&[1.0, 0.0, 0.0], &mut rng), 0);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let probs = [0.2, 0.3, 0.5];
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| sample_action(&probs, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(draw(4), draw(4));
    }

    #[test]
    fn empirical_frequencies_within_three_sigma() {
        let probs = [0.1, 0.25, 0.4, 0.25];
        let n = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_action(&probs, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(probs) {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((*c as f64 - n as f64 * p).abs() <= 3.0 * sigma);
        }
    }

    #[test]
    fn ratio_of_identical_params_is_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = PolicyParams::init(5, 3, 8, &mut rng);
        let obs = [0.1, -0.2, 0.3, 0.4, -0.5];
        for a in 0..3 {
            assert_eq!(probability_ratio(&params, &params, &obs, a).unwrap(), 1.0);
        }
    }

    #[test]
    fn ratios_telescope() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p0 = PolicyParams::init(4, 3, 6, &mut rng);
        let p1 = PolicyParams::init(4, 3, 6, &mut rng);
        let p2 = PolicyParams::init(4, 3, 6, &mut rng);
        let obs = [0.3, 0.1, -0.9, 0.5];
        let r10 = probability_ratio(&p1, &p0, &obs, 2).unwrap();
        let r21 = probability_ratio(&p2, &p1, &obs, 2).unwrap();
        let r20 = probability_ratio(&p2, &p0, &obs, 2).unwrap();
        assert!((r10 * r21 - r20).abs() < 1e-12);
    }

    #[test]
    fn greedy_picks_first_maximum() {
        assert_eq!(greedy_action(&[0.2, 0.4, 0.4]), 1);
        assert_eq!(greedy_action(&[0.25; 4]), 0);
    }
}
