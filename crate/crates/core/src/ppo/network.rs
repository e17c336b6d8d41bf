//! Dense tanh networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat vector per network, layer by layer: the
//! weight matrix (row-major, `out x in`) followed by the bias. Hidden layers
//! use tanh; the output layer is linear.

use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Per-layer activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct MlpCache {
    /// `acts[0]` is the input; `acts[i + 1]` the output of layer `i`.
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "a network needs an input and an output layer");
        Self { sizes: sizes.to_vec(), params: vec![0.0; param_count(sizes)] }
    }

    /// Weights and biases uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn init<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out + fan_out] {
                *p = rng.gen_range(-bound..=bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && param_count(&sizes) == params.len()).then_some(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().expect("non-empty")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cache = MlpCache::default();
        self.forward_cached(x, &mut cache);
        cache.acts.pop().unwrap_or_default()
    }

    pub fn forward_cached(&self, x: &[f64], cache: &mut MlpCache) {
        assert_eq!(x.len(), self.input_len(), "input width mismatch");
        let layers = self.sizes.len() - 1;
        cache.acts.resize(layers + 1, Vec::new());
        cache.acts[0].clear();
        cache.acts[0].extend_from_slice(x);
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let (before, after) = cache.acts.split_at_mut(l + 1);
            let input = &before[l];
            let out = &mut after[0];
            out.clear();
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let mut z = bias[o];
                for (w, v) in row.iter().zip(input) {
                    z += w * v;
                }
                out.push(if l + 1 < layers { z.tanh() } else { z });
            }
            offset += n_in * n_out + n_out;
        }
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        let mut delta = d_out.to_vec();
        let mut offset = self.params.len();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= n_in * n_out + n_out;
            if l + 1 < layers {
                // through tanh: d/dz = (1 - a^2)
                for (d, a) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    *d *= 1.0 - a * a;
                }
            }
            let input = &cache.acts[l];
            let (gw, gb) = grad[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                for (g, v) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                    *g += d * v;
                }
            }
            if l > 0 {
                let weights = &self.params[offset..offset + n_in * n_out];
                let mut next = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    for (n, w) in next.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
                        *n += d * w;
                    }
                }
                delta = next;
            }
        }
    }
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|z| z - log_sum).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_layout_counts() {
        assert_eq!(param_count(&[3, 4, 2]), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(param_count(&[5, 1]), 6);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = Mlp::init(&[16, 8, 2], &mut rng);
        let (first, second) = net.params().split_at(16 * 8 + 8);
        assert!(first.iter().all(|p| p.abs() <= 0.25));
        assert!(second.iter().all(|p| p.abs() <= 1.0 / 8f64.sqrt()));
    }

    #[test]
    fn backward_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::init(&[4, 5, 3, 2], &mut rng);
        let x = [0.3, -0.7, 0.1, 0.9];
        let w = [0.4, -1.3];
        let loss = |net: &Mlp| net.forward(&x).iter().zip(&w).map(|(o, w)| o * w).sum::<f64>();
        let mut cache = MlpCache::default();
        net.forward_cached(&x, &mut cache);
        let mut grad = vec![0.0; net.params().len()];
        net.backward(&cache, &w, &mut grad);
        let h = 1e-6;
        for i in 0..grad.len() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = loss(&net);
            net.params_mut()[i] = orig - h;
            let down = loss(&net);
            net.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            assert!((numeric - grad[i]).abs() < 1e-8, "param {i}: {numeric} vs {}", grad[i]);
        }
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let p = softmax(&[1.0, 2.0, 0.5]);
        let q = softmax(&[11.0, 12.0, 10.5]);
        for (a, b) in p.iter().zip(&q) {
            assert!((a - b).abs() < 1e-15);
        }
        let lp = log_softmax(&[1.0, 2.0, 0.5]);
        for (a, b) in p.iter().zip(&lp) {
            assert!((a.ln() - b).abs() < 1e-14);
        }
    }
}
