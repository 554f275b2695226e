//! Small feed-forward network: ReLU hidden layers, linear output.
//!
//! One implementation serves both the scalar regressor and the neural policy;
//! parameters live in a single flat vector so gradient-based callers can treat
//! the network as a plain parameter block.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::check_rows;
use crate::error::{Error, Result};
use crate::seeding::rng_from;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    #[serde(default = "default_width")]
    pub hidden_width: usize,
    #[serde(default = "default_depth")]
    pub hidden_layers: usize,
    #[serde(default = "default_mlp_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_mlp_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// Zero-initialize the output layer (predictions start at exactly 0).
    #[serde(default)]
    pub zero_output_init: bool,
}

fn default_width() -> usize {
    32
}
fn default_depth() -> usize {
    3
}
fn default_mlp_lr() -> f64 {
    0.02
}
fn default_mlp_epochs() -> usize {
    300
}
fn default_batch() -> usize {
    32
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_width: default_width(),
            hidden_layers: default_depth(),
            learning_rate: default_mlp_lr(),
            epochs: default_mlp_epochs(),
            batch_size: default_batch(),
            zero_output_init: false,
        }
    }
}

/// Feed-forward network; `dims` = [input, hidden.., output].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    dims: Vec<usize>,
    /// Flat parameters: for each layer, row-major weights then biases.
    params: Vec<f64>,
}

/// Forward-pass intermediates needed by the backward pass.
pub struct MlpCache {
    /// `activations[0]` is the input; the last entry is the output.
    activations: Vec<Vec<f64>>,
    /// Pre-activations of hidden layers (for the ReLU derivative).
    pre_activations: Vec<Vec<f64>>,
}

impl Mlp {
    /// Xavier-uniform initialization for hidden layers; output layer is
    /// zeroed when `zero_output` is set.
    pub fn new(dims: &[usize], seed: u64, zero_output: bool) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let mut rng = rng_from(seed);
        let mut params = Vec::new();
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let is_output = l == dims.len() - 2;
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                if is_output && zero_output {
                    params.push(0.0);
                } else {
                    params.push(rng.random_range(-bound..bound));
                }
            }
            params.extend(std::iter::repeat(0.0).take(fan_out));
        }
        Self {
            dims: dims.to_vec(),
            params,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Adds `scale * step` to every parameter.
    pub fn apply_step(&mut self, step: &[f64], scale: f64) {
        debug_assert_eq!(step.len(), self.params.len());
        for (p, s) in self.params.iter_mut().zip(step) {
            *p += scale * s;
        }
    }

    fn layer_offsets(&self) -> Vec<(usize, usize, usize)> {
        // (weights offset, biases offset, layer index)
        let mut out = Vec::new();
        let mut off = 0;
        for l in 0..self.dims.len() - 1 {
            let w = off;
            off += self.dims[l] * self.dims[l + 1];
            let b = off;
            off += self.dims[l + 1];
            out.push((w, b, l));
        }
        out
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cache(x).activations.pop().unwrap()
    }

    pub fn forward_cache(&self, x: &[f64]) -> MlpCache {
        debug_assert_eq!(x.len(), self.dims[0]);
        let n_layers = self.dims.len() - 1;
        let mut activations = Vec::with_capacity(n_layers + 1);
        let mut pre_activations = Vec::with_capacity(n_layers.saturating_sub(1));
        activations.push(x.to_vec());
        for (w_off, b_off, l) in self.layer_offsets() {
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let input = activations.last().unwrap().clone();
            let mut z = vec![0.0; fan_out];
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &self.params[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                *zo = self.params[b_off + o]
                    + row.iter().zip(&input).map(|(w, a)| w * a).sum::<f64>();
            }
            let is_output = l == n_layers - 1;
            if is_output {
                activations.push(z);
            } else {
                pre_activations.push(z.clone());
                for v in &mut z {
                    *v = v.max(0.0);
                }
                activations.push(z);
            }
        }
        MlpCache {
            activations,
            pre_activations,
        }
    }

    /// Accumulates parameter gradients for output cotangent `d_out` into
    /// `grad` (same layout as `params`).
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let n_layers = self.dims.len() - 1;
        let offsets = self.layer_offsets();
        let mut dz = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (w_off, b_off, _) = offsets[l];
            let (fan_in, fan_out) = (self.dims[l], self.dims[l + 1]);
            let input = &cache.activations[l];
            for o in 0..fan_out {
                grad[b_off + o] += dz[o];
                let g = &mut grad[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                for (gv, &a) in g.iter_mut().zip(input) {
                    *gv += dz[o] * a;
                }
            }
            if l > 0 {
                let mut da = vec![0.0; fan_in];
                for o in 0..fan_out {
                    let row = &self.params[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                    for (dv, &w) in da.iter_mut().zip(row) {
                        *dv += dz[o] * w;
                    }
                }
                let pre = &cache.pre_activations[l - 1];
                for (dv, &z) in da.iter_mut().zip(pre) {
                    if z <= 0.0 {
                        *dv = 0.0;
                    }
                }
                dz = da;
            }
        }
    }
}

/// Scalar-output network trained by mini-batch gradient descent on squared
/// error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpRegressor {
    net: Mlp,
    pub config: MlpConfig,
}

impl MlpRegressor {
    pub fn predict(&self, features: &[f64]) -> f64 {
        self.net.forward(features)[0]
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn fit(x: &[Vec<f64>], y: &[f64], cfg: &MlpConfig, seed: u64) -> Result<Self> {
        let dim = check_rows(x, y.len(), "MlpRegressor::fit")?;
        let mut dims = vec![dim];
        dims.extend(std::iter::repeat(cfg.hidden_width).take(cfg.hidden_layers));
        dims.push(1);
        let mut net = Mlp::new(&dims, seed, cfg.zero_output_init);

        let n = x.len();
        let batch = cfg.batch_size.clamp(1, n);
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = rng_from(seed ^ 0x5EED_0F17);
        let mut grad = vec![0.0; net.param_len()];
        for epoch in 0..cfg.epochs {
            // Fisher-Yates shuffle, seeded.
            for i in (1..n).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            for chunk in order.chunks(batch) {
                grad.fill(0.0);
                let m = chunk.len() as f64;
                for &i in chunk {
                    let cache = net.forward_cache(&x[i]);
                    let pred = cache.activations.last().unwrap()[0];
                    let resid = pred - y[i];
                    epoch_loss += resid * resid;
                    net.backward(&cache, &[2.0 * resid / m], &mut grad);
                }
                net.apply_step(&grad, -cfg.learning_rate);
            }
            if !epoch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "MLP training loss diverged at epoch {epoch}"
                )));
            }
        }
        Ok(Self {
            net,
            config: *cfg,
        })
    }
}
