//! Minimal dense-layer toolkit: linear maps with manual backprop, ReLU,
//! Adam with L2 weight decay, and the step learning-rate schedule.
//!
//! Everything runs in f64 so gradient checks against central finite
//! differences hold tightly.

use ndarray::{Array1, Array2};
use rand::distributions::{Distribution, Uniform};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

/// Fully connected layer, weights stored as (out_dim, in_dim).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    /// Uniform fan-in init U(-1/sqrt(in), 1/sqrt(in)), zero biases.
    pub fn seeded(out_dim: usize, in_dim: usize, rng: &mut ChaCha20Rng) -> Linear {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let weight = Array2::from_shape_fn((out_dim, in_dim), |_| dist.sample(rng));
        Linear {
            weight,
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn identity(dim: usize) -> Linear {
        Linear {
            weight: Array2::eye(dim),
            bias: Array1::zeros(dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: &Array1<f64>) -> Array1<f64> {
        self.weight.dot(x) + &self.bias
    }

    /// Accumulate parameter gradients for one sample and return the gradient
    /// w.r.t. the input.
    pub fn backward(
        &self,
        x: &Array1<f64>,
        dy: &Array1<f64>,
        grad: &mut LinearGrad,
    ) -> Array1<f64> {
        for (i, &g) in dy.iter().enumerate() {
            if g != 0.0 {
                grad.weight.row_mut(i).scaled_add(g, x);
            }
            grad.bias[i] += g;
        }
        self.weight.t().dot(dy)
    }
}

/// Gradient buffers matching a [`Linear`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl LinearGrad {
    pub fn zeros_like(layer: &Linear) -> LinearGrad {
        LinearGrad {
            weight: Array2::zeros(layer.weight.raw_dim()),
            bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }

    pub fn reset(&mut self) {
        self.weight.fill(0.0);
        self.bias.fill(0.0);
    }

    pub fn scale(&mut self, factor: f64) {
        self.weight *= factor;
        self.bias *= factor;
    }
}

pub fn relu(x: &Array1<f64>) -> Array1<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU given the pre-activation values.
pub fn relu_backward(pre: &Array1<f64>, dy: &Array1<f64>) -> Array1<f64> {
    let mut dx = dy.clone();
    for (d, &p) in dx.iter_mut().zip(pre.iter()) {
        if p <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    exp / sum
}

/// Adam state for one parameter tensor pair (weight, bias).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m_w: Array2<f64>,
    pub v_w: Array2<f64>,
    pub m_b: Array1<f64>,
    pub v_b: Array1<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros_like(layer: &Linear) -> AdamState {
        AdamState {
            m_w: Array2::zeros(layer.weight.raw_dim()),
            v_w: Array2::zeros(layer.weight.raw_dim()),
            m_b: Array1::zeros(layer.bias.raw_dim()),
            v_b: Array1::zeros(layer.bias.raw_dim()),
            step: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty added to the gradient (classic Adam weight decay).
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// One Adam update on a layer. Biases are not weight-decayed.
pub fn adam_step(
    layer: &mut Linear,
    grad: &LinearGrad,
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);

    for ((w, g), (m, v)) in layer
        .weight
        .iter_mut()
        .zip(grad.weight.iter())
        .zip(state.m_w.iter_mut().zip(state.v_w.iter_mut()))
    {
        let g = g + cfg.weight_decay * *w;
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    for ((b, g), (m, v)) in layer
        .bias
        .iter_mut()
        .zip(grad.bias.iter())
        .zip(state.m_b.iter_mut().zip(state.v_b.iter_mut()))
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *b -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// lr * decay^floor(epoch / step_size), epochs 0-indexed.
pub fn step_lr(base_lr: f64, decay: f64, step_size: usize, epoch: usize) -> f64 {
    base_lr * decay.powi((epoch / step_size.max(1)) as i32)
}
