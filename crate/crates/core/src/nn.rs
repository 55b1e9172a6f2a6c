//! Two-layer perceptrons and an AdamW optimizer over flat parameter vectors.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::util::rng;

/// `out = W2 tanh(W1 x + b1) + b2`, parameters stored flat as `[W1, b1, W2, b2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    pub x: Vec<f64>,
    pub h: Vec<f64>,
    pub out: Vec<f64>,
}

impl Mlp {
    pub fn param_count(input: usize, hidden: usize, output: usize) -> usize {
        hidden * input + hidden + output * hidden + output
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self { input, hidden, output, params: vec![0.0; Self::param_count(input, hidden, output)] }
    }

    /// Weights `N(0, gain^2 / fan_in)`, biases zero.
    pub fn seeded(seed: u64, input: usize, hidden: usize, output: usize, gain: f64) -> Self {
        let mut m = Self::zeros(input, hidden, output);
        let mut r = rng(seed);
        let n1 = Normal::new(0.0, gain / (input as f64).sqrt()).unwrap();
        let n2 = Normal::new(0.0, gain / (hidden as f64).sqrt()).unwrap();
        let (w1, b1, w2, _) = m.offsets();
        for v in &mut m.params[w1..b1] {
            *v = n1.sample(&mut r);
        }
        for v in &mut m.params[w2..w2 + output * hidden] {
            *v = n2.sample(&mut r);
        }
        m
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let b1 = self.hidden * self.input;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.output * self.hidden;
        (0, b1, w2, b2)
    }

    /// Slices of the parameter vector: `(W1, b1, W2, b2)`.
    pub fn groups(&self) -> [std::ops::Range<usize>; 4] {
        let (w1, b1, w2, b2) = self.offsets();
        [w1..b1, b1..w2, w2..b2, b2..self.params.len()]
    }

    pub fn forward(&self, x: &[f64]) -> MlpTrace {
        assert_eq!(x.len(), self.input, "mlp input size");
        let (_, b1, w2, b2) = self.offsets();
        let p = &self.params;
        let h: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &p[j * self.input..(j + 1) * self.input];
                (p[b1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()).tanh()
            })
            .collect();
        let out = (0..self.output)
            .map(|k| {
                let row = &p[w2 + k * self.hidden..w2 + (k + 1) * self.hidden];
                p[b2 + k] + row.iter().zip(&h).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect();
        MlpTrace { x: x.to_vec(), h, out }
    }

    /// Accumulates parameter gradients into `dparams`, returns the input gradient.
    pub fn backward(&self, trace: &MlpTrace, dout: &[f64], dparams: &mut [f64]) -> Vec<f64> {
        let (_, b1, w2, b2) = self.offsets();
        let p = &self.params;
        let mut dh = vec![0.0; self.hidden];
        for (k, &g) in dout.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            dparams[b2 + k] += g;
            let base = w2 + k * self.hidden;
            for j in 0..self.hidden {
                dparams[base + j] += g * trace.h[j];
                dh[j] += g * p[base + j];
            }
        }
        let mut dx = vec![0.0; self.input];
        for j in 0..self.hidden {
            let da = dh[j] * (1.0 - trace.h[j] * trace.h[j]);
            if da == 0.0 {
                continue;
            }
            dparams[b1 + j] += da;
            let base = j * self.input;
            for i in 0..self.input {
                dparams[base + i] += da * trace.x[i];
                dx[i] += da * p[base + i];
            }
        }
        dx
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamWConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Moment accumulators for one parameter vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, n: usize) -> Self {
        Self { config, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer size");
        let c = self.config;
        self.t += 1;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= c.lr * (mh / (vh.sqrt() + c.eps) + c.weight_decay * params[i]);
        }
    }
}
