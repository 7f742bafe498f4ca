//! Small dense networks and optimizers with hand-written gradients.

use rand::Rng;

use crate::error::Result;
use crate::tensorio::{take, NamedTensor};

/// Two-layer perceptron: `out = W2 tanh(W1 x + b1) + b2`.
///
/// Parameters live in one flat vector laid out as `[W1 | b1 | W2 | b2]`
/// (row-major), so gradients and optimizer state share the layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    inputs: usize,
    hidden: usize,
    outputs: usize,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    input: Vec<f64>,
    hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl Mlp {
    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        let n = hidden * inputs + hidden + outputs * hidden + outputs;
        Self {
            inputs,
            hidden,
            outputs,
            params: vec![0.0; n],
        }
    }

    /// Uniform Glorot initialisation; the output layer is scaled by
    /// `out_scale` so fresh networks start near-neutral.
    pub fn init<R: Rng>(inputs: usize, hidden: usize, outputs: usize, out_scale: f64, rng: &mut R) -> Self {
        let mut m = Self::zeros(inputs, hidden, outputs);
        let a1 = (6.0 / (inputs + hidden) as f64).sqrt();
        let a2 = (6.0 / (hidden + outputs) as f64).sqrt() * out_scale;
        let (w1, rest) = m.params.split_at_mut(hidden * inputs);
        for w in w1 {
            *w = rng.gen_range(-a1..a1);
        }
        let (_b1, rest) = rest.split_at_mut(hidden);
        let (w2, _b2) = rest.split_at_mut(outputs * hidden);
        for w in w2 {
            *w = rng.gen_range(-a2..a2);
        }
        m
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let b1 = self.hidden * self.inputs;
        let w2 = b1 + self.hidden;
        let b2 = w2 + self.outputs * self.hidden;
        (b1, w2, b2)
    }

    pub fn forward(&self, x: &[f64]) -> MlpCache {
        debug_assert_eq!(x.len(), self.inputs);
        let (ob1, ow2, ob2) = self.offsets();
        let p = &self.params;
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &p[h * self.inputs..(h + 1) * self.inputs];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + p[ob1 + h];
                z.tanh()
            })
            .collect();
        let output = (0..self.outputs)
            .map(|o| {
                let row = &p[ow2 + o * self.hidden..ow2 + (o + 1) * self.hidden];
                row.iter().zip(&hidden).map(|(w, v)| w * v).sum::<f64>() + p[ob2 + o]
            })
            .collect();
        MlpCache {
            input: x.to_vec(),
            hidden,
            output,
        }
    }

    pub fn output(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).output
    }

    /// Accumulates `d loss / d params` into `grad` given `d loss / d output`.
    pub fn backward(&self, cache: &MlpCache, d_out: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let (ob1, ow2, ob2) = self.offsets();
        let p = &self.params;
        let mut d_hidden = vec![0.0; self.hidden];
        for (o, g) in d_out.iter().enumerate() {
            if *g == 0.0 {
                continue;
            }
            grad[ob2 + o] += g;
            for h in 0..self.hidden {
                grad[ow2 + o * self.hidden + h] += g * cache.hidden[h];
                d_hidden[h] += g * p[ow2 + o * self.hidden + h];
            }
        }
        for h in 0..self.hidden {
            let dz = d_hidden[h] * (1.0 - cache.hidden[h] * cache.hidden[h]);
            if dz == 0.0 {
                continue;
            }
            grad[ob1 + h] += dz;
            for i in 0..self.inputs {
                grad[h * self.inputs + i] += dz * cache.input[i];
            }
        }
    }

    pub fn to_tensors(&self, prefix: &str) -> Vec<NamedTensor> {
        let (ob1, ow2, ob2) = self.offsets();
        let p = &self.params;
        vec![
            NamedTensor::new(format!("{prefix}.w1"), &[self.hidden, self.inputs], p[..ob1].to_vec()),
            NamedTensor::new(format!("{prefix}.b1"), &[self.hidden], p[ob1..ow2].to_vec()),
            NamedTensor::new(format!("{prefix}.w2"), &[self.outputs, self.hidden], p[ow2..ob2].to_vec()),
            NamedTensor::new(format!("{prefix}.b2"), &[self.outputs], p[ob2..].to_vec()),
        ]
    }

    pub fn from_tensors(
        tensors: &[NamedTensor],
        prefix: &str,
        inputs: usize,
        hidden: usize,
        outputs: usize,
    ) -> Result<Self> {
        let mut params = Vec::new();
        params.extend_from_slice(take(tensors, &format!("{prefix}.w1"), &[hidden, inputs])?);
        params.extend_from_slice(take(tensors, &format!("{prefix}.b1"), &[hidden])?);
        params.extend_from_slice(take(tensors, &format!("{prefix}.w2"), &[outputs, hidden])?);
        params.extend_from_slice(take(tensors, &format!("{prefix}.b2"), &[outputs])?);
        Ok(Self {
            inputs,
            hidden,
            outputs,
            params,
        })
    }
}

/// Adam optimizer over a flat parameter slice.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Relative error with a small absolute floor, used by gradient checks.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}
