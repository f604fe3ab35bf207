//! Dense tanh multilayer perceptron with hand-written backpropagation, and a
//! diagonal Gaussian action head.
//!
//! Weights are stored row-major as `outputs x inputs`. Hidden layers use
//! `tanh`; the output layer is affine.

use std::f64::consts::PI;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::Rng;

pub const LOG_STD_MIN: f64 = -3.0;
pub const LOG_STD_MAX: f64 = 1.0;
pub const LOG_STD_INIT: f64 = -0.5;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("expected input of length {expected}, got {got}")]
    InputLength { expected: usize, got: usize },
    #[error("expected output gradient of length {expected}, got {got}")]
    OutputLength { expected: usize, got: usize },
    #[error("layer sizes must all be at least 1: {0:?}")]
    EmptyLayer(LayerDims),
    #[error("layer {layer}: weights {weights} / biases {biases} do not match {outputs}x{inputs}")]
    Shape {
        layer: usize,
        inputs: usize,
        outputs: usize,
        weights: usize,
        biases: usize,
    },
    #[error("layer {layer} takes {got} inputs but the previous layer emits {expected}")]
    Chain {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite parameter in layer {0}")]
    NonFinite(usize),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerDims {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
}

impl LayerDims {
    pub fn new(input: usize, hidden: Vec<usize>, output: usize) -> Self {
        LayerDims {
            input,
            hidden,
            output,
        }
    }

    /// Six hidden layers of 128 units, 29 inputs, 8 outputs.
    pub fn policy_default() -> Self {
        LayerDims::new(29, vec![128; 6], 8)
    }

    fn sizes(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.hidden.len() + 2);
        s.push(self.input);
        s.extend_from_slice(&self.hidden);
        s.push(self.output);
        s
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.sizes().contains(&0) {
            return Err(NnError::EmptyLayer(self.clone()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major, `outputs` rows of `inputs` entries.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.weights.chunks_exact(self.inputs).zip(&self.biases).map(
            |(row, b)| b + row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>(),
        ));
    }
}

/// Parameters of a multilayer perceptron.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations recorded by [`Mlp::forward`]: `activations[0]` is the input,
/// `activations[l + 1]` the output of layer `l`.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("cache holds at least the input")
    }

    pub fn hidden(&self) -> &[Vec<f64>] {
        let n = self.activations.len();
        &self.activations[1..n - 1]
    }
}

/// Gradient with respect to every parameter of an [`Mlp`] (same shapes) and
/// its input.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<Dense>,
    pub input: Vec<f64>,
}

impl MlpGradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        MlpGradients {
            layers: mlp
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs, l.outputs))
                .collect(),
            input: vec![0.0; mlp.input_dim()],
        }
    }

    pub fn add_assign(&mut self, other: &MlpGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.biases.iter_mut().zip(&b.biases).for_each(|(x, y)| *x += y);
        }
        self.input.iter_mut().zip(&other.input).for_each(|(x, y)| *x += y);
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.biases.as_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init(dims: &LayerDims, rng: &mut Rng) -> Result<Self, NnError> {
        dims.validate()?;
        let sizes = dims.sizes();
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut layer = Dense::zeros(fan_in, fan_out);
                for v in &mut layer.weights {
                    *v = rng.random_range(-bound..=bound);
                }
                layer
            })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn zeros(dims: &LayerDims) -> Result<Self, NnError> {
        dims.validate()?;
        let sizes = dims.sizes();
        Ok(Mlp {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        })
    }

    pub fn dims(&self) -> LayerDims {
        let n = self.layers.len();
        LayerDims {
            input: self.input_dim(),
            hidden: self.layers[..n - 1].iter().map(|l| l.outputs).collect(),
            output: self.output_dim(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.inputs)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// Checks shapes, chaining and finiteness, e.g. after deserializing.
    pub fn validate(&self) -> Result<(), NnError> {
        if self.layers.is_empty() {
            return Err(NnError::EmptyLayer(LayerDims::new(0, vec![], 0)));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.inputs == 0
                || l.outputs == 0
                || l.weights.len() != l.inputs * l.outputs
                || l.biases.len() != l.outputs
            {
                return Err(NnError::Shape {
                    layer: i,
                    inputs: l.inputs,
                    outputs: l.outputs,
                    weights: l.weights.len(),
                    biases: l.biases.len(),
                });
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(NnError::Chain {
                    layer: i,
                    expected: self.layers[i - 1].outputs,
                    got: l.inputs,
                });
            }
            if !l.weights.iter().chain(&l.biases).all(|v| v.is_finite()) {
                return Err(NnError::NonFinite(i));
            }
        }
        Ok(())
    }

    pub fn forward(&self, input: &[f64]) -> Result<ForwardCache, NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::InputLength {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.affine(activations.last().unwrap(), &mut out);
            if l != last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(out);
        }
        Ok(ForwardCache { activations })
    }

    /// Convenience wrapper returning only the output.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let mut cache = self.forward(input)?;
        Ok(cache.activations.pop().unwrap())
    }

    /// Reverse-mode gradient of `output . output_grad`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
    ) -> Result<MlpGradients, NnError> {
        let mut grads = MlpGradients::zeros_like(self);
        self.backward_accumulate(cache, output_grad, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Mlp::backward`] but adds into `grads`. The input gradient is
    /// overwritten, not accumulated.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        output_grad: &[f64],
        grads: &mut MlpGradients,
    ) -> Result<(), NnError> {
        if output_grad.len() != self.output_dim() {
            return Err(NnError::OutputLength {
                expected: self.output_dim(),
                got: output_grad.len(),
            });
        }
        if cache.activations.len() != self.layers.len() + 1
            || cache.activations[0].len() != self.input_dim()
        {
            return Err(NnError::InputLength {
                expected: self.input_dim(),
                got: cache.activations.first().map_or(0, Vec::len),
            });
        }
        let last = self.layers.len() - 1;
        // gradient w.r.t. the pre-activation of the current layer
        let mut delta = output_grad.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let x = &cache.activations[l];
            if l != last {
                let y = &cache.activations[l + 1];
                delta.iter_mut().zip(y).for_each(|(d, h)| *d *= 1.0 - h * h);
            }
            let g = &mut grads.layers[l];
            for (o, d) in delta.iter().enumerate() {
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                row.iter_mut().zip(x).for_each(|(w, xi)| *w += d * xi);
            }
            let mut prev = vec![0.0; layer.inputs];
            for (row, d) in layer.weights.chunks_exact(layer.inputs).zip(&delta) {
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += w * d);
            }
            delta = prev;
        }
        grads.input = delta;
        Ok(())
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.biases.as_mut_slice()])
            .collect()
    }
}

/// State-independent diagonal Gaussian over actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianHead {
    pub log_std: Vec<f64>,
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

impl GaussianHead {
    pub fn new(action_dim: usize) -> Self {
        GaussianHead {
            log_std: vec![LOG_STD_INIT; action_dim],
        }
    }

    pub fn sample(&self, mean: &[f64], rng: &mut Rng) -> (Vec<f64>, f64) {
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let z: f64 = rng.sample(StandardNormal);
                m + ls.exp() * z
            })
            .collect();
        let lp = self.log_prob(mean, &action);
        (action, lp)
    }

    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> f64 {
        mean.iter()
            .zip(action)
            .zip(&self.log_std)
            .map(|((m, a), ls)| {
                let z = (a - m) * (-ls).exp();
                -0.5 * z * z - ls - HALF_LN_2PI
            })
            .sum()
    }

    /// Gradients of the log-density with respect to the mean and `log_std`.
    pub fn log_prob_grad(&self, mean: &[f64], action: &[f64]) -> (Vec<f64>, Vec<f64>) {
        mean.iter()
            .zip(action)
            .zip(&self.log_std)
            .map(|((m, a), ls)| {
                let inv_var = (-2.0 * ls).exp();
                let diff = a - m;
                (diff * inv_var, diff * diff * inv_var - 1.0)
            })
            .unzip()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|ls| ls + 0.5 * (1.0 + (2.0 * PI).ln()))
            .sum()
    }

    pub fn clamp(&mut self) {
        self.log_std
            .iter_mut()
            .for_each(|ls| *ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }
}
