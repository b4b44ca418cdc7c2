//! Minimal differentiable function approximators.
//!
//! Feed-forward multilayer perceptrons in 64-bit floats with reverse-mode
//! gradients, Adam updates, and target-network soft updates. Desk-scale
//! problems make throughput irrelevant; what matters is that gradients match
//! finite differences and that identical inputs always reproduce identical
//! outputs, so everything here is plain scalar code over `Vec<f64>`.

mod adam;

pub use adam::Adam;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global-norm clip applied to gradients before optimizer steps. Early
/// chain-backward gradients can spike by a few orders of magnitude.
pub const GRAD_CLIP_NORM: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed in terms of the activation output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Linear => "linear",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::InvalidArgument(format!(
                "unknown activation {other:?}"
            ))),
        }
    }
}

/// One dense layer: `y = act(W x + b)` with `W` row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub(crate) in_dim: usize,
    pub(crate) out_dim: usize,
    pub(crate) activation: Activation,
}

impl Layer {
    fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for row in 0..self.out_dim {
            let w = &self.weights[row * self.in_dim..(row + 1) * self.in_dim];
            let mut z = self.bias[row];
            for (wi, xi) in w.iter().zip(input) {
                z += wi * xi;
            }
            out.push(self.activation.apply(z));
        }
    }
}

/// A feed-forward network: the parameter set for a denoiser, evaluator or
/// critic. Adjacent layer dimensions chain; all values stay finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Record of one forward pass: the activations of every layer including the
/// input, enough to run the backward pass without recomputation.
#[derive(Debug, Clone)]
pub struct Tape {
    acts: Vec<Vec<f64>>,
}

/// Accumulated partial derivatives, shape-identical to an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub(crate) weights: Vec<Vec<f64>>,
    pub(crate) bias: Vec<Vec<f64>>,
}

impl Mlp {
    /// Builds a network from `dims = [n0, n1, ..., nL]` and one activation
    /// per layer, with all parameters zero.
    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "network needs at least one layer".into(),
            ));
        }
        if activations.len() != dims.len() - 1 {
            return Err(Error::DimMismatch {
                context: "activations per layer",
                expected: dims.len() - 1,
                got: activations.len(),
            });
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("layer dims must be > 0".into()));
        }
        let layers = dims
            .windows(2)
            .zip(activations)
            .map(|(pair, &activation)| Layer {
                weights: vec![0.0; pair[0] * pair[1]],
                bias: vec![0.0; pair[1]],
                in_dim: pair[0],
                out_dim: pair[1],
                activation,
            })
            .collect();
        Ok(Self { layers })
    }

    /// Glorot-uniform initialization: weights in `±sqrt(6/(fan_in+fan_out))`,
    /// biases zero.
    pub fn glorot<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(dims, activations)?;
        for layer in &mut net.layers {
            let limit = (6.0 / (layer.in_dim + layer.out_dim) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// Tanh hidden layers, linear output.
    pub fn glorot_tanh<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut acts = vec![Activation::Tanh; dims.len().saturating_sub(1)];
        if let Some(last) = acts.last_mut() {
            *last = Activation::Linear;
        }
        Self::glorot(dims, &acts, rng)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// `[n0, n1, ..., nL]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn activations(&self) -> Vec<Activation> {
        self.layers.iter().map(|l| l.activation).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.in_dim() {
            return Err(Error::DimMismatch {
                context: "mlp input",
                expected: self.in_dim(),
                got: input.len(),
            });
        }
        Ok(())
    }

    /// Deterministic forward evaluation.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Forward pass that records the activations needed by [`Self::backward`].
    pub fn forward_taped(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(input)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        for layer in &self.layers {
            let mut out = Vec::new();
            layer.forward_into(acts.last().unwrap(), &mut out);
            acts.push(out);
        }
        let output = acts.last().unwrap().clone();
        Ok((output, Tape { acts }))
    }

    /// Reverse-mode pass. `upstream` is dLoss/dOutput; returns the parameter
    /// gradients and dLoss/dInput so callers can chain through the network.
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<(Grads, Vec<f64>)> {
        if tape.acts.len() != self.layers.len() + 1
            || tape
                .acts
                .iter()
                .zip(std::iter::once(self.in_dim()).chain(self.layers.iter().map(|l| l.out_dim)))
                .any(|(a, d)| a.len() != d)
        {
            return Err(Error::InvalidArgument(
                "tape does not match network shape (stale or from another net)".into(),
            ));
        }
        if upstream.len() != self.out_dim() {
            return Err(Error::DimMismatch {
                context: "backward upstream",
                expected: self.out_dim(),
                got: upstream.len(),
            });
        }
        let mut grads = Grads::zeros_like(self);
        let mut delta = upstream.to_vec();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.acts[k];
            let output = &tape.acts[k + 1];
            for (d, y) in delta.iter_mut().zip(output) {
                *d *= layer.activation.derivative_from_output(*y);
            }
            let gw = &mut grads.weights[k];
            for (row, d) in delta.iter().enumerate() {
                let base = row * layer.in_dim;
                for (j, x) in input.iter().enumerate() {
                    gw[base + j] += d * x;
                }
                grads.bias[k][row] += d;
            }
            let mut down = vec![0.0; layer.in_dim];
            for (row, d) in delta.iter().enumerate() {
                let w = &layer.weights[row * layer.in_dim..(row + 1) * layer.in_dim];
                for (j, wj) in w.iter().enumerate() {
                    down[j] += wj * d;
                }
            }
            delta = down;
        }
        Ok((grads, delta))
    }

    /// Parameters flattened in layer order, weights before bias.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    /// Rebuilds a network from the layout produced by [`Self::flatten`].
    pub fn from_flat(dims: &[usize], activations: &[Activation], values: &[f64]) -> Result<Self> {
        let mut net = Self::zeros(dims, activations)?;
        if values.len() != net.param_count() {
            return Err(Error::DimMismatch {
                context: "flat parameter vector",
                expected: net.param_count(),
                got: values.len(),
            });
        }
        let mut cursor = values;
        for layer in &mut net.layers {
            let (w, rest) = cursor.split_at(layer.weights.len());
            let (b, rest) = rest.split_at(layer.bias.len());
            layer.weights.copy_from_slice(w);
            layer.bias.copy_from_slice(b);
            cursor = rest;
        }
        Ok(net)
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Mutable view used by the optimizer and tests.
    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub(crate) fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Overwrites a single flat parameter; index follows [`Self::flatten`]
    /// order. Used by finite-difference checks.
    pub fn nudge(&mut self, index: usize, delta: f64) {
        let mut i = index;
        for layer in &mut self.layers {
            if i < layer.weights.len() {
                layer.weights[i] += delta;
                return;
            }
            i -= layer.weights.len();
            if i < layer.bias.len() {
                layer.bias[i] += delta;
                return;
            }
            i -= layer.bias.len();
        }
        panic!("parameter index {index} out of range");
    }
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn matches(&self, other: &Grads) -> bool {
        self.weights.len() == other.weights.len()
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.len() == b.len())
            && self
                .bias
                .iter()
                .zip(&other.bias)
                .all(|(a, b)| a.len() == b.len())
    }

    pub fn add_assign(&mut self, other: &Grads) {
        debug_assert!(self.matches(other));
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self.values_mut() {
            *v *= factor;
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales the gradient down so its global norm is at most `max_norm`.
    pub fn clip_global_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale(max_norm / norm);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| *v == 0.0)
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias).flatten()
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(&mut self.bias).flatten()
    }

    /// Merges a batch of per-item gradients into their mean. Folds in input
    /// order so results do not depend on how the batch was scheduled.
    pub fn mean_of(items: Vec<Grads>) -> Option<Grads> {
        let n = items.len();
        let mut iter = items.into_iter();
        let mut acc = iter.next()?;
        for g in iter {
            acc.add_assign(&g);
        }
        acc.scale(1.0 / n as f64);
        Some(acc)
    }
}

/// `target <- tau * source + (1 - tau) * target`, elementwise.
pub fn soft_update(target: &mut Mlp, source: &Mlp, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) || tau == 0.0 {
        return Err(Error::InvalidArgument(format!(
            "tau must be in (0, 1], got {tau}"
        )));
    }
    if target.dims() != source.dims() {
        return Err(Error::DimMismatch {
            context: "soft_update shapes",
            expected: source.param_count(),
            got: target.param_count(),
        });
    }
    for (t, s) in target.layers.iter_mut().zip(&source.layers) {
        for (tv, sv) in t.weights.iter_mut().zip(&s.weights) {
            *tv = tau * sv + (1.0 - tau) * *tv;
        }
        for (tv, sv) in t.bias.iter_mut().zip(&s.bias) {
            *tv = tau * sv + (1.0 - tau) * *tv;
        }
    }
    Ok(())
}
