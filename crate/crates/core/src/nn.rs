//! Small dense networks with hand-written reverse mode.
//!
//! Hidden layers use `tanh`, the last layer is linear. Forward passes can be
//! recorded into a [`Tape`]; [`Mlp::backward`] consumes a tape and accumulates
//! parameter gradients into a [`Gradients`] buffer (add semantics).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One affine layer, `y = W x + b` with `W` stored `out_dim × in_dim` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim).map(|_| rng.random_range(-limit..limit)).collect();
        Self { in_dim, out_dim, weights, biases: vec![0.0; out_dim] }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, weights: vec![0.0; in_dim * out_dim], biases: vec![0.0; out_dim] }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(o, &b)| {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        }));
    }

    fn check(&self) -> Result<()> {
        if self.weights.len() != self.in_dim * self.out_dim {
            return Err(Error::Shape { expected: self.in_dim * self.out_dim, actual: self.weights.len() });
        }
        if self.biases.len() != self.out_dim {
            return Err(Error::Shape { expected: self.out_dim, actual: self.biases.len() });
        }
        if self.weights.iter().chain(&self.biases).any(|v| !v.is_finite()) {
            return Err(Error::Config("non-finite parameter".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Activations recorded by a forward pass: `values[0]` is the input,
/// `values[k + 1]` the output of layer `k`.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        !self.values.is_empty()
    }

    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Parameter gradients laid out like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zero(&mut self) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(|g| g.fill(0.0));
    }

    pub fn scale(&mut self, k: f64) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).flatten().for_each(|g| *g *= k);
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn norm(&self) -> f64 {
        self.weights.iter().chain(&self.biases).flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// Rescales so the global L2 norm is at most `max`.
    pub fn clip_norm(&mut self, max: f64) {
        let norm = self.norm();
        if norm > max {
            self.scale(max / norm);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).flatten().all(|g| g.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.weights.iter().chain(&self.biases).flatten().fold(0.0, |m, g| m.max(g.abs()))
    }
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an mlp needs at least input and output sizes");
        let layers = sizes.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("mlp without layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape { expected: pair[0].out_dim, actual: pair[1].in_dim });
            }
        }
        for layer in &layers {
            layer.check()?;
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn shapes(&self) -> Vec<[usize; 2]> {
        self.layers.iter().map(|l| [l.in_dim, l.out_dim]).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Zeroes the output layer so the network starts at a constant zero output.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().expect("non-empty");
        last.weights.fill(0.0);
        last.biases.fill(0.0);
    }

    pub fn gradients(&self) -> Gradients {
        Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: self.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        self.forward_recorded(x, &mut tape)?;
        Ok(tape.values.pop().unwrap_or_default())
    }

    pub fn forward_recorded(&self, x: &[f64], tape: &mut Tape) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape { expected: self.input_dim(), actual: x.len() });
        }
        tape.values.resize_with(self.layers.len() + 1, Vec::new);
        tape.values[0].clear();
        tape.values[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let (done, rest) = tape.values.split_at_mut(k + 1);
            let out = &mut rest[0];
            layer.apply(&done[k], out);
            if k < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
        Ok(())
    }

    /// Accumulates `d(loss)/d(params)` into `grads` given `d(loss)/d(output)`.
    /// Returns `d(loss)/d(input)`.
    pub fn backward(&self, tape: &Tape, d_out: &[f64], grads: &mut Gradients) -> Result<Vec<f64>> {
        if tape.values.len() != self.layers.len() + 1 {
            return Err(Error::BackwardBeforeForward);
        }
        if d_out.len() != self.output_dim() {
            return Err(Error::Shape { expected: self.output_dim(), actual: d_out.len() });
        }
        let mut delta = d_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let input = &tape.values[k];
            let gw = &mut grads.weights[k];
            let gb = &mut grads.biases[k];
            let mut d_input = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = o * layer.in_dim;
                for (i, &x) in input.iter().enumerate() {
                    gw[row + i] += d * x;
                    d_input[i] += d * layer.weights[row + i];
                }
            }
            if k > 0 {
                // input of layer k is tanh output of layer k-1
                for (g, &h) in d_input.iter_mut().zip(input) {
                    *g *= 1.0 - h * h;
                }
            }
            delta = d_input;
        }
        Ok(delta)
    }

    /// Mutable access to the `k`-th parameter in [`Gradients::flat`] order.
    pub fn param_mut(&mut self, mut k: usize) -> &mut f64 {
        for layer in &mut self.layers {
            let nw = layer.weights.len();
            if k < nw {
                return &mut layer.weights[k];
            }
            k -= nw;
            let nb = layer.biases.len();
            if k < nb {
                return &mut layer.biases[k];
            }
            k -= nb;
        }
        panic!("parameter index out of range");
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flat_params().iter().all(|v| v.is_finite())
    }
}
