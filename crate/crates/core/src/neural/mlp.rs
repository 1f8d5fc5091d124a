use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{mismatch, Error, Result};

/// What the last layer's affine output goes through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Linear,
    Softmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Dense<F> {
    /// `fan_in x fan_out`, so a batch maps as `x · W + b`.
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Dense<F> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    fn len(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Dense feedforward network with rectifier hidden layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct MlpNet<F> {
    sizes: Vec<usize>,
    layers: Vec<Dense<F>>,
    head: Head,
}

/// Gradients, laid out exactly like the network's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "F: Scalar")]
pub struct Gradients<F> {
    pub layers: Vec<Dense<F>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn zeros_like(net: &MlpNet<F>) -> Self {
        Self { layers: net.layers.iter().map(|l| Dense::zeros(l.weight.nrows(), l.weight.ncols())).collect() }
    }

    pub fn scale(&mut self, factor: F) {
        for layer in &mut self.layers {
            layer.weight.mapv_inplace(|w| w * factor);
            layer.bias.mapv_inplace(|b| b * factor);
        }
    }

    /// Parameters in flat order: each layer's weights row-major, then its bias.
    pub fn iter(&self) -> impl Iterator<Item = F> + '_ {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub(crate) fn same_shape(&self, net: &MlpNet<F>) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weight.dim() == l.weight.dim() && g.bias.dim() == l.bias.dim())
    }
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardPass<F> {
    /// Input to each layer; entry 0 is the batch itself.
    inputs: Vec<Array2<F>>,
    /// Affine output of the last layer.
    pub logits: Array2<F>,
    /// Head applied to `logits`.
    pub output: Array2<F>,
}

impl<F: Scalar> MlpNet<F> {
    /// Glorot-uniform weights `±sqrt(6 / (fan_in + fan_out))` and zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], head: Head, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, head)?;
        for layer in &mut net.layers {
            let (fan_in, fan_out) = layer.weight.dim();
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            layer.weight.mapv_inplace(|_| F::from_f64(rng.random_range(-limit..limit)).expect("finite"));
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], head: Head) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "layer sizes must be at least [input, output] and positive, got {sizes:?}"
            )));
        }
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Ok(Self { sizes: sizes.to_vec(), layers, head })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_width(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.sizes.last().expect("at least two sizes")
    }

    pub fn layers(&self) -> &[Dense<F>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense<F>] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    fn locate(&self, mut index: usize) -> (usize, Option<(usize, usize)>, usize) {
        for (l, layer) in self.layers.iter().enumerate() {
            if index < layer.weight.len() {
                let cols = layer.weight.ncols();
                return (l, Some((index / cols, index % cols)), 0);
            }
            index -= layer.weight.len();
            if index < layer.bias.len() {
                return (l, None, index);
            }
            index -= layer.bias.len();
        }
        panic!("parameter index out of range");
    }

    /// Parameter `index` in the flat order of [`Gradients::iter`].
    pub fn param(&self, index: usize) -> F {
        match self.locate(index) {
            (l, Some(ij), _) => self.layers[l].weight[ij],
            (l, None, b) => self.layers[l].bias[b],
        }
    }

    pub fn set_param(&mut self, index: usize, value: F) {
        match self.locate(index) {
            (l, Some(ij), _) => self.layers[l].weight[ij] = value,
            (l, None, b) => self.layers[l].bias[b] = value,
        }
    }

    /// Overwrites this network's parameters with `other`'s.
    pub fn copy_from(&mut self, other: &MlpNet<F>) {
        assert_eq!(self.sizes, other.sizes, "target and online shapes differ");
        for (dst, src) in self.layers.iter_mut().zip(&other.layers) {
            dst.weight.assign(&src.weight);
            dst.bias.assign(&src.bias);
        }
    }

    fn check_input(&self, x: &ArrayView2<F>) -> Result<()> {
        if x.ncols() != self.input_width() {
            return Err(mismatch(format!("input width {}", self.input_width()), x.ncols()));
        }
        Ok(())
    }

    /// Outputs for a batch of row vectors.
    pub fn forward(&self, x: ArrayView2<F>) -> Result<Array2<F>> {
        self.check_input(&x)?;
        let mut h = affine(x, &self.layers[0]);
        for layer in &self.layers[1..] {
            relu_inplace(&mut h);
            h = affine(h.view(), layer);
        }
        Ok(self.apply_head(h))
    }

    pub fn forward_pass(&self, x: ArrayView2<F>) -> Result<ForwardPass<F>> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_owned());
        let mut h = affine(x, &self.layers[0]);
        for layer in &self.layers[1..] {
            relu_inplace(&mut h);
            let next = affine(h.view(), layer);
            inputs.push(h);
            h = next;
        }
        let output = self.apply_head(h.clone());
        Ok(ForwardPass { inputs, logits: h, output })
    }

    /// Which hidden units are active for each row of `x`, flattened.
    pub fn rectifier_pattern(&self, x: ArrayView2<F>) -> Result<Vec<bool>> {
        let pass = self.forward_pass(x)?;
        Ok(pass.inputs[1..].iter().flat_map(|h| h.iter().map(|&v| v > F::zero())).collect())
    }

    fn apply_head(&self, logits: Array2<F>) -> Array2<F> {
        match self.head {
            Head::Linear => logits,
            Head::Softmax => softmax_rows(logits),
        }
    }

    /// Backpropagates `d_logits`, the loss gradient with respect to the last
    /// layer's affine output.
    pub fn backward(&self, pass: &ForwardPass<F>, d_logits: Array2<F>) -> Gradients<F> {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = d_logits;
        for l in (0..self.layers.len()).rev() {
            let input = &pass.inputs[l];
            let weight = input.t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut upstream = delta.dot(&self.layers[l].weight.t());
                Zip::from(&mut upstream).and(input).for_each(|d, &a| {
                    if a <= F::zero() {
                        *d = F::zero();
                    }
                });
                delta = upstream;
            }
            grads.push(Dense { weight, bias });
        }
        grads.reverse();
        Gradients { layers: grads }
    }
}

fn affine<F: Scalar>(x: ArrayView2<F>, layer: &Dense<F>) -> Array2<F> {
    let mut out = x.dot(&layer.weight);
    out += &layer.bias;
    out
}

fn relu_inplace<F: Scalar>(h: &mut Array2<F>) {
    h.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
}

/// Row-wise softmax with the row maximum subtracted first.
pub fn softmax_rows<F: Scalar>(mut logits: Array2<F>) -> Array2<F> {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        row.mapv_inplace(|z| (z - max).exp());
        let total = row.sum();
        row.mapv_inplace(|e| e / total);
    }
    logits
}

/// Row-wise log-softmax, computed as `z - max - ln Σ exp(z - max)`.
pub fn log_softmax_rows<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let log_total = row.iter().map(|&z| (z - max).exp()).fold(F::zero(), |a, b| a + b).ln();
        row.mapv_inplace(|z| z - max - log_total);
    }
    out
}
