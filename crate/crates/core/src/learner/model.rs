use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{rng_for, tag};

/// Hidden-layer nonlinearity. Both variants map 0 to 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
        }
    }

    fn init_std(self, fan_in: usize) -> f64 {
        let gain = match self {
            Activation::Relu => 2.0,
            Activation::Tanh => 1.0,
        };
        (gain / fan_in as f64).sqrt()
    }
}

/// Layer sizes from input to head plus the hidden activation.
/// `[2, 8, 2]` is a 2-input network with one hidden layer of 8 and 2 outputs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layer_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Self {
        Self {
            layer_sizes,
            activation,
        }
    }
}

/// A fully connected layer; `weights` is `out_dim x in_dim`, row-major, so
/// row `j` feeds output `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.in_dim..(j + 1) * self.in_dim]
    }

    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.weights[j * self.in_dim..(j + 1) * self.in_dim]
    }

    fn same_shape(&self, other: &Dense) -> bool {
        self.in_dim == other.in_dim && self.out_dim == other.out_dim
    }

    /// `out[i, j] = bias[j] + <x_i, w_j>` for a row-major `n x in_dim` batch.
    fn affine(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(n * self.out_dim);
        for xi in x.chunks_exact(self.in_dim).take(n) {
            for j in 0..self.out_dim {
                let w = self.row(j);
                let mut s = self.bias[j];
                for (a, b) in xi.iter().zip(w) {
                    s += a * b;
                }
                out.push(s);
            }
        }
        out
    }
}

/// Per-parameter tensors shaped like a model's layers. Used for gradients,
/// momentum buffers and Fisher diagonals.
pub type LayerTensors = Vec<Dense>;

pub fn zeros_like(layers: &[Dense]) -> LayerTensors {
    layers
        .iter()
        .map(|l| Dense::zeros(l.in_dim, l.out_dim))
        .collect()
}

/// All learner parameters. The last layer is the classifier head with one
/// row per entry of `head_labels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub layers: Vec<Dense>,
    pub activation: Activation,
    pub head_labels: Vec<usize>,
    /// Base seed for head-row initialization; a row for label `l` always
    /// starts from the same draw regardless of when it is added.
    pub seed: u64,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub n: usize,
    /// `inputs[l]` is the input batch of layer `l`; `inputs[last]` are the
    /// penultimate features.
    pub inputs: Vec<Vec<f64>>,
    /// Pre-activations of each layer; the last one are the logits.
    pub pre: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn logits(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn features(&self) -> &[f64] {
        self.inputs.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn init_rows(rows: usize, fan_in: usize, std: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..rows * fan_in)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

impl ModelState {
    /// Body (input plus hidden sizes) with a head over `labels`.
    pub fn with_labels(
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        labels: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 || hidden.contains(&0) {
            return Err(Error::config("layer sizes must be positive"));
        }
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut fan_in = input_dim;
        for (l, &width) in hidden.iter().enumerate() {
            let mut rng = rng_for(seed, &[tag("hidden"), l as u64]);
            layers.push(Dense {
                in_dim: fan_in,
                out_dim: width,
                weights: init_rows(width, fan_in, activation.init_std(fan_in), &mut rng),
                bias: vec![0.0; width],
            });
            fan_in = width;
        }
        let mut model = Self {
            layers,
            activation,
            head_labels: Vec::new(),
            seed,
        };
        model.layers.push(Dense::zeros(fan_in, 0));
        model.expand_head(labels)?;
        Ok(model)
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.head().in_dim
    }

    pub fn head(&self) -> &Dense {
        self.layers.last().expect("model has a head")
    }

    pub fn head_mut(&mut self) -> &mut Dense {
        self.layers.last_mut().expect("model has a head")
    }

    pub fn num_classes(&self) -> usize {
        self.head_labels.len()
    }

    /// Map from label to head row.
    pub fn label_rows(&self) -> BTreeMap<usize, usize> {
        self.head_labels
            .iter()
            .enumerate()
            .map(|(r, &l)| (l, r))
            .collect()
    }

    /// Appends freshly initialized head rows for `new_labels`; existing rows
    /// are left bitwise untouched.
    pub fn expand_head(&mut self, new_labels: &[usize]) -> Result<()> {
        let mut seen: std::collections::BTreeSet<usize> =
            self.head_labels.iter().copied().collect();
        for &l in new_labels {
            if !seen.insert(l) {
                return Err(Error::validation(format!(
                    "label {l} already has a head row"
                )));
            }
        }
        let activation = self.activation;
        let seed = self.seed;
        let head = self.head_mut();
        let fan_in = head.in_dim;
        let std = activation.init_std(fan_in);
        for &l in new_labels {
            let mut rng = rng_for(seed, &[tag("head-row"), l as u64]);
            head.weights.extend(init_rows(1, fan_in, std, &mut rng));
            head.bias.push(0.0);
            head.out_dim += 1;
        }
        self.head_labels.extend_from_slice(new_labels);
        Ok(())
    }

    /// Rows of a batch as one contiguous buffer.
    pub fn flatten_batch<'a>(
        &self,
        rows: impl IntoIterator<Item = &'a [f64]>,
    ) -> Result<(Vec<f64>, usize)> {
        let d = self.input_dim();
        let mut buf = Vec::new();
        let mut n = 0;
        for r in rows {
            if r.len() != d {
                return Err(Error::shape(format!(
                    "input has dimension {}, model expects {d}",
                    r.len()
                )));
            }
            buf.extend_from_slice(r);
            n += 1;
        }
        Ok((buf, n))
    }

    /// Full forward pass over a flattened batch, keeping intermediates.
    pub fn forward_cached(&self, x: Vec<f64>, n: usize) -> ForwardCache {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = x;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&current, n);
            inputs.push(current);
            if l < last {
                current = z.iter().map(|&v| self.activation.apply(v)).collect();
            } else {
                current = Vec::new();
            }
            pre.push(z);
        }
        ForwardCache { n, inputs, pre }
    }

    /// Logits, one row per input and one column per head label.
    pub fn forward(&self, batch: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let (x, n) = self.flatten_batch(batch.iter().map(Vec::as_slice))?;
        let cache = self.forward_cached(x, n);
        let k = self.num_classes();
        if k == 0 {
            return Ok(vec![Vec::new(); n]);
        }
        Ok(cache
            .logits()
            .chunks_exact(k)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Penultimate-layer features (input of the head) for each row.
    pub fn features(&self, batch: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let (x, n) = self.flatten_batch(batch.iter().copied())?;
        let cache = self.forward_cached(x, n);
        let f = self.feature_dim();
        Ok(cache
            .features()
            .chunks_exact(f)
            .map(<[f64]>::to_vec)
            .collect())
    }

    /// Gradients of a loss with respect to every parameter given the loss
    /// gradient with respect to the logits (`n x k`, row-major).
    pub fn backward(&self, cache: &ForwardCache, dlogits: &[f64]) -> LayerTensors {
        let mut grads = zeros_like(&self.layers);
        let n = cache.n;
        let mut delta = dlogits.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &cache.inputs[l];
            let g = &mut grads[l];
            for i in 0..n {
                let xi = &input[i * layer.in_dim..(i + 1) * layer.in_dim];
                let di = &delta[i * layer.out_dim..(i + 1) * layer.out_dim];
                for (j, &dz) in di.iter().enumerate() {
                    if dz == 0.0 {
                        continue;
                    }
                    g.bias[j] += dz;
                    let row = &mut g.weights[j * layer.in_dim..(j + 1) * layer.in_dim];
                    for (w, &x) in row.iter_mut().zip(xi) {
                        *w += dz * x;
                    }
                }
            }
            if l == 0 {
                break;
            }
            // propagate to the previous layer's pre-activation
            let prev_pre = &cache.pre[l - 1];
            let mut next = vec![0.0; n * layer.in_dim];
            for i in 0..n {
                let di = &delta[i * layer.out_dim..(i + 1) * layer.out_dim];
                let out = &mut next[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (j, &dz) in di.iter().enumerate() {
                    if dz == 0.0 {
                        continue;
                    }
                    for (o, &w) in out.iter_mut().zip(layer.row(j)) {
                        *o += dz * w;
                    }
                }
                let p = &prev_pre[i * layer.in_dim..(i + 1) * layer.in_dim];
                for (o, &z) in out.iter_mut().zip(p) {
                    *o *= self.activation.derivative(z);
                }
            }
            delta = next;
        }
        grads
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Checks that `other` has the same body and at least the first
    /// `other.head_labels.len()` head rows with matching labels.
    pub fn head_extends(&self, other: &ModelState) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers[..self.layers.len() - 1]
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.same_shape(b))
            && self.head().in_dim == other.head().in_dim
            && self.head_labels.starts_with(&other.head_labels)
    }
}

/// Builds a model from an explicit architecture; the head covers labels
/// `0..k` where `k` is the last layer size.
pub fn init_model(arch: &Architecture, seed: u64) -> Result<ModelState> {
    if arch.layer_sizes.len() < 2 {
        return Err(Error::config(
            "architecture needs an input size and at least one layer",
        ));
    }
    if arch.layer_sizes.contains(&0) {
        return Err(Error::config(format!(
            "architecture {:?} has a zero-sized layer",
            arch.layer_sizes
        )));
    }
    let (input, rest) = arch.layer_sizes.split_first().expect("len >= 2");
    let (&classes, hidden) = rest.split_last().expect("len >= 2");
    let labels: Vec<usize> = (0..classes).collect();
    ModelState::with_labels(*input, hidden, arch.activation, &labels, seed)
}

/// Flat parameter access in layer order (weights, then bias).
pub(crate) fn tensors(layers: &[Dense]) -> impl Iterator<Item = &[f64]> {
    layers
        .iter()
        .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
}

pub(crate) fn tensors_mut(layers: &mut [Dense]) -> impl Iterator<Item = &mut Vec<f64>> {
    layers
        .iter_mut()
        .flat_map(|l| [&mut l.weights, &mut l.bias])
}

pub(crate) fn get_flat(layers: &[Dense], mut idx: usize) -> f64 {
    for t in tensors(layers) {
        if idx < t.len() {
            return t[idx];
        }
        idx -= t.len();
    }
    panic!("parameter index out of range")
}

pub(crate) fn set_flat(layers: &mut [Dense], mut idx: usize, value: f64) {
    for t in tensors_mut(layers) {
        if idx < t.len() {
            t[idx] = value;
            return;
        }
        idx -= t.len();
    }
    panic!("parameter index out of range")
}
