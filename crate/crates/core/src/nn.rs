//! Dense feed-forward networks with manual backpropagation, Adam, and a
//! tanh-squashed Gaussian policy head.
//!
//! Batches are matrices with one sample per row. Weights are stored
//! `outputs × inputs`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, numeric, Result};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Sampled actions are kept this far inside the open interval (−1, 1).
pub const ACTION_EDGE: f64 = 1e-12;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    fn derivative(self, z: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub biases: DVector<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.nrows()
    }
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net.layers.iter().map(|l| DMatrix::zeros(l.outputs(), l.inputs())).collect(),
            biases: net.layers.iter().map(|l| DVector::zeros(l.outputs())).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        let w = self.weights.iter().flat_map(|w| w.iter());
        let b = self.biases.iter().flat_map(|b| b.iter());
        w.chain(b).fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer, then the network output last.
    pub activations: Vec<DMatrix<f64>>,
    pub pre_activations: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &DMatrix<f64> {
        self.activations.last().expect("cache holds the input at least")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    /// Builds a network from layer widths, e.g. `[6, 256, 256, 45]`.
    /// Weights and biases are drawn from `U(±1/√fan_in)`.
    pub fn new<R: Rng>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let activation = if i + 2 == sizes.len() { output } else { hidden };
                Layer {
                    weights: DMatrix::from_fn(w[1], w[0], |_, _| rng.random_range(-bound..bound)),
                    biases: DVector::from_fn(w[1], |_, _| rng.random_range(-bound..bound)),
                    activation,
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("a network needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.biases.len() != l.outputs() {
                return Err(invalid(format!("layer {i}: bias length differs from output width")));
            }
            if i > 0 && layers[i - 1].outputs() != l.inputs() {
                return Err(invalid(format!("layer {i}: input width does not match the previous layer")));
            }
            if l.weights.iter().chain(l.biases.iter()).any(|v| !v.is_finite()) {
                return Err(invalid(format!("layer {i}: non-finite parameter")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.biases.iter()).all(|v| v.is_finite()))
    }

    /// Output for a single input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let out = self.forward_batch(&DMatrix::from_row_slice(1, x.len(), x))?;
        Ok(out.row(0).iter().copied().collect())
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for l in &self.layers {
            a = affine(l, &a);
            a.apply(|v| *v = l.activation.apply(*v));
        }
        Ok(a)
    }

    pub fn forward_cache(&self, x: &DMatrix<f64>) -> Result<ForwardCache> {
        self.check_input(x)?;
        let mut activations = vec![x.clone()];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let z = affine(l, activations.last().expect("non-empty"));
            let a = z.map(|v| l.activation.apply(v));
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardCache {
            activations,
            pre_activations,
        })
    }

    /// Backpropagates `grad_out = ∂L/∂output` (batch × outputs).
    /// Returns parameter gradients summed over the batch and `∂L/∂input`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &DMatrix<f64>) -> (Gradients, DMatrix<f64>) {
        let mut grads = Gradients::zeros_like(self);
        let mut delta = grad_out.clone();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let z = &cache.pre_activations[i];
            let y = &cache.activations[i + 1];
            delta.zip_zip_apply(z, y, |d, z, y| *d *= l.activation.derivative(z, y));
            grads.weights[i] = delta.transpose() * &cache.activations[i];
            grads.biases[i] = delta.row_sum().transpose();
            delta = &delta * &l.weights;
        }
        (grads, delta)
    }

    /// `self ← (1 − τ)·self + τ·source`.
    pub fn polyak_update(&mut self, source: &Network, tau: f64) {
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            t.weights.zip_apply(&s.weights, |a, b| *a = (1.0 - tau) * *a + tau * b);
            t.biases.zip_apply(&s.biases, |a, b| *a = (1.0 - tau) * *a + tau * b);
        }
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(invalid(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn to_document(&self) -> NetworkDocument {
        NetworkDocument {
            version: CHECKPOINT_VERSION,
            layers: self
                .layers
                .iter()
                .map(|l| LayerDocument {
                    inputs: l.inputs(),
                    outputs: l.outputs(),
                    activation: l.activation,
                    weights: (0..l.outputs())
                        .flat_map(|r| (0..l.inputs()).map(move |c| (r, c)))
                        .map(|(r, c)| l.weights[(r, c)])
                        .collect(),
                    biases: l.biases.iter().copied().collect(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &NetworkDocument) -> Result<Self> {
        if doc.version != CHECKPOINT_VERSION {
            return Err(invalid(format!("unsupported checkpoint version {}", doc.version)));
        }
        let layers = doc
            .layers
            .iter()
            .map(|d| {
                if d.weights.len() != d.inputs * d.outputs || d.biases.len() != d.outputs {
                    return Err(invalid("layer document has inconsistent sizes"));
                }
                Ok(Layer {
                    weights: DMatrix::from_row_slice(d.outputs, d.inputs, &d.weights),
                    biases: DVector::from_column_slice(&d.biases),
                    activation: d.activation,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_layers(layers)
    }
}

fn affine(l: &Layer, x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut z = x * l.weights.transpose();
    for mut row in z.row_iter_mut() {
        row += l.biases.transpose();
    }
    z
}

/// Checkpoint layout: layers in order, weights row-major `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub version: u32,
    pub layers: Vec<LayerDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDocument {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub first_moment: Gradients,
    pub second_moment: Gradients,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(net: &Network, config: AdamConfig) -> Self {
        Self {
            config,
            first_moment: Gradients::zeros_like(net),
            second_moment: Gradients::zeros_like(net),
            step: 0,
        }
    }

    /// One Adam step descending `grads`.
    pub fn apply(&mut self, net: &mut Network, grads: &Gradients) {
        let c = self.config;
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            *p -= c.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
        };
        for (i, l) in net.layers.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.first_moment.weights[i], &mut self.second_moment.weights[i], &grads.weights[i]);
            for k in 0..l.weights.len() {
                update(&mut l.weights[k], &mut m[k], &mut v[k], g[k]);
            }
            let (m, v, g) = (&mut self.first_moment.biases[i], &mut self.second_moment.biases[i], &grads.biases[i]);
            for k in 0..l.biases.len() {
                update(&mut l.biases[k], &mut m[k], &mut v[k], g[k]);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loss {
    Mse,
}

/// Mean squared error over all batch entries and its gradient.
pub fn mse(pred: &DMatrix<f64>, target: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let diff = pred - target;
    let n = diff.len() as f64;
    (diff.norm_squared() / n, diff * (2.0 / n))
}

/// One optimiser step on a batch; returns the loss before the step.
pub fn train_step(
    net: &mut Network,
    x: &DMatrix<f64>,
    target: &DMatrix<f64>,
    loss: Loss,
    opt: &mut OptimizerState,
) -> Result<f64> {
    if x.nrows() == 0 {
        return Err(invalid("empty batch"));
    }
    if target.shape() != (x.nrows(), net.output_dim()) {
        return Err(invalid("target shape does not match the batch"));
    }
    let cache = net.forward_cache(x)?;
    let (value, grad) = match loss {
        Loss::Mse => mse(cache.output(), target),
    };
    if !value.is_finite() {
        return Err(numeric("training loss is not finite"));
    }
    let (grads, _) = net.backward(&cache, &grad);
    if !grads.is_finite() {
        return Err(numeric("gradient is not finite"));
    }
    opt.apply(net, &grads);
    Ok(value)
}

/// Per-feature affine standardisation of network inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Fits mean and standard deviation; near-constant features keep unit scale.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or_else(|| invalid("cannot fit a normalizer on no rows"))?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for k in 0..d {
                var[k] += (r[k] - mean[k]).powi(2) / n;
            }
        }
        let scale = var.iter().map(|v| if v.sqrt() > 1e-8 { v.sqrt() } else { 1.0 }).collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn apply_rows(&self, rows: &[Vec<f64>]) -> DMatrix<f64> {
        let d = self.mean.len();
        DMatrix::from_fn(rows.len(), d, |r, c| (rows[r][c] - self.mean[c]) / self.scale[c])
    }
}

/// Draw from a tanh-squashed diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct SquashedSample {
    pub action: Vec<f64>,
    pub pre_tanh: Vec<f64>,
    /// Standard normal noise used for the draw.
    pub noise: Vec<f64>,
    pub log_prob: f64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log(1 − tanh(u)²)` in a form that stays finite for large `|u|`.
pub fn log_tanh_jacobian(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

pub fn clamp_log_std(log_std: f64) -> f64 {
    log_std.clamp(LOG_STD_MIN, LOG_STD_MAX)
}

/// Log density of `tanh(u)` where `u ~ N(mean, exp(log_std)²)`.
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], pre_tanh: &[f64]) -> f64 {
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    mean.iter()
        .zip(log_std)
        .zip(pre_tanh)
        .map(|((m, ls), u)| {
            let ls = clamp_log_std(*ls);
            let e = (u - m) / ls.exp();
            -0.5 * e * e - ls - half_log_2pi - log_tanh_jacobian(*u)
        })
        .sum()
}

pub fn squash(u: f64) -> f64 {
    u.tanh().clamp(-1.0 + ACTION_EDGE, 1.0 - ACTION_EDGE)
}

pub fn gaussian_policy_sample<R: Rng>(mean: &[f64], log_std: &[f64], rng: &mut R) -> SquashedSample {
    let noise: Vec<f64> = mean.iter().map(|_| rng.sample(StandardNormal)).collect();
    let pre_tanh: Vec<f64> = mean
        .iter()
        .zip(log_std)
        .zip(&noise)
        .map(|((m, ls), e)| m + clamp_log_std(*ls).exp() * e)
        .collect();
    SquashedSample {
        action: pre_tanh.iter().map(|u| squash(*u)).collect(),
        log_prob: squashed_log_prob(mean, log_std, &pre_tanh),
        pre_tanh,
        noise,
    }
}
