use rand_distr::{Distribution as _, Normal};
use serde::{Deserialize, Serialize};

use super::ClassScheme;
use crate::error::{Error, Result};
use crate::nonclassicality::WitnessKind;
use crate::rng::rng_from_seed;

/// Length of the network input: the first 40 photocount bins.
pub const INPUT_LEN: usize = 40;

/// Probabilities are clamped to this before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
}

/// Fully connected ReLU network with a softmax output layer.
///
/// `weights[l]` maps layer `l` to layer `l + 1` and is stored row-major with
/// shape `layer_sizes[l + 1] × layer_sizes[l]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<ClassScheme>,
    /// Generation-config hash of the training data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training_data_hash: Option<String>,
}

/// Hidden layer widths used for each witness kind.
pub fn default_hidden(kind: WitnessKind) -> Vec<usize> {
    match kind {
        WitnessKind::Intensity => vec![20, 20],
        WitnessKind::Probability => vec![50, 50, 50],
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidParams("a network needs at least an input and an output layer".into()));
    }
    if layer_sizes[0] != INPUT_LEN {
        return Err(Error::DimensionMismatch(format!("input layer must have {INPUT_LEN} neurons, got {}", layer_sizes[0])));
    }
    if layer_sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidParams(format!("empty layer in {layer_sizes:?}")));
    }
    if *layer_sizes.last().expect("nonempty") < 2 {
        return Err(Error::InvalidParams("the output layer needs at least two classes".into()));
    }
    Ok(())
}

impl MlpModel {
    /// Zero-bias network with weights drawn from N(0, 2/fan_in) on ReLU layers
    /// and N(0, 1/fan_in) on the output layer.
    pub fn new(layer_sizes: &[usize], seed: u64) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let mut rng = rng_from_seed(seed);
        let depth = layer_sizes.len() - 1;
        let mut weights = Vec::with_capacity(depth);
        for l in 0..depth {
            let fan_in = layer_sizes[l] as f64;
            let gain = if l + 1 == depth { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in).sqrt()).expect("positive std");
            weights.push((0..layer_sizes[l] * layer_sizes[l + 1]).map(|_| normal.sample(&mut rng)).collect());
        }
        Ok(Self::assemble(layer_sizes, weights))
    }

    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let weights = (0..layer_sizes.len() - 1).map(|l| vec![0.0; layer_sizes[l] * layer_sizes[l + 1]]).collect();
        Ok(Self::assemble(layer_sizes, weights))
    }

    /// Default classifier for `kind`: the default hidden layers of that kind and one output
    /// per class of `scheme`.
    pub fn for_scheme(kind: WitnessKind, scheme: &ClassScheme, seed: u64) -> Result<Self> {
        let mut sizes = vec![INPUT_LEN];
        sizes.extend(default_hidden(kind));
        sizes.push(scheme.n_classes);
        let mut m = Self::new(&sizes, seed)?;
        m.scheme = Some(*scheme);
        Ok(m)
    }

    fn assemble(layer_sizes: &[usize], weights: Vec<Vec<f64>>) -> Self {
        let depth = layer_sizes.len() - 1;
        let mut activations = vec![Activation::Relu; depth];
        activations[depth - 1] = Activation::Softmax;
        Self {
            layer_sizes: layer_sizes.to_vec(),
            activations,
            biases: layer_sizes[1..].iter().map(|&n| vec![0.0; n]).collect(),
            weights,
            scheme: None,
            training_data_hash: None,
        }
    }

    pub fn n_classes(&self) -> usize {
        *self.layer_sizes.last().expect("validated")
    }

    pub fn n_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Structural and numerical consistency, used after deserialization.
    pub fn validate(&self) -> Result<()> {
        check_sizes(&self.layer_sizes)?;
        let depth = self.layer_sizes.len() - 1;
        if self.weights.len() != depth || self.biases.len() != depth || self.activations.len() != depth {
            return Err(Error::DimensionMismatch("layer count disagrees with layer_sizes".into()));
        }
        for l in 0..depth {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            if self.weights[l].len() != fan_in * fan_out || self.biases[l].len() != fan_out {
                return Err(Error::DimensionMismatch(format!("layer {l} has parameter arrays of the wrong size")));
            }
            let expect = if l + 1 == depth { Activation::Softmax } else { Activation::Relu };
            if self.activations[l] != expect {
                return Err(Error::InvalidParams(format!("layer {l} must use {expect:?}")));
            }
        }
        if self.weights.iter().chain(&self.biases).flatten().any(|w| !w.is_finite()) {
            return Err(Error::NumericalInstability("non-finite network parameter".into()));
        }
        if let Some(s) = &self.scheme {
            if s.n_classes != self.n_classes() {
                return Err(Error::DimensionMismatch(format!(
                    "class scheme has {} classes, output layer {}",
                    s.n_classes,
                    self.n_classes()
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - top).exp()).collect();
    let total: f64 = out.iter().sum();
    for q in out.iter_mut() {
        *q /= total;
    }
    out
}

/// Per-layer activations of one forward pass; `acts[0]` is the input and
/// `acts[depth]` the softmax output.
pub(crate) struct Trace {
    pub acts: Vec<Vec<f64>>,
}

fn affine(w: &[f64], b: &[f64], input: &[f64], out: &mut [f64]) {
    let fan_in = input.len();
    for (j, o) in out.iter_mut().enumerate() {
        let row = &w[j * fan_in..(j + 1) * fan_in];
        *o = b[j] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>();
    }
}

pub(crate) fn forward_trace(model: &MlpModel, x: &[f64]) -> Result<Trace> {
    if x.len() != model.layer_sizes[0] {
        return Err(Error::DimensionMismatch(format!("input has {} entries, expected {}", x.len(), model.layer_sizes[0])));
    }
    let depth = model.weights.len();
    let mut acts = Vec::with_capacity(depth + 1);
    acts.push(x.to_vec());
    for l in 0..depth {
        let mut z = vec![0.0; model.layer_sizes[l + 1]];
        affine(&model.weights[l], &model.biases[l], &acts[l], &mut z);
        if l + 1 == depth {
            z = softmax(&z);
        } else {
            for v in z.iter_mut() {
                *v = v.max(0.0);
            }
        }
        acts.push(z);
    }
    Ok(Trace { acts })
}

/// Class probabilities for one input histogram.
pub fn mlp_forward(model: &MlpModel, x: &[f64]) -> Result<Vec<f64>> {
    Ok(forward_trace(model, x)?.acts.pop().expect("output layer"))
}

/// Categorical cross-entropy `−Σ p_i ln q_i` with `q_i` clamped at [`PROB_CLAMP`].
pub fn cross_entropy(onehot: &[f64], q: &[f64]) -> f64 {
    -onehot.iter().zip(q).filter(|(p, _)| **p != 0.0).map(|(p, q)| p * q.max(PROB_CLAMP).ln()).sum::<f64>()
}

/// Parameter-shaped gradient (or moment) arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &MlpModel) -> Self {
        Self {
            weights: model.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: model.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn scale(&mut self, k: f64) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()).flatten() {
            *v *= k;
        }
    }

    fn fill_zero(&mut self) {
        for v in self.weights.iter_mut().chain(self.biases.iter_mut()).flatten() {
            *v = 0.0;
        }
    }
}

/// Accumulate the gradient of `cross_entropy(onehot, mlp_forward(x))` into
/// `grads` and return the loss. The softmax and the cross-entropy are
/// differentiated together (`∂L/∂z = q − onehot`); ReLU has zero slope at 0.
pub(crate) fn accumulate_gradient(model: &MlpModel, x: &[f64], onehot: &[f64], grads: &mut Gradients) -> Result<f64> {
    if onehot.len() != model.n_classes() {
        return Err(Error::DimensionMismatch(format!(
            "target has {} classes, network {}",
            onehot.len(),
            model.n_classes()
        )));
    }
    let trace = forward_trace(model, x)?;
    let depth = model.weights.len();
    let q = &trace.acts[depth];
    let loss = cross_entropy(onehot, q);
    let mut delta: Vec<f64> = q.iter().zip(onehot).map(|(q, p)| q - p).collect();
    for l in (0..depth).rev() {
        let input = &trace.acts[l];
        let fan_in = input.len();
        let gw = &mut grads.weights[l];
        for (j, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grads.biases[l][j] += d;
            for (g, a) in gw[j * fan_in..(j + 1) * fan_in].iter_mut().zip(input) {
                *g += d * a;
            }
        }
        if l > 0 {
            let w = &model.weights[l];
            let mut prev = vec![0.0; fan_in];
            for (j, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, a) in prev.iter_mut().zip(&w[j * fan_in..(j + 1) * fan_in]) {
                    *p += d * a;
                }
            }
            // hidden activations are ReLU outputs: positive exactly where z > 0
            for (p, a) in prev.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
    }
    Ok(loss)
}

/// Exact gradient of the cross-entropy loss of one sample.
pub fn backprop(model: &MlpModel, x: &[f64], onehot: &[f64]) -> Result<Gradients> {
    let mut g = Gradients::zeros_like(model);
    accumulate_gradient(model, x, onehot, &mut g)?;
    Ok(g)
}

/// Mean loss and mean gradient over a batch, accumulated in batch order.
pub(crate) fn batch_gradient(model: &MlpModel, xs: &[&[f64]], onehots: &[&[f64]], grads: &mut Gradients) -> Result<f64> {
    grads.fill_zero();
    let mut loss = 0.0;
    for (x, y) in xs.iter().zip(onehots) {
        loss += accumulate_gradient(model, x, y, grads)?;
    }
    let k = 1.0 / xs.len() as f64;
    grads.scale(k);
    Ok(loss * k)
}

/// ADAM optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(model: &MlpModel) -> Self {
        Self::with_hyperparams(model, 1e-3, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(model: &MlpModel, lr: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            m: Gradients::zeros_like(model),
            v: Gradients::zeros_like(model),
            step: 0,
            lr,
            beta1,
            beta2,
            epsilon,
        }
    }
}

/// One ADAM update with bias-corrected moments.
pub fn adam_step(model: &mut MlpModel, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.weights.len() != model.weights.len()
        || grads.weights.iter().zip(&model.weights).any(|(a, b)| a.len() != b.len())
        || grads.biases.iter().zip(&model.biases).any(|(a, b)| a.len() != b.len())
    {
        return Err(Error::DimensionMismatch("gradient shape differs from the model".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.epsilon);
    let groups = model
        .weights
        .iter_mut()
        .zip(&grads.weights)
        .zip(state.m.weights.iter_mut().zip(state.v.weights.iter_mut()))
        .chain(
            model
                .biases
                .iter_mut()
                .zip(&grads.biases)
                .zip(state.m.biases.iter_mut().zip(state.v.biases.iter_mut())),
        );
    for ((p, g), (m, v)) in groups {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
