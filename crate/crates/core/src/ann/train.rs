use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{batch_gradient, cross_entropy, mlp_forward, AdamState, Gradients, MlpModel, INPUT_LEN};
use super::{ClassScheme, TrainingSet};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, task_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Fraction of the samples used for training; the rest validates.
    pub split: f64,
    pub seed: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 250, batch_size: 256, split: 0.8, seed: 0, lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::InvalidParams(format!("split must lie in (0, 1), got {}", self.split)));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParams("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.epsilon > 0.0 && (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::InvalidParams("invalid ADAM hyperparameters".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean batch loss seen during the epoch.
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    /// Parameters after the last epoch.
    pub model: MlpModel,
    /// Snapshot with the highest validation accuracy (lowest validation loss
    /// among ties).
    pub best_model: MlpModel,
    pub best_epoch: Option<usize>,
    pub metrics: Vec<EpochMetrics>,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
}

/// Deterministic train/validation partition of `n` samples.
pub fn split_indices(n: usize, split: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(seed));
    let n_train = ((n as f64) * split).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::InvalidParams(format!("{n} samples cannot be split {split} into two nonempty parts")));
    }
    let val = idx.split_off(n_train);
    Ok((idx, val))
}

fn onehot(label: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[label] = 1.0;
    v
}

fn check_compatible(model: &MlpModel, ts: &TrainingSet) -> Result<()> {
    model.validate()?;
    if model.n_classes() != ts.scheme.n_classes {
        return Err(Error::DimensionMismatch(format!(
            "network has {} outputs, training set {} classes",
            model.n_classes(),
            ts.scheme.n_classes
        )));
    }
    if let Some((i, _)) = ts.samples.iter().enumerate().find(|(_, s)| s.x.len() != INPUT_LEN || s.label >= model.n_classes()) {
        return Err(Error::DimensionMismatch(format!("sample {i} does not fit the network")));
    }
    Ok(())
}

/// Mean loss and exact-class accuracy over `indices`.
fn loss_and_accuracy(model: &MlpModel, ts: &TrainingSet, indices: &[usize]) -> Result<(f64, f64)> {
    let n = model.n_classes();
    let mut loss = 0.0;
    let mut hits = 0usize;
    for &i in indices {
        let s = &ts.samples[i];
        let q = mlp_forward(model, &s.x)?;
        loss += cross_entropy(&onehot(s.label, n), &q);
        if argmax(&q) == s.label {
            hits += 1;
        }
    }
    let k = indices.len() as f64;
    Ok((loss / k, hits as f64 / k))
}

/// Mini-batch ADAM on the categorical cross-entropy.
///
/// The split is drawn from `seed`, and epoch `e` shuffles the training part
/// with stream `e + 1`, so a run is bit-reproducible.
pub fn train(model: &MlpModel, ts: &TrainingSet, cfg: &TrainConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if ts.is_empty() {
        return Err(Error::InvalidParams("training set is empty".into()));
    }
    check_compatible(model, ts)?;
    let (train_idx, val_idx) = split_indices(ts.len(), cfg.split, cfg.seed)?;
    let n = model.n_classes();
    let targets: Vec<Vec<f64>> = (0..n).map(|c| onehot(c, n)).collect();

    let mut current = model.clone();
    current.scheme.get_or_insert(ts.scheme);
    current.training_data_hash = Some(ts.metadata.config_hash.clone());
    let mut best = current.clone();
    let mut best_key = (f64::NEG_INFINITY, f64::INFINITY);
    let mut best_epoch = None;
    let mut adam = AdamState::with_hyperparams(&current, cfg.lr, cfg.beta1, cfg.beta2, cfg.epsilon);
    let mut grads = Gradients::zeros_like(&current);
    let mut order = train_idx.clone();
    let mut metrics = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut task_rng(cfg.seed, epoch as u64 + 1));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| ts.samples[i].x.as_slice()).collect();
            let ys: Vec<&[f64]> = chunk.iter().map(|&i| targets[ts.samples[i].label].as_slice()).collect();
            let loss = batch_gradient(&current, &xs, &ys, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            adam_step_checked(&mut current, &grads, &mut adam, epoch)?;
            loss_sum += loss;
            batches += 1;
        }
        let (val_loss, val_accuracy) = loss_and_accuracy(&current, ts, &val_idx)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        metrics.push(EpochMetrics { epoch, train_loss: loss_sum / batches as f64, val_loss, val_accuracy });
        if val_accuracy > best_key.0 || (val_accuracy == best_key.0 && val_loss < best_key.1) {
            best_key = (val_accuracy, val_loss);
            best = current.clone();
            best_epoch = Some(epoch);
        }
        log::debug!("epoch {epoch}: train {:.5} val {val_loss:.5} acc {val_accuracy:.4}", loss_sum / batches as f64);
    }
    Ok(TrainResult {
        model: current,
        best_model: best,
        best_epoch,
        metrics,
        train_indices: train_idx,
        validation_indices: val_idx,
    })
}

fn adam_step_checked(model: &mut MlpModel, grads: &Gradients, adam: &mut AdamState, epoch: usize) -> Result<()> {
    super::adam_step(model, grads, adam)?;
    if model.weights.iter().chain(&model.biases).flatten().any(|w| !w.is_finite()) {
        return Err(Error::Divergence { epoch });
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: usize,
    /// Midpoint of the predicted class interval.
    pub tau: f64,
    pub probabilities: Vec<f64>,
}

pub fn classify(model: &MlpModel, x: &[f64], scheme: &ClassScheme) -> Result<Classification> {
    if scheme.n_classes != model.n_classes() {
        return Err(Error::DimensionMismatch(format!(
            "scheme has {} classes, network {}",
            scheme.n_classes,
            model.n_classes()
        )));
    }
    let probabilities = mlp_forward(model, x)?;
    let class = argmax(&probabilities);
    Ok(Classification { class, tau: scheme.midpoint(class), probabilities })
}

/// First 40 bins of a photocount histogram, zero-padded; the network input.
pub fn input_from_histogram(probs: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; INPUT_LEN];
    for (slot, p) in x.iter_mut().zip(probs) {
        *slot = *p;
    }
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub n: usize,
    pub accuracy: f64,
    /// Fraction predicted within one class of the label.
    pub within_one: f64,
    /// `confusion[label][predicted]`.
    pub confusion: Vec<Vec<u64>>,
}

/// Accuracy and confusion matrix over `indices` (all samples when `None`).
pub fn evaluate(model: &MlpModel, ts: &TrainingSet, indices: Option<&[usize]>) -> Result<Evaluation> {
    check_compatible(model, ts)?;
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..ts.len()).collect();
            &all
        }
    };
    if idx.is_empty() {
        return Err(Error::InvalidParams("nothing to evaluate".into()));
    }
    let n = model.n_classes();
    let predictions: Vec<usize> = idx
        .par_iter()
        .map(|&i| mlp_forward(model, &ts.samples[i].x).map(|q| argmax(&q)))
        .collect::<Result<_>>()?;
    let mut confusion = vec![vec![0u64; n]; n];
    let (mut hits, mut near) = (0usize, 0usize);
    for (&i, &pred) in idx.iter().zip(&predictions) {
        let label = ts.samples[i].label;
        confusion[label][pred] += 1;
        hits += usize::from(pred == label);
        near += usize::from(pred.abs_diff(label) <= 1);
    }
    let k = idx.len() as f64;
    Ok(Evaluation { n: idx.len(), accuracy: hits as f64 / k, within_one: near as f64 / k, confusion })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub hidden: Vec<usize>,
    pub n_params: usize,
    pub val_loss: f64,
    pub val_accuracy: f64,
    /// Accuracy on the extra noisy test set, when one was given.
    pub noisy_accuracy: Option<f64>,
    pub noisy_within_one: Option<f64>,
}

/// Train one network per `(layers, neurons)` architecture and report its
/// best-snapshot accuracy on the validation split and, optionally, on a
/// separate high-noise test set.
pub fn architecture_sweep(
    ts: &TrainingSet,
    layers: &[usize],
    neurons: &[usize],
    cfg: &TrainConfig,
    noisy: Option<&TrainingSet>,
) -> Result<Vec<SweepEntry>> {
    let archs: Vec<Vec<usize>> =
        layers.iter().flat_map(|&l| neurons.iter().map(move |&w| vec![w; l])).collect();
    archs
        .into_par_iter()
        .enumerate()
        .map(|(k, hidden)| {
            let mut sizes = vec![INPUT_LEN];
            sizes.extend(&hidden);
            sizes.push(ts.scheme.n_classes);
            let model = MlpModel::new(&sizes, derive_seed(cfg.seed, k as u64))?;
            let run = train(&model, ts, cfg)?;
            let (val_loss, val_accuracy) = loss_and_accuracy(&run.best_model, ts, &run.validation_indices)?;
            let noisy_eval = noisy.map(|set| evaluate(&run.best_model, set, None)).transpose()?;
            Ok(SweepEntry {
                n_params: model.n_params(),
                hidden,
                val_loss,
                val_accuracy,
                noisy_accuracy: noisy_eval.as_ref().map(|e| e.accuracy),
                noisy_within_one: noisy_eval.as_ref().map(|e| e.within_one),
            })
        })
        .collect()
}
