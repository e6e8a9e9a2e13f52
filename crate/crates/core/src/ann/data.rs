use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ClassScheme, INPUT_LEN};
use crate::error::{Error, Result};
use crate::nonclassicality::{default_m_eff, ncd_max, witness_set, NcdSource, WitnessKind};
use crate::photostats::{
    click_reach, conditional_idler_pnd, detection_matrix, multinomial, DetectionMatrix, DetectorParams, Distribution,
    TwinBeamParams,
};
use crate::rng::{rng_from_seed, task_rng};

/// Frames per noisy training histogram unless configured otherwise.
pub const DEFAULT_NOISE_FRAMES: u64 = 1_200_000;

/// Photon numbers searched when bounding the idler detector response.
const REACH_CAP: usize = 1 << 16;

/// One set of generator arguments: a source whose pair intensity is swept
/// with both beam means and all mode counts held at their base values, seen
/// through one signal detector at several post-selected counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceFamily {
    pub base: TwinBeamParams,
    pub det_s: DetectorParams,
    pub c_s: Vec<usize>,
    pub b_p_grid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub families: Vec<SourceFamily>,
    /// Detector whose photocount histograms the classifier reads.
    pub det_i: DetectorParams,
    pub scheme: ClassScheme,
    pub kind: WitnessKind,
    pub max_order: usize,
    pub per_class: usize,
    /// Multinomial resampling at this frame count; `None` keeps the exact
    /// forward histogram.
    pub noise_frames: Option<u64>,
    pub seed: u64,
}

/// `n` evenly spaced values from `a` to `b` inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Largest pair intensity that keeps both noise means nonnegative.
pub fn max_pair_intensity(base: &TwinBeamParams) -> f64 {
    base.mean_signal().min(base.mean_idler()) / base.m_p
}

impl TrainingConfig {
    /// Desk-scale intensity-witness set over the default 8 classes.
    ///
    /// The experimental source alone reaches depths of about 0.15, so a
    /// brighter source seen through a more efficient signal detector fills
    /// the upper classes.
    pub fn desk_intensity(seed: u64) -> Self {
        let reference = TwinBeamParams::reference();
        let top = max_pair_intensity(&reference);
        let mut grid = vec![0.0, 0.01, 0.02, 0.025, 0.028, 0.03, 0.031];
        grid.extend(linspace(0.0312, top * 0.9999, 20));
        let bright = TwinBeamParams { b_p: 2.0 * reference.b_p, b_s: 2.0 * reference.b_s, b_i: 2.0 * reference.b_i, ..reference };
        let bright_top = max_pair_intensity(&bright);
        let sharp = DetectorParams { eta: 0.5, ..DetectorParams::reference_signal() };
        Self {
            families: vec![
                SourceFamily { base: reference, det_s: DetectorParams::reference_signal(), c_s: (1..=16).collect(), b_p_grid: grid },
                SourceFamily {
                    base: bright,
                    det_s: sharp,
                    c_s: (4..=36).step_by(2).collect(),
                    b_p_grid: linspace(bright_top * 0.99, bright_top * 0.9999, 12),
                },
            ],
            det_i: DetectorParams::reference_idler(),
            scheme: ClassScheme::intensity(),
            kind: WitnessKind::Intensity,
            max_order: 3,
            per_class: 20_000,
            noise_frames: Some(DEFAULT_NOISE_FRAMES),
            seed,
        }
    }

    /// Desk-scale probability-witness set over the default 10 classes.
    pub fn desk_probability(seed: u64) -> Self {
        let reference = TwinBeamParams::reference();
        let top = max_pair_intensity(&reference);
        Self {
            families: vec![SourceFamily {
                base: reference,
                det_s: DetectorParams::reference_signal(),
                c_s: (1..=12).collect(),
                b_p_grid: linspace(0.0315, top * 0.9999, 12),
            }],
            det_i: DetectorParams::reference_idler(),
            scheme: ClassScheme::probability(),
            kind: WitnessKind::Probability,
            max_order: 9,
            per_class: 20_000,
            noise_frames: Some(DEFAULT_NOISE_FRAMES),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        self.det_i.validate()?;
        if self.families.is_empty() {
            return Err(Error::InvalidParams("no source families configured".into()));
        }
        for f in &self.families {
            f.base.validate()?;
            f.det_s.validate()?;
            if f.c_s.is_empty() || f.b_p_grid.is_empty() {
                return Err(Error::InvalidParams("each source family needs c_s values and a b_p grid".into()));
            }
        }
        if self.per_class == 0 {
            return Err(Error::InvalidParams("per_class must be positive".into()));
        }
        if self.noise_frames == Some(0) {
            return Err(Error::InvalidParams("noise_frames must be positive".into()));
        }
        witness_set(self.max_order)?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub x: Vec<f64>,
    pub label: usize,
    pub tau_true: f64,
    pub b_p: f64,
    pub c_s: usize,
    pub family: usize,
    /// Probability of photocounts beyond the 40 input bins.
    pub tail_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub noise_frames: Option<u64>,
    /// Grid points whose depth fell outside the class range.
    pub dropped_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub samples: Vec<Sample>,
    pub scheme: ClassScheme,
    pub kind: WitnessKind,
    pub metadata: TrainingMetadata,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.scheme.n_classes];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Checks input shapes and label consistency.
    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        for (i, s) in self.samples.iter().enumerate() {
            if s.x.len() != INPUT_LEN {
                return Err(Error::DimensionMismatch(format!("sample {i} has {} inputs", s.x.len())));
            }
            if s.x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || s.x.iter().sum::<f64>() > 1.0 + 1e-9 {
                return Err(Error::InvalidParams(format!("sample {i} is not a histogram prefix")));
            }
            if self.scheme.class_of(s.tau_true) != Some(s.label) {
                return Err(Error::InvalidParams(format!(
                    "sample {i}: label {} disagrees with tau {}",
                    s.label, s.tau_true
                )));
            }
        }
        Ok(())
    }

    /// Relabel under another class scheme, dropping samples outside its
    /// range. Returns the new set and the number of dropped samples.
    pub fn relabel(&self, scheme: ClassScheme) -> Result<(Self, usize)> {
        scheme.validate()?;
        let samples: Vec<Sample> = self
            .samples
            .iter()
            .filter_map(|s| scheme.class_of(s.tau_true).map(|label| Sample { label, ..s.clone() }))
            .collect();
        let dropped = self.samples.len() - samples.len();
        Ok((Self { samples, scheme, kind: self.kind, metadata: self.metadata.clone() }, dropped))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ts: Self = serde_json::from_str(text)?;
        ts.validate()?;
        Ok(ts)
    }
}

/// Response of the classified detector restricted to the network input bins.
///
/// Photon numbers beyond the reach of 40 clicks are dropped; they contribute
/// less than 1e-20 to any input bin.
#[derive(Debug, Clone)]
pub struct InputResponse {
    t: DetectionMatrix,
}

impl InputResponse {
    pub fn new(det: &DetectorParams) -> Result<Self> {
        det.validate()?;
        let c_max = (INPUT_LEN - 1).min(det.n_pix as usize);
        let reach = click_reach(det, c_max, REACH_CAP)?;
        Ok(Self { t: detection_matrix(det, c_max, reach)? })
    }

    /// First 40 photocount probabilities of photon-number distribution `p`
    /// and the mass beyond them.
    pub fn histogram(&self, p: &Distribution) -> (Vec<f64>, f64) {
        let mut x = vec![0.0; INPUT_LEN];
        for (c, slot) in x.iter_mut().enumerate().take(self.t.c_max() + 1) {
            *slot = self.t.row(c).iter().zip(p.probs()).map(|(a, b)| a * b).sum();
        }
        let tail = (p.total() - x.iter().sum::<f64>()).max(0.0);
        (x, tail)
    }
}

/// Input histogram with multinomial sampling noise of `frames` frames.
pub fn resample_input(x: &[f64], tail: f64, frames: u64, seed: u64, stream: u64) -> Vec<f64> {
    let mut probs = x.to_vec();
    probs.push(tail);
    let counts = multinomial(&mut task_rng(seed, stream), &probs, frames);
    counts[..x.len()].iter().map(|&k| k as f64 / frames as f64).collect()
}

/// Depth label of a source: `ncd_max` over the order-`max_order` witness
/// family of the post-selected idler photon-number distribution, with the
/// default effective mode number.
pub fn oracle_tau(params: &TwinBeamParams, det_s: &DetectorParams, c_s: usize, kind: WitnessKind, max_order: usize) -> Result<f64> {
    let cond = conditional_idler_pnd(params, det_s, c_s, None)?;
    tau_of(&cond.distribution, params, kind, max_order)
}

fn tau_of(p: &Distribution, params: &TwinBeamParams, kind: WitnessKind, max_order: usize) -> Result<f64> {
    let source = NcdSource::from(p.clone());
    let m_eff = default_m_eff(&source, params.m_p + params.m_i)?;
    Ok(ncd_max(&source, &witness_set(max_order)?, m_eff, kind)?.tau_max)
}

/// A labeled noiseless grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub family: usize,
    pub c_s: usize,
    pub b_p: f64,
    pub tau: f64,
    pub x: Vec<f64>,
    pub tail_mass: f64,
}

/// Exact histograms and depths of every `(family, c_s, b_p)` grid point, in
/// enumeration order.
pub fn grid_points(cfg: &TrainingConfig) -> Result<Vec<GridPoint>> {
    cfg.validate()?;
    let mut tasks = Vec::new();
    for (f, fam) in cfg.families.iter().enumerate() {
        for &b_p in &fam.b_p_grid {
            let params = fam.base.with_pair_intensity(b_p)?;
            for &c_s in &fam.c_s {
                tasks.push((f, c_s, b_p, params));
            }
        }
    }
    let response = InputResponse::new(&cfg.det_i)?;
    tasks
        .into_par_iter()
        .map(|(family, c_s, b_p, params)| {
            let cond = conditional_idler_pnd(&params, &cfg.families[family].det_s, c_s, None)?;
            let tau = tau_of(&cond.distribution, &params, cfg.kind, cfg.max_order)?;
            let (x, tail_mass) = response.histogram(&cond.distribution);
            Ok(GridPoint { family, c_s, b_p, tau, x, tail_mass })
        })
        .collect()
}

/// Labeled training histograms.
///
/// Every class with at least one grid point receives exactly `per_class`
/// samples, cycling through its grid points in order; sample `j` of class
/// `c` draws its sampling noise from stream `c·per_class + j`. Grid points
/// whose depth falls outside the class range are dropped and counted.
pub fn generate_training_set(cfg: &TrainingConfig) -> Result<TrainingSet> {
    let points = grid_points(cfg)?;
    let n_classes = cfg.scheme.n_classes;
    let mut by_class: Vec<Vec<&GridPoint>> = vec![Vec::new(); n_classes];
    let mut dropped = 0;
    for p in &points {
        match cfg.scheme.class_of(p.tau) {
            Some(c) => by_class[c].push(p),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("{dropped} grid points have depths outside [{}, {}]", cfg.scheme.tau_min, cfg.scheme.tau_max);
    }
    let empty: Vec<usize> = (0..n_classes).filter(|&c| by_class[c].is_empty()).collect();
    if !empty.is_empty() {
        log::warn!("no grid point falls in classes {empty:?}");
    }

    let per_class = cfg.per_class;
    let jobs: Vec<(usize, usize)> =
        (0..n_classes).filter(|&c| !by_class[c].is_empty()).flat_map(|c| (0..per_class).map(move |j| (c, j))).collect();
    let samples = jobs
        .into_par_iter()
        .map(|(c, j)| {
            let p = by_class[c][j % by_class[c].len()];
            let x = match cfg.noise_frames {
                Some(frames) => resample_input(&p.x, p.tail_mass, frames, cfg.seed, (c * per_class + j) as u64),
                None => p.x.clone(),
            };
            Sample { x, label: c, tau_true: p.tau, b_p: p.b_p, c_s: p.c_s, family: p.family, tail_mass: p.tail_mass }
        })
        .collect();
    Ok(TrainingSet {
        samples,
        scheme: cfg.scheme,
        kind: cfg.kind,
        metadata: TrainingMetadata {
            config_hash: cfg.config_hash(),
            seed: cfg.seed,
            noise_frames: cfg.noise_frames,
            dropped_points: dropped,
        },
    })
}

/// Resample every class to exactly `per_class` samples: without replacement
/// when a class has enough samples, uniformly with replacement otherwise.
/// The result is shuffled deterministically.
pub fn balance_classes(ts: &TrainingSet, per_class: usize, seed: u64) -> Result<TrainingSet> {
    if per_class == 0 {
        return Err(Error::InvalidParams("per_class must be positive".into()));
    }
    let n_classes = ts.scheme.n_classes;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, s) in ts.samples.iter().enumerate() {
        if s.label >= n_classes {
            return Err(Error::InvalidParams(format!("sample {i} has label {} of {n_classes} classes", s.label)));
        }
        by_class[s.label].push(i);
    }
    let empty: Vec<usize> = (0..n_classes).filter(|&c| by_class[c].is_empty()).collect();
    if !empty.is_empty() {
        return Err(Error::EmptyClasses(empty));
    }
    let mut rng = rng_from_seed(seed);
    let mut chosen = Vec::with_capacity(per_class * n_classes);
    for mut members in by_class {
        if members.len() >= per_class {
            let (picked, _) = members.partial_shuffle(&mut rng, per_class);
            chosen.extend_from_slice(picked);
        } else {
            use rand::Rng;
            chosen.extend((0..per_class).map(|_| members[rng.random_range(0..members.len())]));
        }
    }
    chosen.shuffle(&mut rng);
    Ok(TrainingSet { samples: chosen.into_iter().map(|i| ts.samples[i].clone()).collect(), ..ts.clone() })
}
