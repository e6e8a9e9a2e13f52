//! Photon-number statistics of multimode twin beams and the click-counting
//! detector model.
//!
//! The universal currency between modules is [`Distribution`], a truncated
//! probability vector over photon or photocount numbers. Twin beams are
//! described by [`TwinBeamParams`] (three independent multimode Gaussian
//! components: photon pairs, signal noise and idler noise) and detectors by
//! [`DetectorParams`] (efficiency, per-pixel dark-count probability and the
//! number of on-off macro-pixels).

mod detector;
mod joint;
mod mandel_rice;
mod sampling;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use detector::{detection_matrix, forward_histogram, occupancy_matrix, DetectionMatrix, EPS_NEG};
pub use joint::{
    auto_cutoffs, click_reach, conditional_idler_from_joint, conditional_idler_pnd, forward_joint, twin_beam_joint,
    ConditionalPnd, JointDistribution,
};
pub use mandel_rice::{compound_marginal, mandel_rice, mandel_rice_pmf};
pub(crate) use mandel_rice::mandel_rice_prefix;
pub(crate) use sampling::multinomial;
pub use sampling::{mc_detector_oracle, sample_histogram, sample_joint_histogram};

/// Default truncation tolerance on discarded upper-tail probability mass.
pub const TAIL_TOL: f64 = 1e-9;

/// Headroom above 1 allowed for accumulated rounding in normalized vectors.
const SUM_SLACK: f64 = 1e-12;

/// Six-parameter multimode Gaussian twin-beam model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwinBeamParams {
    pub m_p: f64,
    pub m_s: f64,
    pub m_i: f64,
    pub b_p: f64,
    pub b_s: f64,
    pub b_i: f64,
}

impl TwinBeamParams {
    pub fn new(m_p: f64, m_s: f64, m_i: f64, b_p: f64, b_s: f64, b_i: f64) -> Result<Self> {
        let p = Self { m_p, m_s, m_i, b_p, b_s, b_i };
        p.validate()?;
        Ok(p)
    }

    /// Best-fit parameters of the experimental SPDC source.
    pub fn reference() -> Self {
        Self { m_p: 270.0, m_s: 0.01, m_i: 0.026, b_p: 0.032, b_s: 7.6, b_i: 5.3 }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.m_p, self.m_s, self.m_i, self.b_p, self.b_s, self.b_i];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite twin-beam parameter in {self:?}")));
        }
        if self.m_p <= 0.0 || self.m_s <= 0.0 || self.m_i <= 0.0 {
            return Err(Error::InvalidParams(format!("mode counts must be positive: {self:?}")));
        }
        if self.b_p < 0.0 || self.b_s < 0.0 || self.b_i < 0.0 {
            return Err(Error::InvalidParams(format!("mean photons per mode must be nonnegative: {self:?}")));
        }
        Ok(())
    }

    pub fn mean_signal(&self) -> f64 {
        self.m_s * self.b_s + self.m_p * self.b_p
    }

    pub fn mean_idler(&self) -> f64 {
        self.m_i * self.b_i + self.m_p * self.b_p
    }

    /// Photon-number covariance of the two beams, carried by the pair component.
    pub fn covariance(&self) -> f64 {
        self.m_p * self.b_p * (1.0 + self.b_p)
    }

    /// Re-parameterize with a new pair intensity while holding both beam
    /// means and all mode counts fixed.
    pub fn with_pair_intensity(&self, b_p: f64) -> Result<Self> {
        let mean_s = self.mean_signal();
        let mean_i = self.mean_idler();
        let pair = self.m_p * b_p;
        let noise_s = mean_s - pair;
        let noise_i = mean_i - pair;
        // Rounding in the mean bookkeeping may leave -1e-16 style residue.
        let slack = 1e-12 * mean_s.max(mean_i).max(1.0);
        if !(b_p >= 0.0) || noise_s < -slack || noise_i < -slack {
            return Err(Error::InfeasibleGrid(format!(
                "b_p = {b_p} makes noise means negative (signal {noise_s:.4e}, idler {noise_i:.4e})"
            )));
        }
        Self::new(
            self.m_p,
            self.m_s,
            self.m_i,
            b_p,
            noise_s.max(0.0) / self.m_s,
            noise_i.max(0.0) / self.m_i,
        )
    }
}

/// How the configured dark-count value is to be read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DarkCountConvention {
    /// `d` is the per-pixel, per-frame firing probability.
    PerPixel,
    /// `d` is the mean number of dark counts per frame in the whole region of
    /// interest; the per-pixel value is `d / n_pix`.
    #[default]
    PerRoi,
}

/// On-off detector array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub eta: f64,
    /// Per-pixel dark-count probability per frame.
    pub d: f64,
    pub n_pix: u64,
}

impl DetectorParams {
    pub fn new(eta: f64, d: f64, n_pix: u64) -> Result<Self> {
        let det = Self { eta, d, n_pix };
        det.validate()?;
        Ok(det)
    }

    pub fn with_convention(eta: f64, d: f64, convention: DarkCountConvention, n_pix: u64) -> Result<Self> {
        let d = match convention {
            DarkCountConvention::PerPixel => d,
            DarkCountConvention::PerRoi => {
                if n_pix == 0 {
                    return Err(Error::InvalidParams("n_pix must be at least 1".into()));
                }
                d / n_pix as f64
            }
        };
        Self::new(eta, d, n_pix)
    }

    /// Signal-arm iCCD region of the experiment (per-ROI dark counts).
    pub fn reference_signal() -> Self {
        Self { eta: 0.228, d: 0.206 / 6528.0, n_pix: 6528 }
    }

    /// Idler-arm iCCD region of the experiment (per-ROI dark counts).
    pub fn reference_idler() -> Self {
        Self { eta: 0.223, d: 0.214 / 6784.0, n_pix: 6784 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::InvalidParams(format!("eta must lie in [0, 1], got {}", self.eta)));
        }
        if !(self.d >= 0.0 && self.d < 1.0) {
            return Err(Error::InvalidParams(format!("d must lie in [0, 1), got {}", self.d)));
        }
        if self.n_pix == 0 {
            return Err(Error::InvalidParams("n_pix must be at least 1".into()));
        }
        Ok(())
    }

    /// Mean number of dark counts per frame over the whole array.
    pub fn mean_dark(&self) -> f64 {
        self.d * self.n_pix as f64
    }
}

/// Truncated probability vector indexed by photon or photocount number.
///
/// Histograms additionally carry the raw frame counts they were built from;
/// all arithmetic uses the normalized `probs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    counts: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_frames: Option<u64>,
}

impl Distribution {
    /// Validating constructor with the default tail tolerance.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Self::with_tolerance(probs, TAIL_TOL)
    }

    pub fn with_tolerance(probs: Vec<f64>, tail_tol: f64) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidParams("distribution must have at least one entry".into()));
        }
        if let Some((i, &x)) = probs.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
            return Err(Error::InvalidParams(format!("entry {i} is {x}; probabilities must be finite and nonnegative")));
        }
        let total: f64 = probs.iter().sum();
        if total > 1.0 + SUM_SLACK {
            return Err(Error::InvalidParams(format!("probabilities sum to {total} > 1")));
        }
        if 1.0 - total > tail_tol {
            return Err(Error::Truncation { tail: 1.0 - total, tol: tail_tol });
        }
        Ok(Self { probs, counts: None, n_frames: None })
    }

    /// Normalize raw frame counts into a histogram.
    pub fn from_counts(counts: Vec<u64>) -> Result<Self> {
        let n_frames: u64 = counts.iter().sum();
        if n_frames == 0 {
            return Err(Error::InvalidParams("histogram has no frames".into()));
        }
        let probs = counts.iter().map(|&c| c as f64 / n_frames as f64).collect();
        Ok(Self { probs, counts: Some(counts), n_frames: Some(n_frames) })
    }

    /// Renormalize an arbitrary nonnegative vector.
    pub fn normalized(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Degenerate(format!("cannot normalize vector with total {total}")));
        }
        Self::new(weights.into_iter().map(|w| w / total).collect())
    }

    /// Point mass at `n`.
    pub fn point(n: usize) -> Self {
        let mut probs = vec![0.0; n + 1];
        probs[n] = 1.0;
        Self { probs, counts: None, n_frames: None }
    }

    /// Poisson law truncated where the remaining tail drops below `tol`.
    pub fn poisson(mean: f64, tol: f64) -> Result<Self> {
        if !(mean >= 0.0 && mean.is_finite()) {
            return Err(Error::Domain(format!("Poisson mean must be finite and nonnegative, got {mean}")));
        }
        let mut probs = Vec::new();
        let mut ln_p = -mean;
        let mut cum = 0.0;
        let mut n = 0usize;
        loop {
            let p = ln_p.exp();
            probs.push(p);
            cum += p;
            n += 1;
            // Past the mean the tail is a few times the last term.
            if n as f64 > mean && (1.0 - cum < tol * 1e-3 || p < 1e-20) {
                break;
            }
            ln_p += mean.ln() - (n as f64).ln();
            if mean == 0.0 {
                break;
            }
        }
        Self::with_tolerance(probs, tol)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn counts(&self) -> Option<&[u64]> {
        self.counts.as_deref()
    }

    pub fn n_frames(&self) -> Option<u64> {
        self.n_frames
    }

    pub fn cutoff(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability at `n`, zero beyond the cutoff.
    pub fn prob(&self, n: usize) -> f64 {
        self.probs.get(n).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probs.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        self.probs.iter().enumerate().map(|(n, p)| (n as f64 - mean).powi(2) * p).sum()
    }

    /// Variance over mean; below 1 for sub-Poissonian light.
    pub fn fano(&self) -> f64 {
        self.variance() / self.mean()
    }

    pub fn total_variation(&self, other: &Distribution) -> f64 {
        let len = self.len().max(other.len());
        0.5 * (0..len).map(|n| (self.prob(n) - other.prob(n)).abs()).sum::<f64>()
    }

    /// Copy truncated (or zero-padded) to `len` entries, without renormalizing.
    pub fn prefix(&self, len: usize) -> Vec<f64> {
        (0..len).map(|n| self.prob(n)).collect()
    }
}
