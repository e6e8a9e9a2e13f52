use serde::{Deserialize, Serialize};

use super::detector::{detection_matrix, occupancy_matrix, DetectionMatrix};
use super::mandel_rice::{convolve, mandel_rice_pmf, mandel_rice_prefix};
use super::{DetectorParams, Distribution, TwinBeamParams, SUM_SLACK, TAIL_TOL};
use crate::error::{Error, Result};

/// Joint photon-number (or photocount) distribution of signal and idler,
/// stored row-major with the signal index as row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointDistribution {
    probs: Vec<f64>,
    rows: usize,
    cols: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    counts: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    n_frames: Option<u64>,
}

impl JointDistribution {
    pub fn new(probs: Vec<f64>, rows: usize, cols: usize) -> Result<Self> {
        Self::with_tolerance(probs, rows, cols, TAIL_TOL)
    }

    pub fn with_tolerance(probs: Vec<f64>, rows: usize, cols: usize, tail_tol: f64) -> Result<Self> {
        if rows == 0 || cols == 0 || probs.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "joint distribution of {} entries cannot be {rows} x {cols}",
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidParams("joint probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if total > 1.0 + SUM_SLACK {
            return Err(Error::InvalidParams(format!("joint probabilities sum to {total} > 1")));
        }
        if 1.0 - total > tail_tol {
            return Err(Error::Truncation { tail: 1.0 - total, tol: tail_tol });
        }
        Ok(Self { probs, rows, cols, counts: None, n_frames: None })
    }

    pub fn from_counts(counts: Vec<u64>, rows: usize, cols: usize) -> Result<Self> {
        let n_frames: u64 = counts.iter().sum();
        if n_frames == 0 {
            return Err(Error::InvalidParams("joint histogram has no frames".into()));
        }
        let probs = counts.iter().map(|&c| c as f64 / n_frames as f64).collect();
        let mut j = Self::new(probs, rows, cols)?;
        j.counts = Some(counts);
        j.n_frames = Some(n_frames);
        Ok(j)
    }

    pub fn get(&self, s: usize, i: usize) -> f64 {
        if s < self.rows && i < self.cols {
            self.probs[s * self.cols + i]
        } else {
            0.0
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn counts(&self) -> Option<&[u64]> {
        self.counts.as_deref()
    }

    pub fn n_frames(&self) -> Option<u64> {
        self.n_frames
    }

    /// Highest signal and idler indices held.
    pub fn cutoffs(&self) -> (usize, usize) {
        (self.rows - 1, self.cols - 1)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.cols..(s + 1) * self.cols]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    pub fn marginal_signal(&self) -> Vec<f64> {
        (0..self.rows).map(|s| self.row(s).iter().sum()).collect()
    }

    pub fn marginal_idler(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for s in 0..self.rows {
            for (o, p) in out.iter_mut().zip(self.row(s)) {
                *o += p;
            }
        }
        out
    }

    /// `(mean_signal, mean_idler)` by direct summation.
    pub fn means(&self) -> (f64, f64) {
        let ms = self.marginal_signal().iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        let mi = self.marginal_idler().iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        (ms, mi)
    }

    pub fn covariance(&self) -> f64 {
        let (ms, mi) = self.means();
        let mut cov = 0.0;
        for s in 0..self.rows {
            for (i, p) in self.row(s).iter().enumerate() {
                cov += (s as f64 - ms) * (i as f64 - mi) * p;
            }
        }
        cov
    }
}

/// Smallest `(signal, idler)` cutoffs whose discarded marginal tails are each
/// below `tol / 2`, so the joint truncation loses less than `tol`.
pub fn auto_cutoffs(params: &TwinBeamParams, tol: f64) -> Result<(usize, usize)> {
    params.validate()?;
    let comp_tol = tol * 1e-3;
    let pair = mandel_rice_pmf(params.m_p, params.b_p, comp_tol)?;
    let sig = convolve(&pair, &mandel_rice_pmf(params.m_s, params.b_s, comp_tol)?);
    let idl = convolve(&pair, &mandel_rice_pmf(params.m_i, params.b_i, comp_tol)?);
    Ok((cutoff_for(&sig, tol / 2.0), cutoff_for(&idl, tol / 2.0)))
}

fn cutoff_for(pmf: &[f64], tol: f64) -> usize {
    let mut cum = 0.0;
    for (n, p) in pmf.iter().enumerate() {
        cum += p;
        if 1.0 - cum < tol {
            return n;
        }
    }
    pmf.len() - 1
}

/// Joint photon-number distribution of the three-component twin beam,
/// `P(n_s, n_i) = Σ_n p(n_s−n; M_s,B_s) p(n_i−n; M_i,B_i) p(n; M_p,B_p)`.
///
/// `cutoffs = None` picks the smallest cutoffs certified by
/// [`auto_cutoffs`]; explicit cutoffs are rejected if the discarded mass
/// exceeds `tail_tol`.
pub fn twin_beam_joint(params: &TwinBeamParams, cutoffs: Option<(usize, usize)>, tail_tol: f64) -> Result<JointDistribution> {
    params.validate()?;
    let (cs, ci) = match cutoffs {
        Some(c) => c,
        None => auto_cutoffs(params, tail_tol)?,
    };
    let n_pair = cs.min(ci) + 1;
    let pair = mandel_rice_prefix(params.m_p, params.b_p, n_pair)?;
    let sig = mandel_rice_prefix(params.m_s, params.b_s, cs + 1)?;
    let idl = mandel_rice_prefix(params.m_i, params.b_i, ci + 1)?;

    let cols = ci + 1;
    let mut probs = vec![0.0; (cs + 1) * cols];
    for (n, &pp) in pair.iter().enumerate() {
        if pp == 0.0 {
            continue;
        }
        for ns in n..=cs {
            let w = pp * sig[ns - n];
            if w == 0.0 {
                continue;
            }
            let row = &mut probs[ns * cols..(ns + 1) * cols];
            for (ni, slot) in row.iter_mut().enumerate().skip(n) {
                *slot += w * idl[ni - n];
            }
        }
    }
    JointDistribution::with_tolerance(probs, cs + 1, cols, tail_tol)
}

/// Joint photocount distribution `T_s P T_iᵀ` registered by two detectors.
pub fn forward_joint(t_s: &DetectionMatrix, t_i: &DetectionMatrix, joint: &JointDistribution) -> Result<JointDistribution> {
    let (rows, cols) = joint.shape();
    if rows - 1 > t_s.n_max() || cols - 1 > t_i.n_max() {
        return Err(Error::DimensionMismatch(format!(
            "joint cutoffs ({}, {}) exceed detection matrices ({}, {})",
            rows - 1,
            cols - 1,
            t_s.n_max(),
            t_i.n_max()
        )));
    }
    // Idler side first: R(ns, ci) = Σ_ni P(ns, ni) T_i(ci, ni).
    let ci_len = t_i.c_max() + 1;
    let mut right = vec![0.0; rows * ci_len];
    for ns in 0..rows {
        let prow = joint.row(ns);
        for ci in 0..ci_len {
            right[ns * ci_len + ci] = t_i.row(ci).iter().zip(prow).map(|(a, b)| a * b).sum();
        }
    }
    let cs_len = t_s.c_max() + 1;
    let mut out = vec![0.0; cs_len * ci_len];
    for cs in 0..cs_len {
        let trow = t_s.row(cs);
        let orow = &mut out[cs * ci_len..(cs + 1) * ci_len];
        for ns in 0..rows {
            let t = trow[ns];
            if t == 0.0 {
                continue;
            }
            for (o, r) in orow.iter_mut().zip(&right[ns * ci_len..(ns + 1) * ci_len]) {
                *o += t * r;
            }
        }
    }
    let deficit = (1.0 - joint.total()).max(0.0);
    let mut lost = 0.0;
    for ns in 0..rows {
        for (ni, p) in joint.row(ns).iter().enumerate() {
            lost += p * (t_s.column_tail(ns) + t_i.column_tail(ni));
        }
    }
    JointDistribution::with_tolerance(out, cs_len, ci_len, TAIL_TOL.max(deficit + lost + 1e-12))
}

/// Post-selected idler photon-number distribution and the probability of
/// the conditioning signal outcome.
#[derive(Debug, Clone)]
pub struct ConditionalPnd {
    pub distribution: Distribution,
    pub post_selection_probability: f64,
}

/// Probability of post-selection below which a signal outcome is deemed
/// never to occur.
pub const MIN_POST_SELECTION: f64 = 1e-12;

/// Condition an already constructed joint distribution on `c_s` signal
/// photocounts registered by `t_s`.
pub fn conditional_idler_from_joint(joint: &JointDistribution, t_s: &DetectionMatrix, c_s: usize) -> Result<ConditionalPnd> {
    let (rows, cols) = joint.shape();
    if c_s > t_s.c_max() {
        return Err(Error::DimensionMismatch(format!("c_s = {c_s} beyond detection matrix c_max = {}", t_s.c_max())));
    }
    if rows - 1 > t_s.n_max() {
        return Err(Error::DimensionMismatch(format!(
            "signal cutoff {} beyond detection matrix n_max = {}",
            rows - 1,
            t_s.n_max()
        )));
    }
    let mut weights = vec![0.0; cols];
    for ns in 0..rows {
        let t = t_s.get(c_s, ns);
        if t == 0.0 {
            continue;
        }
        for (w, p) in weights.iter_mut().zip(joint.row(ns)) {
            *w += t * p;
        }
    }
    let post: f64 = weights.iter().sum();
    if !(post >= MIN_POST_SELECTION) {
        return Err(Error::Degenerate(format!(
            "post-selection probability {post:.3e} for c_s = {c_s} is below {MIN_POST_SELECTION:e}"
        )));
    }
    let probs = weights.into_iter().map(|w| w / post).collect();
    Ok(ConditionalPnd { distribution: Distribution::new(probs)?, post_selection_probability: post })
}

/// `P(clicks ≤ c | n photons)` below this is treated as zero when bounding
/// the signal photon numbers that can produce `c` clicks.
const REACH_FLOOR: f64 = 1e-20;

/// Smallest photon number beyond which `c` or fewer clicks have probability
/// below [`REACH_FLOOR`], capped at `cap`. The probability is nonincreasing
/// in the photon number, so the bound covers every larger number too.
pub fn click_reach(det: &DetectorParams, c: usize, cap: usize) -> Result<usize> {
    let mut guess = 64usize.min(cap);
    loop {
        let occ = occupancy_matrix(det, c, guess)?;
        let width = guess + 1;
        let hit = (0..=guess).find(|&n| (0..=c).map(|k| occ[k * width + n]).sum::<f64>() < REACH_FLOOR);
        match hit {
            Some(n) => return Ok(n),
            None if guess >= cap => return Ok(cap),
            None => guess = (guess * 2).min(cap),
        }
    }
}

/// Idler photon-number distribution conditioned on `c_s` photocounts in the
/// signal detector, truncated at `cutoff` (auto when `None`).
///
/// Evaluated without the joint matrix:
/// `P(n_i | c_s) ∝ Σ_n p_p(n) w(n) p_i(n_i − n)`, `w(n) = Σ_{n_s} T_s(c_s, n_s) p_s(n_s − n)`.
/// This stays cheap when the noise components have long tails (few modes,
/// many photons per mode).
pub fn conditional_idler_pnd(
    params: &TwinBeamParams,
    det_s: &DetectorParams,
    c_s: usize,
    cutoff: Option<usize>,
) -> Result<ConditionalPnd> {
    params.validate()?;
    det_s.validate()?;
    if c_s as u64 > det_s.n_pix {
        return Err(Error::Degenerate(format!("c_s = {c_s} exceeds the {} pixels of the signal detector", det_s.n_pix)));
    }
    let comp_tol = TAIL_TOL * 1e-3;
    let pair = mandel_rice_pmf(params.m_p, params.b_p, comp_tol)?;
    let sig_full = mandel_rice_pmf(params.m_s, params.b_s, comp_tol)?.len();
    let ns_max = click_reach(det_s, c_s, pair.len() + sig_full - 2)?;
    let sig = mandel_rice_prefix(params.m_s, params.b_s, ns_max + 1)?;
    let t_s = detection_matrix(det_s, c_s, ns_max)?;
    let row = t_s.row(c_s);

    let weighted: Vec<f64> = pair
        .iter()
        .enumerate()
        .take(ns_max + 1)
        .map(|(n, &pp)| pp * row[n..].iter().zip(&sig).map(|(t, p)| t * p).sum::<f64>())
        .collect();
    let post: f64 = weighted.iter().sum();
    if !(post >= MIN_POST_SELECTION) {
        return Err(Error::Degenerate(format!(
            "post-selection probability {post:.3e} for c_s = {c_s} is below {MIN_POST_SELECTION:e}"
        )));
    }

    let idl_len = mandel_rice_pmf(params.m_i, params.b_i, comp_tol)?.len().max(cutoff.map_or(0, |c| c + 1));
    let idl = mandel_rice_prefix(params.m_i, params.b_i, idl_len)?;
    let mut cond = convolve(&weighted, &idl);
    let total: f64 = cond.iter().sum();
    for x in cond.iter_mut() {
        *x /= total;
    }
    let keep = match cutoff {
        Some(c) => c + 1,
        None => cutoff_for(&cond, comp_tol) + 1,
    };
    cond.truncate(keep);
    Ok(ConditionalPnd { distribution: Distribution::new(cond)?, post_selection_probability: total })
}
