use serde::{Deserialize, Serialize};

use super::{
    factorial_moments, probability_witness_terms, s_ordered_moments, s_ordered_pnd_rows, MomentVector,
    OrderingParams, WitnessIndex,
};
use crate::error::{Error, Result};
use crate::photostats::Distribution;

/// Points of the coarse scan over `s ∈ [−1, 1]`.
pub const GRID_POINTS: usize = 201;

/// Effective mode number used when the field's own estimate is not positive:
/// `M_p + M_i` of the experimental source.
pub const FALLBACK_M_EFF: f64 = 270.026;

/// Bisection stops once the bracket in `s` is narrower than this.
pub const S_RESOLUTION: f64 = 1e-6;

/// Witness values within this fraction of their two products count as zero.
pub const WITNESS_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WitnessKind {
    Intensity,
    Probability,
}

impl std::str::FromStr for WitnessKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "intensity" => Ok(Self::Intensity),
            "probability" => Ok(Self::Probability),
            other => Err(Error::Parse(format!("unknown witness kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub enum NcdSource {
    Moments(MomentVector),
    Distribution(Distribution),
}

impl From<MomentVector> for NcdSource {
    fn from(mv: MomentVector) -> Self {
        Self::Moments(mv)
    }
}

impl From<Distribution> for NcdSource {
    fn from(p: Distribution) -> Self {
        Self::Distribution(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WitnessDepth {
    pub index: WitnessIndex,
    /// Witness value at normal ordering (or on the native distribution).
    pub value: f64,
    pub tau: f64,
    pub s_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessFailure {
    pub index: WitnessIndex,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcdResult {
    pub kind: WitnessKind,
    pub m_eff: f64,
    pub per_witness: Vec<WitnessDepth>,
    pub tau_max: f64,
    pub best_witness: WitnessIndex,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<WitnessFailure>,
}

/// Effective mode number of the analyzed field, `⟨W⟩²/(⟨W²⟩ − ⟨W⟩²)`, or
/// `fallback` when that is not positive (sub-Poissonian or Poissonian input).
pub fn default_m_eff(source: &NcdSource, fallback: f64) -> Result<f64> {
    let mv = match source {
        NcdSource::Moments(mv) => mv.clone(),
        NcdSource::Distribution(p) => factorial_moments(p, 2)?,
    };
    Ok(mv.effective_modes().unwrap_or(fallback))
}

/// Witness values at arbitrary `s`, with the s-transform shared by all
/// witnesses and cached on the coarse grid.
struct Evaluator {
    kind: WitnessKind,
    moments: Option<MomentVector>,
    dist: Option<Distribution>,
    m_eff: f64,
    len: usize,
    grid: Vec<Option<Vec<f64>>>,
}

impl Evaluator {
    fn new(source: &NcdSource, kind: WitnessKind, m_eff: f64, max_index: usize) -> Result<Self> {
        if !(m_eff > 0.0 && m_eff.is_finite()) {
            return Err(Error::Domain(format!("m_eff must be positive, got {m_eff}")));
        }
        let (moments, dist) = match (kind, source) {
            (WitnessKind::Intensity, NcdSource::Moments(mv)) => {
                if mv.k_max() < max_index {
                    return Err(Error::DimensionMismatch(format!(
                        "witnesses need moments up to order {max_index}, have {}",
                        mv.k_max()
                    )));
                }
                (Some(mv.clone()), None)
            }
            (WitnessKind::Intensity, NcdSource::Distribution(p)) => (Some(factorial_moments(p, max_index.max(2))?), None),
            (WitnessKind::Probability, NcdSource::Distribution(p)) => (None, Some(p.clone())),
            (WitnessKind::Probability, NcdSource::Moments(_)) => {
                return Err(Error::InvalidParams("probability witnesses need a distribution".into()));
            }
        };
        Ok(Self { kind, moments, dist, m_eff, len: max_index + 1, grid: vec![None; GRID_POINTS] })
    }

    fn transformed(&self, s: f64) -> Result<Vec<f64>> {
        let ord = OrderingParams::new(s, self.m_eff)?;
        match self.kind {
            WitnessKind::Intensity => {
                let mv = self.moments.as_ref().expect("intensity evaluator has moments");
                Ok(s_ordered_moments(mv, &ord)?.moments().to_vec())
            }
            WitnessKind::Probability => {
                let p = self.dist.as_ref().expect("probability evaluator has a distribution");
                if s == 1.0 {
                    Ok(p.prefix(self.len))
                } else {
                    s_ordered_pnd_rows(p, &ord, self.len)
                }
            }
        }
    }

    fn grid_s(j: usize) -> f64 {
        1.0 - 2.0 * j as f64 / (GRID_POINTS - 1) as f64
    }

    fn grid_values(&mut self, j: usize) -> Result<&[f64]> {
        if self.grid[j].is_none() {
            self.grid[j] = Some(self.transformed(Self::grid_s(j))?);
        }
        Ok(self.grid[j].as_deref().expect("just filled"))
    }

    /// Witness value and its sign class: `true` when clearly negative.
    fn witness(&self, v: &[f64], idx: &WitnessIndex) -> (f64, bool) {
        let (w, scale) = match self.kind {
            WitnessKind::Intensity => {
                let a = v[idx.k] * v[idx.l];
                let b = v[idx.m] * v[idx.n];
                (a - b, a.abs().max(b.abs()))
            }
            WitnessKind::Probability => {
                let (a, b) = probability_witness_terms(v, idx);
                (a - b, a.abs().max(b.abs()))
            }
        };
        (w, w < -WITNESS_REL_TOL * scale)
    }

    fn depth(&mut self, idx: &WitnessIndex) -> Result<WitnessDepth> {
        let values = self.grid_values(0)?.to_vec();
        let (value, negative) = self.witness(&values, idx);
        if !negative {
            return Ok(WitnessDepth { index: *idx, value, tau: 0.0, s_threshold: 1.0 });
        }
        let mut crossing = None;
        for j in 1..GRID_POINTS {
            let v = self.grid_values(j)?.to_vec();
            if !self.witness(&v, idx).1 {
                crossing = Some(j);
                break;
            }
        }
        let Some(j) = crossing else {
            return Ok(WitnessDepth { index: *idx, value, tau: 1.0, s_threshold: -1.0 });
        };
        // Invariant: witness nonnegative at lo, negative at hi.
        let mut lo = Self::grid_s(j);
        let mut hi = Self::grid_s(j - 1);
        while hi - lo >= S_RESOLUTION {
            let mid = 0.5 * (lo + hi);
            let v = self.transformed(mid)?;
            if self.witness(&v, idx).1 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let s_threshold = 0.5 * (lo + hi);
        Ok(WitnessDepth { index: *idx, value, tau: (1.0 - s_threshold) / 2.0, s_threshold })
    }
}

/// Lee depth `(τ, s_th)` for one witness.
pub fn ncd_for_witness(source: &NcdSource, idx: &WitnessIndex, m_eff: f64, kind: WitnessKind) -> Result<(f64, f64)> {
    let mut eval = Evaluator::new(source, kind, m_eff, idx.max_index())?;
    let d = eval.depth(idx)?;
    Ok((d.tau, d.s_threshold))
}

/// Lee depths for every witness in `witnesses` and their maximum. Witnesses
/// whose evaluation fails are reported in `failures` and skipped.
pub fn ncd_max(source: &NcdSource, witnesses: &[WitnessIndex], m_eff: f64, kind: WitnessKind) -> Result<NcdResult> {
    if witnesses.is_empty() {
        return Err(Error::InvalidParams("witness list is empty".into()));
    }
    let max_index = witnesses.iter().map(WitnessIndex::max_index).max().unwrap_or(0);
    let mut eval = Evaluator::new(source, kind, m_eff, max_index)?;
    let mut per_witness = Vec::with_capacity(witnesses.len());
    let mut failures = Vec::new();
    for idx in witnesses {
        match eval.depth(idx) {
            Ok(d) => per_witness.push(d),
            Err(e) => {
                log::warn!("witness {idx} skipped: {e}");
                failures.push(WitnessFailure { index: *idx, error: e.to_string() });
            }
        }
    }
    let best = per_witness
        .iter()
        .fold(None::<&WitnessDepth>, |best, d| match best {
            Some(b) if b.tau >= d.tau => Some(b),
            _ => Some(d),
        })
        .copied()
        .ok_or_else(|| Error::NumericalInstability(format!("all {} witnesses failed", witnesses.len())))?;
    Ok(NcdResult { kind, m_eff, per_witness, tau_max: best.tau, best_witness: best.index, failures })
}
