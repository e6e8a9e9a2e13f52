use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simplex::{minimize, SimplexOptions};
use crate::error::{Error, Result};
use crate::photostats::{auto_cutoffs, detection_matrix, mandel_rice_prefix, DetectionMatrix, DetectorParams, JointDistribution, TwinBeamParams, TAIL_TOL};
use crate::rng::task_rng;

/// Allowed range of every mode count.
pub const MODE_BOUNDS: (f64, f64) = (1e-3, 1e4);
/// Allowed range of every mean photon number per mode.
pub const MEAN_BOUNDS: (f64, f64) = (0.0, 1e3);
/// Smallest per-mode mean represented in log space; stands in for zero.
const B_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of simplex runs; the first starts at the initial guess, the
    /// rest at random log-space perturbations of it.
    pub restarts: usize,
    pub seed: u64,
    /// Eliminate `b_s`, `b_i` through the beam means inferred from the
    /// photocount means, leaving four free parameters.
    pub pin_means: bool,
    pub max_evals: usize,
    /// Photon-number cutoffs of the model; derived from the initial guess
    /// and the histogram when absent.
    pub photon_cutoffs: Option<(usize, usize)>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { restarts: 10, seed: 0, pin_means: false, max_evals: 4000, photon_cutoffs: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: TwinBeamParams,
    /// Negative log-likelihood per frame, `−Σ h ln M`.
    pub objective_value: f64,
    pub initial_objective: f64,
    pub converged: bool,
    pub n_evals: usize,
    /// All fitted per-mode means vanish; mode counts are then arbitrary.
    pub degenerate: bool,
}

/// Forward model of the joint photocount histogram, evaluated only on the
/// observed bins.
struct JointModel {
    t_s: DetectionMatrix,
    t_i: DetectionMatrix,
    /// Observed bins `(c_s, c_i, h)`.
    bins: Vec<(usize, usize, f64)>,
    cs_len: usize,
    ci_len: usize,
}

impl JointModel {
    fn objective(&self, p: &TwinBeamParams) -> f64 {
        let (ns, ni) = (self.t_s.n_max(), self.t_i.n_max());
        let n_pair = ns.min(ni) + 1;
        let (Ok(pp), Ok(sn), Ok(inn)) = (
            mandel_rice_prefix(p.m_p, p.b_p, n_pair),
            mandel_rice_prefix(p.m_s, p.b_s, ns + 1),
            mandel_rice_prefix(p.m_i, p.b_i, ni + 1),
        ) else {
            return f64::INFINITY;
        };
        let pair_max = pp.iter().cloned().fold(0.0, f64::max);
        let used: Vec<usize> = (0..n_pair).filter(|&n| pp[n] > 1e-17 * pair_max).collect();
        let shifted = |t: &DetectionMatrix, comp: &[f64], len: usize, n: usize| -> Vec<f64> {
            (0..len).map(|c| t.row(c)[n..].iter().zip(comp).map(|(a, b)| a * b).sum()).collect()
        };
        let u: Vec<Vec<f64>> = used.iter().map(|&n| shifted(&self.t_s, &sn, self.cs_len, n)).collect();
        let v: Vec<Vec<f64>> = used.iter().map(|&n| shifted(&self.t_i, &inn, self.ci_len, n)).collect();
        let mut nll = 0.0;
        for &(cs, ci, h) in &self.bins {
            let m: f64 = used.iter().enumerate().map(|(k, &n)| pp[n] * u[k][cs] * v[k][ci]).sum();
            if m <= 0.0 {
                return f64::INFINITY;
            }
            nll -= h * m.ln();
        }
        nll
    }
}

fn check_bounds(p: &TwinBeamParams) -> Result<()> {
    p.validate()?;
    let in_m = |m: f64| (MODE_BOUNDS.0..=MODE_BOUNDS.1).contains(&m);
    let in_b = |b: f64| (MEAN_BOUNDS.0..=MEAN_BOUNDS.1).contains(&b);
    if !(in_m(p.m_p) && in_m(p.m_s) && in_m(p.m_i) && in_b(p.b_p) && in_b(p.b_s) && in_b(p.b_i)) {
        return Err(Error::InvalidParams(format!("initial parameters outside fit bounds: {p:?}")));
    }
    Ok(())
}

/// Photon mean behind a photocount mean, inverting
/// `⟨c⟩ ≈ N − N(1−D) exp(−η⟨n⟩/N)`.
fn photon_mean(det: &DetectorParams, mean_c: f64) -> Result<f64> {
    let n = det.n_pix as f64;
    let arg = (1.0 - mean_c / n) / (1.0 - det.d);
    if !(arg > 0.0) || det.eta == 0.0 {
        return Err(Error::Degenerate(format!("photocount mean {mean_c} cannot be inverted for this detector")));
    }
    Ok((-n / det.eta * arg.ln()).max(0.0))
}

struct Mapping {
    pin: Option<(f64, f64)>,
}

impl Mapping {
    fn encode(&self, p: &TwinBeamParams) -> Vec<f64> {
        let lb = |b: f64| b.max(B_FLOOR).ln();
        match self.pin {
            None => vec![p.m_p.ln(), p.m_s.ln(), p.m_i.ln(), lb(p.b_p), lb(p.b_s), lb(p.b_i)],
            Some(_) => vec![p.m_p.ln(), p.m_s.ln(), p.m_i.ln(), lb(p.b_p)],
        }
    }

    /// Parameters for a simplex point, clamped into bounds; `None` when the
    /// pinned means leave a noise component negative.
    fn decode(&self, x: &[f64]) -> Option<TwinBeamParams> {
        let m = |v: f64| v.exp().clamp(MODE_BOUNDS.0, MODE_BOUNDS.1);
        let b = |v: f64| {
            let b = v.exp().min(MEAN_BOUNDS.1);
            if b <= B_FLOOR {
                0.0
            } else {
                b
            }
        };
        let (m_p, m_s, m_i, b_p) = (m(x[0]), m(x[1]), m(x[2]), b(x[3]));
        let (b_s, b_i) = match self.pin {
            None => (b(x[4]), b(x[5])),
            Some((mean_s, mean_i)) => {
                let (ns, ni) = (mean_s - m_p * b_p, mean_i - m_p * b_p);
                if ns < 0.0 || ni < 0.0 {
                    return None;
                }
                ((ns / m_s).min(MEAN_BOUNDS.1), (ni / m_i).min(MEAN_BOUNDS.1))
            }
        };
        Some(TwinBeamParams { m_p, m_s, m_i, b_p, b_s, b_i })
    }
}

/// Maximum-likelihood six-parameter twin-beam model for a joint photocount
/// histogram.
pub fn fit_twin_beam(
    h: &JointDistribution,
    det_s: &DetectorParams,
    det_i: &DetectorParams,
    init: &TwinBeamParams,
    cfg: &FitConfig,
) -> Result<FitResult> {
    check_bounds(init)?;
    det_s.validate()?;
    det_i.validate()?;
    if cfg.restarts == 0 || cfg.max_evals == 0 {
        return Err(Error::InvalidParams("restarts and max_evals must be positive".into()));
    }
    let (rows, _) = h.shape();
    let mut bins = Vec::new();
    let (mut cs_hi, mut ci_hi) = (0, 0);
    for cs in 0..rows {
        for (ci, &w) in h.row(cs).iter().enumerate() {
            if w > 0.0 {
                bins.push((cs, ci, w));
                cs_hi = cs_hi.max(cs);
                ci_hi = ci_hi.max(ci);
            }
        }
    }
    let (n_s, n_i) = match cfg.photon_cutoffs {
        Some(c) => c,
        None => {
            let (a, b) = auto_cutoffs(init, TAIL_TOL)?;
            let from_counts = |c: usize, det: &DetectorParams| ((c + 1) as f64 / det.eta.max(1e-3) * 1.5) as usize + 20;
            ((a * 3 / 2 + 10).max(from_counts(cs_hi, det_s)), (b * 3 / 2 + 10).max(from_counts(ci_hi, det_i)))
        }
    };
    let model = JointModel {
        t_s: detection_matrix(det_s, cs_hi.min(det_s.n_pix as usize), n_s)?,
        t_i: detection_matrix(det_i, ci_hi.min(det_i.n_pix as usize), n_i)?,
        bins,
        cs_len: cs_hi + 1,
        ci_len: ci_hi + 1,
    };
    let pin = if cfg.pin_means {
        let (mc_s, mc_i) = h.means();
        Some((photon_mean(det_s, mc_s)?, photon_mean(det_i, mc_i)?))
    } else {
        None
    };
    let mapping = Mapping { pin };
    let start = mapping.encode(init);
    let initial_objective = mapping.decode(&start).map_or(f64::INFINITY, |p| model.objective(&p));
    let objective = |x: &[f64]| mapping.decode(x).map_or(f64::INFINITY, |p| model.objective(&p));
    let opts = SimplexOptions { max_evals: cfg.max_evals, ..SimplexOptions::default() };

    let runs: Vec<_> = (0..cfg.restarts as u64)
        .into_par_iter()
        .map(|r| {
            let x0: Vec<f64> = if r == 0 {
                start.clone()
            } else {
                let mut rng = task_rng(cfg.seed, r);
                start.iter().map(|v| v + rng.random_range(-1.0..1.0)).collect()
            };
            minimize(objective, &x0, &opts)
        })
        .collect();
    let n_evals = runs.iter().map(|r| r.evals).sum();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.value < a.value { b } else { a })
        .expect("at least one restart");
    let params = mapping
        .decode(&best.x)
        .ok_or_else(|| Error::NonConvergence { iterations: n_evals })?;
    let degenerate = params.b_p.max(params.b_s).max(params.b_i) < 1e-6;
    if degenerate {
        log::warn!("fit collapsed to vacuum; mode counts are not identifiable");
    }
    Ok(FitResult {
        params,
        objective_value: best.value,
        initial_objective,
        converged: best.converged && best.value.is_finite(),
        n_evals,
        degenerate,
    })
}
