use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::CompensatedSum;
use crate::photostats::{DetectionMatrix, Distribution};

/// Starting point of the iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmInit {
    /// Equal weight on every photon number `0..=n_max`.
    #[default]
    Uniform,
    /// The histogram itself, padded and mixed with 1% uniform weight so that
    /// no component starts at zero.
    HistogramCopy,
    Custom(Distribution),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once every element above [`EM_FLOOR`] changes by less than this
    /// relative amount in one step.
    pub rel_tol: f64,
    pub init: EmInit,
    /// Keep the log-likelihood of every iterate.
    #[serde(default)]
    pub record_history: bool,
    /// Adaptive over-relaxation of the update (same fixed points).
    #[serde(default = "default_true")]
    pub accelerate: bool,
}

fn default_true() -> bool {
    true
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iter: 100_000, rel_tol: 1e-10, init: EmInit::Uniform, record_history: false, accelerate: true }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter < 1 {
            return Err(Error::InvalidParams("max_iter must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::InvalidParams(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        Ok(())
    }
}

/// Elements at or below this value are ignored by the stopping rule.
pub const EM_FLOOR: f64 = 1e-15;

/// Relative slack for rounding when checking that the log-likelihood does
/// not decrease.
pub const LIKELIHOOD_SLACK: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmResult {
    pub distribution: Distribution,
    pub iterations: usize,
    pub converged: bool,
    pub log_likelihood: f64,
    /// `log_likelihood` of iterates `0..=iterations` when requested.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub history: Vec<f64>,
}

fn check_shapes(f: &Distribution, t: &DetectionMatrix) -> Result<()> {
    if f.cutoff() > t.c_max() {
        return Err(Error::DimensionMismatch(format!(
            "histogram reaches c = {} but the detection matrix stops at c_max = {}",
            f.cutoff(),
            t.c_max()
        )));
    }
    Ok(())
}

/// `Σ_c f(c) ln(Σ_n T(c,n) p(n))` with `0 ln 0 = 0`; `-∞` when an observed
/// bin has zero model probability.
pub fn log_likelihood(f: &Distribution, t: &DetectionMatrix, p: &Distribution) -> Result<f64> {
    check_shapes(f, t)?;
    if p.cutoff() > t.n_max() {
        return Err(Error::DimensionMismatch(format!(
            "distribution cutoff {} exceeds detection matrix n_max {}",
            p.cutoff(),
            t.n_max()
        )));
    }
    let q = model(t, p.probs(), f.len());
    Ok(likelihood_of(f.probs(), &q))
}

fn model(t: &DetectionMatrix, p: &[f64], rows: usize) -> Vec<f64> {
    (0..rows).map(|c| t.row(c).iter().zip(p).map(|(a, b)| a * b).sum()).collect()
}

fn likelihood_of(f: &[f64], q: &[f64]) -> f64 {
    let mut acc = CompensatedSum::new();
    for (&fc, &qc) in f.iter().zip(q) {
        if fc == 0.0 {
            continue;
        }
        if qc <= 0.0 {
            return f64::NEG_INFINITY;
        }
        acc.add(fc * qc.ln());
    }
    acc.value()
}

fn initial(f: &Distribution, t: &DetectionMatrix, init: &EmInit) -> Result<Vec<f64>> {
    let len = t.n_max() + 1;
    let p = match init {
        EmInit::Uniform => vec![1.0 / len as f64; len],
        EmInit::HistogramCopy => {
            let u = 0.01 / len as f64;
            (0..len).map(|n| 0.99 * f.prob(n) + u).collect()
        }
        EmInit::Custom(d) => {
            if d.cutoff() > t.n_max() {
                return Err(Error::DimensionMismatch(format!(
                    "initial distribution cutoff {} exceeds n_max {}",
                    d.cutoff(),
                    t.n_max()
                )));
            }
            d.prefix(len)
        }
    };
    let total: f64 = p.iter().sum();
    Ok(p.into_iter().map(|x| x / total).collect())
}

/// One application of the multiplicative update
/// `p'(n) = p(n) Σ_c f(c) T(c,n) / Σ_n' T(c,n') p(n')`.
struct EmMap<'a> {
    f: &'a [f64],
    t: &'a DetectionMatrix,
    ratio: Vec<f64>,
}

impl EmMap<'_> {
    /// Writes the multiplier `g(n) = Σ_c f(c) T(c,n) / q(c)` into `out`.
    fn multiplier(&mut self, p: &[f64], out: &mut [f64]) -> Result<()> {
        let q = model(self.t, p, self.f.len());
        for (c, (r, (&fc, &qc))) in self.ratio.iter_mut().zip(self.f.iter().zip(&q)).enumerate() {
            *r = if fc > 0.0 {
                if qc <= 0.0 {
                    return Err(Error::Degenerate(format!("observed bin c = {c} has zero model probability")));
                }
                fc / qc
            } else {
                0.0
            };
        }
        out.iter_mut().for_each(|x| *x = 0.0);
        for (c, &r) in self.ratio.iter().enumerate() {
            if r == 0.0 {
                continue;
            }
            for (acc, &tc) in out.iter_mut().zip(self.t.row(c)) {
                *acc += r * tc;
            }
        }
        Ok(())
    }

    fn log_likelihood(&self, p: &[f64]) -> f64 {
        likelihood_of(self.f, &model(self.t, p, self.f.len()))
    }
}

fn max_relative_change(old: &[f64], new: &[f64]) -> f64 {
    old.iter()
        .zip(new)
        .filter(|(a, b)| **a > EM_FLOOR || **b > EM_FLOOR)
        .map(|(a, b)| (a - b).abs() / a.max(*b))
        .fold(0.0, f64::max)
}

/// `out(n) ∝ p(n) g(n)^ω`, normalized.
fn relaxed_step(p: &[f64], g: &[f64], omega: f64, out: &mut [f64]) {
    let mut total = 0.0;
    for ((o, pn), gn) in out.iter_mut().zip(p).zip(g) {
        *o = if *pn > 0.0 {
            if omega == 1.0 {
                pn * gn
            } else {
                pn * gn.powf(omega)
            }
        } else {
            0.0
        };
        total += *o;
    }
    out.iter_mut().for_each(|x| *x /= total);
}

/// Largest exponent tried by the over-relaxed update.
const OMEGA_MAX: f64 = 64.0;

/// Maximum-likelihood photon-number distribution behind histogram `f` by
/// iterating the multiplicative update of [`EmMap`].
///
/// With `cfg.accelerate` each step first tries the over-relaxed update
/// `p(n) g(n)^ω` with an adaptive `ω ≥ 1`, keeping it only if the
/// likelihood does not drop and otherwise taking the plain update (`ω = 1`).
/// The fixed points are those of the plain update and the likelihood is
/// non-decreasing either way. `iterations` counts evaluations of `g`.
///
/// Returns the last iterate (the best, by monotonicity) whether or not the
/// stopping rule was met; `converged` tells which.
pub fn em_iterate(f: &Distribution, t: &DetectionMatrix, cfg: &EmConfig) -> Result<EmResult> {
    cfg.validate()?;
    check_shapes(f, t)?;
    let len = t.n_max() + 1;
    let mut map = EmMap { f: f.probs(), t, ratio: vec![0.0; f.len()] };
    let mut p = initial(f, t, &cfg.init)?;
    let mut g = vec![0.0; len];
    let mut next = vec![0.0; len];
    let mut history = Vec::new();
    let mut ll = map.log_likelihood(&p);
    if cfg.record_history {
        history.push(ll);
    }
    let mut omega: f64 = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        map.multiplier(&p, &mut g)?;
        iterations += 1;
        let mut ll_next = f64::NEG_INFINITY;
        if cfg.accelerate && omega > 1.0 {
            relaxed_step(&p, &g, omega, &mut next);
            ll_next = map.log_likelihood(&next);
        }
        if ll_next >= ll {
            omega = (omega * 2.0).min(OMEGA_MAX);
        } else {
            relaxed_step(&p, &g, 1.0, &mut next);
            ll_next = map.log_likelihood(&next);
            omega = if cfg.accelerate { (omega / 2.0).max(2.0) } else { 1.0 };
        }
        debug_assert!(next.iter().all(|x| *x >= 0.0), "EM produced a negative element");
        debug_assert!((next.iter().sum::<f64>() - 1.0).abs() < 1e-12, "EM lost normalization");
        debug_assert!(
            ll_next >= ll - LIKELIHOOD_SLACK * ll.abs().max(1.0),
            "log-likelihood decreased at iteration {iterations}: {ll} -> {ll_next}"
        );
        let change = max_relative_change(&p, &next);
        std::mem::swap(&mut p, &mut next);
        ll = ll_next;
        if cfg.record_history {
            history.push(ll);
        }
        if change < cfg.rel_tol {
            converged = true;
            break;
        }
    }
    if !converged {
        log::warn!("EM stopped after {iterations} iterations without meeting rel_tol = {:e}", cfg.rel_tol);
    }
    let last = p.iter().rposition(|x| *x > 0.0).unwrap_or(0);
    p.truncate(last + 1);
    Ok(EmResult { distribution: Distribution::new(p)?, iterations, converged, log_likelihood: ll, history })
}
