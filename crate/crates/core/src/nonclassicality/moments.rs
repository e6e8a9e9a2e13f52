use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photostats::Distribution;

/// Largest order served by [`stirling_first_kind`] by default.
pub const STIRLING_LIMIT: usize = 64;

/// Normally ordered intensity moments `⟨W^k⟩`, `k = 0..=k_max`, with
/// `⟨W^0⟩ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    moments: Vec<f64>,
}

impl MomentVector {
    pub fn new(moments: Vec<f64>) -> Result<Self> {
        if moments.len() < 2 {
            return Err(Error::InvalidParams("moment vector needs k_max >= 1".into()));
        }
        if moments[0] != 1.0 {
            return Err(Error::InvalidParams(format!("zeroth moment must be 1, got {}", moments[0])));
        }
        if let Some(x) = moments.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite moment {x}")));
        }
        Ok(Self { moments })
    }

    /// Moments `λ^k` of a coherent state.
    pub fn coherent(lambda: f64, k_max: usize) -> Self {
        Self { moments: (0..=k_max as i32).map(|k| lambda.powi(k)).collect() }
    }

    pub fn k_max(&self) -> usize {
        self.moments.len() - 1
    }

    pub fn get(&self, k: usize) -> f64 {
        self.moments[k]
    }

    pub fn moments(&self) -> &[f64] {
        &self.moments
    }

    /// Effective mode number `⟨W⟩² / (⟨W²⟩ − ⟨W⟩²)`, if positive and finite.
    pub fn effective_modes(&self) -> Option<f64> {
        if self.k_max() < 2 {
            return None;
        }
        let w1 = self.moments[1];
        let m = w1 * w1 / (self.moments[2] - w1 * w1);
        (m.is_finite() && m > 0.0).then_some(m)
    }
}

/// Signed Stirling number of the first kind, with the default order limit.
pub fn stirling_first_kind(k: usize, k_prime: usize) -> Result<BigInt> {
    stirling_first_kind_with_limit(k, k_prime, STIRLING_LIMIT)
}

pub fn stirling_first_kind_with_limit(k: usize, k_prime: usize, limit: usize) -> Result<BigInt> {
    if k > limit {
        return Err(Error::Range(format!("Stirling order {k} exceeds limit {limit}")));
    }
    if k_prime > k {
        return Ok(BigInt::zero());
    }
    Ok(stirling_row(k).swap_remove(k_prime))
}

/// Row `S(k, 0..=k)` from `S(j+1, i) = S(j, i-1) - j S(j, i)`.
fn stirling_row(k: usize) -> Vec<BigInt> {
    let mut row = vec![BigInt::one()];
    for j in 0..k {
        let mut next = vec![BigInt::zero(); j + 2];
        for (i, s) in row.iter().enumerate() {
            next[i + 1] += s;
            next[i] -= s * BigInt::from(j);
        }
        row = next;
    }
    row
}

/// Raw photon-number moments `⟨n^k⟩`.
pub fn raw_moments(p: &Distribution, k_max: usize) -> Vec<f64> {
    let mut out = vec![0.0; k_max + 1];
    for (n, &pn) in p.probs().iter().enumerate() {
        let mut pow = pn;
        for slot in out.iter_mut() {
            *slot += pow;
            pow *= n as f64;
        }
    }
    out
}

/// `⟨W^k⟩` from raw moments through Stirling numbers of the first kind.
pub fn factorial_moments_via_stirling(p: &Distribution, k_max: usize) -> Result<Vec<f64>> {
    let raw = raw_moments(p, k_max);
    let mut out = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        if k > STIRLING_LIMIT {
            return Err(Error::Range(format!("Stirling order {k} exceeds limit {STIRLING_LIMIT}")));
        }
        let row = stirling_row(k);
        let v: f64 = row.iter().zip(&raw).map(|(s, r)| s.to_f64().unwrap_or(f64::NAN) * r).sum();
        out.push(v);
    }
    Ok(out)
}

/// Factorial moments `Σ n(n-1)···(n-k+1) p(n)`.
pub fn factorial_moments(p: &Distribution, k_max: usize) -> Result<MomentVector> {
    if k_max < 1 {
        return Err(Error::InvalidParams("k_max must be at least 1".into()));
    }
    let mut out = vec![0.0; k_max + 1];
    for (n, &pn) in p.probs().iter().enumerate() {
        if pn == 0.0 {
            continue;
        }
        let mut falling = pn;
        for (k, slot) in out.iter_mut().enumerate() {
            if k > n {
                break;
            }
            *slot += falling;
            falling *= (n - k) as f64;
        }
    }
    out[0] = 1.0;
    warn_on_truncation(p, &out);
    if cfg!(debug_assertions) && k_max <= 6 {
        let check = factorial_moments_via_stirling(p, k_max)?;
        for k in 1..=k_max {
            let scale = out[k].abs().max(raw_moments(p, k)[k] * 1e-6).max(1e-300);
            debug_assert!((check[k] - out[k]).abs() <= 1e-8 * scale, "moment {k}: {} vs {}", out[k], check[k]);
        }
    }
    MomentVector::new(out)
}

fn warn_on_truncation(p: &Distribution, moments: &[f64]) {
    let tail = (1.0 - p.total()).max(0.0);
    if tail == 0.0 {
        return;
    }
    // A missing tail sits beyond the cutoff, so each moment loses at least
    // tail · (cutoff+1)_k.
    let edge = p.len() as f64;
    let mut falling = 1.0;
    for (k, &m) in moments.iter().enumerate().skip(1) {
        falling *= (edge - (k - 1) as f64).max(0.0);
        let lost = tail * falling;
        if m > 0.0 && lost > 1e-9 * m {
            log::warn!("truncated tail of {tail:.2e} may bias moment {k} by {:.2e} relative", lost / m);
            return;
        }
    }
}

/// Modified moments `n! p(n) / p(0)`, `n = 0..=k_max`.
pub fn modified_moments(p: &Distribution, k_max: usize) -> Result<MomentVector> {
    let p0 = p.prob(0);
    if p0 <= 0.0 {
        return Err(Error::Degenerate("p(0) = 0; modified moments are undefined".into()));
    }
    let mut out = Vec::with_capacity(k_max + 1);
    let mut fact = 1.0;
    for n in 0..=k_max.max(1) {
        if n > 0 {
            fact *= n as f64;
        }
        out.push(fact * p.prob(n) / p0);
    }
    out[0] = 1.0;
    MomentVector::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::photostats::mandel_rice_pmf;

    #[test]
    fn stirling_base_cases() {
        assert_eq!(stirling_first_kind(0, 0).unwrap(), BigInt::one());
        for k in 1..10 {
            assert_eq!(stirling_first_kind(k, 0).unwrap(), BigInt::zero());
            assert_eq!(stirling_first_kind(k, k).unwrap(), BigInt::one());
        }
        assert_eq!(stirling_first_kind(2, 1).unwrap(), BigInt::from(-1));
    }

    #[test]
    fn stirling_matches_polynomial_expansion() {
        // Expand n(n-1)···(n-k+1) coefficient by coefficient.
        for k in 0..=12usize {
            let mut poly = vec![BigInt::one()];
            for j in 0..k {
                let mut next = vec![BigInt::zero(); poly.len() + 1];
                for (i, c) in poly.iter().enumerate() {
                    next[i + 1] += c;
                    next[i] -= c * BigInt::from(j);
                }
                poly = next;
            }
            for (kp, c) in poly.iter().enumerate() {
                assert_eq!(&stirling_first_kind(k, kp).unwrap(), c, "S({k},{kp})");
            }
        }
        assert_eq!(stirling_first_kind(5, 2).unwrap(), BigInt::from(-50));
    }

    #[test]
    fn stirling_limit_enforced() {
        assert!(matches!(stirling_first_kind(65, 3), Err(Error::Range(_))));
        assert!(stirling_first_kind_with_limit(80, 3, 100).is_ok());
    }

    #[test]
    fn poisson_factorial_moments_are_powers() {
        let p = Distribution::poisson(3.7, 1e-15).unwrap();
        let mv = factorial_moments(&p, 6).unwrap();
        for k in 0..=6 {
            let expect = 3.7f64.powi(k as i32);
            assert!((mv.get(k) - expect).abs() < 1e-10 * expect, "k={k}");
        }
    }

    #[test]
    fn fock_one_moments() {
        let mv = factorial_moments(&Distribution::point(1), 3).unwrap();
        assert_eq!(mv.moments(), &[1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn mandel_rice_moments_closed_form() {
        let (m, b) = (3.5, 0.8);
        let p = Distribution::new(mandel_rice_pmf(m, b, 1e-16).unwrap()).unwrap();
        let mv = factorial_moments(&p, 4).unwrap();
        let mut expect = 1.0;
        for k in 1..=4 {
            expect *= (k as f64 - 1.0 + m) * b;
            assert!((mv.get(k) - expect).abs() < 1e-9 * expect, "k={k}: {} vs {expect}", mv.get(k));
        }
        assert!((mv.get(2) - b * b * m * (m + 1.0)).abs() < 1e-9 * mv.get(2));
    }

    #[test]
    fn stirling_route_agrees_with_falling_factorials() {
        let p = Distribution::new(mandel_rice_pmf(2.0, 1.3, 1e-16).unwrap()).unwrap();
        let direct = factorial_moments(&p, 6).unwrap();
        let via = factorial_moments_via_stirling(&p, 6).unwrap();
        for k in 0..=6 {
            assert!((direct.get(k) - via[k]).abs() <= 1e-10 * direct.get(k), "k={k}");
        }
    }

    #[test]
    fn modified_moments_of_poisson_and_vacuum() {
        let p = Distribution::poisson(1.9, 1e-15).unwrap();
        let mm = modified_moments(&p, 5).unwrap();
        for n in 0..=5 {
            let expect = 1.9f64.powi(n as i32);
            assert!((mm.get(n) - expect).abs() < 1e-12 * expect);
        }
        let vac = modified_moments(&Distribution::point(0), 3).unwrap();
        assert_eq!(vac.moments(), &[1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(modified_moments(&Distribution::point(2), 3), Err(Error::Degenerate(_))));
    }

    #[test]
    fn modified_moments_match_mandel_quadrature() {
        // Two-mode thermal field: P(W) = W e^{-W/B} / B², so
        // n! p(n)/p(0) = ∫ W^{n+1} e^{-W(1+1/B)} dW / ∫ W e^{-W(1+1/B)} dW.
        let (m, b) = (2.0, 0.5);
        let p = Distribution::new(mandel_rice_pmf(m, b, 1e-16).unwrap()).unwrap();
        let mm = modified_moments(&p, 5).unwrap();
        let rate = 1.0 + 1.0 / b;
        let integral = |pow: i32| {
            // Simpson on [0, 60] is ample for rate 3.
            let steps = 20_000;
            let h = 60.0 / steps as f64;
            let f = |w: f64| w.powi(pow) * (-rate * w).exp();
            let mut acc = f(0.0) + f(60.0);
            for i in 1..steps {
                acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
            }
            acc * h / 3.0
        };
        let norm = integral(1);
        for n in 0..=5 {
            let q = integral(n as i32 + 1) / norm;
            assert!((mm.get(n) - q).abs() < 1e-9 * q, "n={n}: {} vs {q}", mm.get(n));
        }
    }
}
