use serde::{Deserialize, Serialize};

use super::MomentVector;
use crate::error::{Error, Result};
use crate::numerics::CompensatedSum;
use crate::photostats::Distribution;

/// Accepted relative accuracy estimate of the alternating kernel sum.
const KERNEL_ACCURACY: f64 = 1e-8;

/// Longest s-ordered output produced before giving up.
const MAX_ROWS: usize = 1 << 20;

/// Field-operator ordering `s` and the mode number entering the kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingParams {
    pub s: f64,
    pub m_eff: f64,
}

impl OrderingParams {
    pub fn new(s: f64, m_eff: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&s) {
            return Err(Error::Domain(format!("ordering parameter must lie in [-1, 1], got {s}")));
        }
        if !(m_eff > 0.0 && m_eff.is_finite()) {
            return Err(Error::Domain(format!("mode number must be positive, got {m_eff}")));
        }
        Ok(Self { s, m_eff })
    }

    /// Mean added noise photons per mode, `(1 − s)/2`.
    pub fn noise_per_mode(&self) -> f64 {
        (1.0 - self.s) / 2.0
    }
}

/// `⟨W^k⟩_s = Σ_{k'=0}^{k} C(k,k') Γ(k+M)/Γ(k'+M) ((1−s)/2)^{k−k'} ⟨W^{k'}⟩`.
pub fn s_ordered_moments(mv: &MomentVector, ord: &OrderingParams) -> Result<MomentVector> {
    let b = ord.noise_per_mode();
    let m = ord.m_eff;
    let k_max = mv.k_max();
    let mut out = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let mut acc = 0.0;
        // Walk k' downward so C(k,k') and the Γ ratio build up by products.
        let mut coeff = 1.0;
        for kp in (0..=k).rev() {
            acc += coeff * mv.get(kp);
            if kp > 0 {
                coeff *= kp as f64 / (k - kp + 1) as f64 * (kp as f64 - 1.0 + m) * b;
            }
        }
        out.push(acc);
    }
    MomentVector::new(out)
}

/// Tabulated pieces of the photon-number ordering kernel for one `(s, M)`.
pub struct PndKernel {
    s: f64,
    m: f64,
    b: f64,
    /// `ln j!`
    ln_fact: Vec<f64>,
    /// `ln Γ(M + j) − ln Γ(M)`
    ln_rising: Vec<f64>,
    fallbacks: usize,
}

impl PndKernel {
    pub fn new(ord: &OrderingParams) -> Result<Self> {
        if ord.s >= 1.0 {
            return Err(Error::Singularity("the ordering kernel is singular at s = 1".into()));
        }
        OrderingParams::new(ord.s, ord.m_eff)?;
        Ok(Self {
            s: ord.s,
            m: ord.m_eff,
            b: ord.noise_per_mode(),
            ln_fact: vec![0.0],
            ln_rising: vec![0.0],
            fallbacks: 0,
        })
    }

    fn reserve(&mut self, len: usize) {
        while self.ln_fact.len() <= len {
            let j = self.ln_fact.len();
            let prev = self.ln_fact[j - 1];
            self.ln_fact.push(prev + (j as f64).ln());
            let prev = self.ln_rising[j - 1];
            self.ln_rising.push(prev + (self.m + j as f64 - 1.0).ln());
        }
    }

    fn ln_choose(&self, n: usize, k: usize) -> f64 {
        self.ln_fact[n] - self.ln_fact[k] - self.ln_fact[n - k]
    }

    /// Number of entries that needed the nonnegative expansion.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    /// Kernel entry `S_p(n, n')`.
    pub fn entry(&mut self, n: usize, np: usize) -> Result<f64> {
        self.reserve(n + np + 1);
        if let Some(v) = self.alternating(n, np) {
            return Ok(v);
        }
        self.fallbacks += 1;
        let v = self.expanded(n, np);
        if !v.is_finite() {
            return Err(Error::NumericalInstability(format!(
                "ordering kernel entry ({n}, {np}) at s = {} is not finite",
                self.s
            )));
        }
        Ok(v)
    }

    /// Literal alternating sum over `l`, or `None` when its accuracy
    /// estimate misses [`KERNEL_ACCURACY`].
    fn alternating(&self, n: usize, np: usize) -> Option<f64> {
        let s = self.s;
        if s <= -1.0 {
            return None;
        }
        let m = self.m;
        let ln_pref = m * (2.0 / (3.0 - s)).ln() + n as f64 * ((1.0 - s) / (3.0 - s)).ln() - np as f64 * (1.0 - s).ln();
        let ln_t0 = ln_pref + np as f64 * (1.0 + s).ln() + self.ln_rising[n] - self.ln_fact[n];
        let ratio = 4.0 / ((3.0 - s) * (1.0 + s));
        let mut t = ln_t0.exp();
        if np % 2 == 1 {
            t = -t;
        }
        let mut sum = CompensatedSum::new();
        for l in 0..=np {
            sum.add(t);
            let lf = l as f64;
            t *= -((np - l) as f64) / (lf + 1.0) * (n as f64 + lf + m) / (lf + m) * ratio;
        }
        let value = sum.value();
        let err = sum.abs_sum() * f64::EPSILON * (np as f64 + 8.0 + ln_t0.abs());
        (value.is_finite() && err.is_finite() && err <= KERNEL_ACCURACY * value.abs()).then_some(value)
    }

    /// Equivalent sum of nonnegative terms,
    /// `(1+b)^{−M−n'} Σ_i C(n',i) b^{n'−i} (1−b)^i C(n−i+M+n'−1, n−i) (b/(1+b))^{n−i}`.
    fn expanded(&self, n: usize, np: usize) -> f64 {
        let b = self.b;
        if b == 0.0 {
            return if n == np { 1.0 } else { 0.0 };
        }
        let ln_b = b.ln();
        let ln_1mb = (1.0 - b).ln();
        let ln_1pb = b.ln_1p();
        let base = -(self.m + np as f64) * ln_1pb;
        let mut acc = 0.0;
        for i in 0..=n.min(np) {
            if i > 0 && b >= 1.0 {
                break;
            }
            let j = n - i;
            let mut ln_t = base + self.ln_choose(np, i) + (np - i) as f64 * ln_b;
            if i > 0 {
                ln_t += i as f64 * ln_1mb;
            }
            // C(j + M + n' − 1, j) = Γ(M+n'+j) / (j! Γ(M+n'))
            ln_t += self.ln_rising[np + j] - self.ln_rising[np] - self.ln_fact[j];
            ln_t += j as f64 * (ln_b - ln_1pb);
            acc += ln_t.exp();
        }
        acc
    }

    fn row(&mut self, n: usize, p: &[f64]) -> Result<f64> {
        let mut acc = CompensatedSum::new();
        for (np, &q) in p.iter().enumerate() {
            if q != 0.0 {
                acc.add(q * self.entry(n, np)?);
            }
        }
        Ok(acc.value())
    }
}

/// First `rows` entries of the s-ordered photon-number distribution.
pub fn s_ordered_pnd_rows(p: &Distribution, ord: &OrderingParams, rows: usize) -> Result<Vec<f64>> {
    let mut kernel = PndKernel::new(ord)?;
    (0..rows).map(|n| kernel.row(n, p.probs())).collect()
}

/// s-ordered photon-number distribution, extended until it carries the
/// same total mass as `p` to within 1e-10. Entries are signed in general.
pub fn s_ordered_pnd(p: &Distribution, ord: &OrderingParams) -> Result<Vec<f64>> {
    let mut kernel = PndKernel::new(ord)?;
    let target = p.total() - 1e-10;
    let mut out = Vec::new();
    let mut cum = 0.0;
    while out.len() < p.len() || cum < target {
        if out.len() >= MAX_ROWS {
            return Err(Error::Truncation { tail: target - cum, tol: 1e-10 });
        }
        let v = kernel.row(out.len(), p.probs())?;
        cum += v;
        out.push(v);
    }
    if kernel.fallbacks() > 0 {
        log::debug!("s = {}: {} kernel entries used the nonnegative expansion", ord.s, kernel.fallbacks());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonclassicality::factorial_moments;
    use rand::Rng;

    #[test]
    fn normal_ordering_is_identity() {
        let mv = MomentVector::new(vec![1.0, 3.3, 7.1, 19.9]).unwrap();
        let out = s_ordered_moments(&mv, &OrderingParams::new(1.0, 4.2).unwrap()).unwrap();
        assert_eq!(out, mv);
    }

    #[test]
    fn symmetric_ordering_exact_rational() {
        // M = 1, b = 1/2: 2^k ⟨W^k⟩_0 = Σ C(k,k') k!/k'! 2^{k'} λ^{k'} with λ = 3.
        let mv = MomentVector::coherent(3.0, 5);
        let out = s_ordered_moments(&mv, &OrderingParams::new(0.0, 1.0).unwrap()).unwrap();
        let fact = |n: u128| (1..=n).product::<u128>().max(1);
        for k in 0..=5u128 {
            let mut num: u128 = 0;
            for kp in 0..=k {
                let c = fact(k) / (fact(kp) * fact(k - kp));
                num += c * fact(k) / fact(kp) * 2u128.pow(kp as u32) * 3u128.pow(kp as u32);
            }
            let expect = num as f64 / 2f64.powi(k as i32);
            assert!((out.get(k as usize) - expect).abs() <= 1e-14 * expect, "k={k}");
        }
        assert_eq!(out.get(1), 3.5);
    }

    /// Laguerre polynomial `L_n^{(a)}(x)` by the three-term recurrence.
    fn laguerre(n: usize, a: f64, x: f64) -> f64 {
        let (mut l0, mut l1) = (1.0, 1.0 + a - x);
        if n == 0 {
            return l0;
        }
        for k in 1..n {
            let kf = k as f64;
            let l2 = ((2.0 * kf + 1.0 + a - x) * l1 - (kf + a) * l0) / (kf + 1.0);
            l0 = l1;
            l1 = l2;
        }
        l1
    }

    #[test]
    fn coherent_plus_noise_matches_superposition_law() {
        // Coherent amplitude superposed on M chaotic modes with b photons each.
        let (lambda, m, s) = (2.4, 3.0, 0.3);
        let ord = OrderingParams::new(s, m).unwrap();
        let b = ord.noise_per_mode();
        let probs: Vec<f64> = (0..200)
            .map(|n| {
                let nf = n as f64;
                (nf * b.ln() - (nf + m) * b.ln_1p() - lambda / (1.0 + b)).exp()
                    * laguerre(n, m - 1.0, -lambda / (b * (1.0 + b)))
            })
            .collect();
        let p = Distribution::with_tolerance(probs, 1e-12).unwrap();
        let oracle = factorial_moments(&p, 4).unwrap();
        let out = s_ordered_moments(&MomentVector::coherent(lambda, 4), &ord).unwrap();
        for k in 0..=4 {
            assert!((out.get(k) - oracle.get(k)).abs() < 1e-9 * oracle.get(k), "k={k}");
        }
    }

    #[test]
    fn vacuum_maps_to_geometric() {
        let v = s_ordered_pnd(&Distribution::point(0), &OrderingParams::new(0.0, 1.0).unwrap()).unwrap();
        for (n, &x) in v.iter().enumerate().take(30) {
            let expect = 2.0 / 3.0 * (1.0f64 / 3.0).powi(n as i32);
            assert!((x - expect).abs() <= 1e-14 * expect, "n={n}");
        }
    }

    #[test]
    fn singular_and_out_of_range_orderings() {
        let p = Distribution::point(1);
        assert!(matches!(s_ordered_pnd(&p, &OrderingParams { s: 1.0, m_eff: 1.0 }), Err(Error::Singularity(_))));
        assert!(OrderingParams::new(-1.5, 1.0).is_err());
        assert!(OrderingParams::new(0.0, 0.0).is_err());
    }

    /// Coefficients of `(b + (1−b)z)^{n'} (1 + b − bz)^{−M−n'}` up to `z^len`.
    fn generating_function_column(np: usize, m: f64, b: f64, len: usize) -> Vec<f64> {
        let mut poly = vec![1.0];
        for _ in 0..np {
            let mut next = vec![0.0; poly.len() + 1];
            for (i, c) in poly.iter().enumerate() {
                next[i] += c * b;
                next[i + 1] += c * (1.0 - b);
            }
            poly = next;
        }
        let a = m + np as f64;
        let q = b / (1.0 + b);
        let mut series = vec![0.0; len];
        series[0] = (1.0 + b).powf(-a);
        for j in 1..len {
            series[j] = series[j - 1] * (a + j as f64 - 1.0) / j as f64 * q;
        }
        (0..len).map(|n| (0..=n.min(np)).map(|i| poly[i] * series[n - i]).sum()).collect()
    }

    #[test]
    fn kernel_matches_generating_function() {
        let mut rng = crate::rng::rng_from_seed(11);
        for &(s, m) in &[(-0.5, 1.0), (0.0, 2.5), (0.9, 1.0), (0.999, 40.0), (-1.0, 3.0)] {
            let ord = OrderingParams::new(s, m).unwrap();
            let mut kernel = PndKernel::new(&ord).unwrap();
            for np in [0usize, 1, 3, 8, 20] {
                let col = generating_function_column(np, m, ord.noise_per_mode(), 40);
                for (n, &g) in col.iter().enumerate() {
                    let v = kernel.entry(n, np).unwrap();
                    assert!((v - g).abs() <= 1e-10 * g.max(1e-300), "s={s} M={m} ({n},{np}): {v} vs {g}");
                }
            }
            let weights: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
            let p = Distribution::normalized(weights).unwrap();
            let rows = s_ordered_pnd_rows(&p, &ord, 30).unwrap();
            for (n, &r) in rows.iter().enumerate() {
                let g: f64 = (0..12)
                    .map(|np| p.prob(np) * generating_function_column(np, m, ord.noise_per_mode(), 30)[n])
                    .sum();
                assert!((r - g).abs() <= 1e-10 * g.abs().max(1e-300));
            }
        }
    }

    #[test]
    fn alternating_sum_used_where_well_conditioned() {
        let ord = OrderingParams::new(-0.5, 1.0).unwrap();
        let mut kernel = PndKernel::new(&ord).unwrap();
        for n in 0..10 {
            for np in 0..6 {
                kernel.entry(n, np).unwrap();
            }
        }
        assert_eq!(kernel.fallbacks(), 0);
    }

    #[test]
    fn mass_is_preserved() {
        let p = Distribution::normalized(vec![0.1, 0.3, 0.2, 0.25, 0.15]).unwrap();
        for &s in &[-1.0, -0.6, 0.0, 0.5, 0.99] {
            for &m in &[0.5, 1.0, 10.0, 270.0] {
                let out = s_ordered_pnd(&p, &OrderingParams::new(s, m).unwrap()).unwrap();
                let total: f64 = out.iter().sum();
                assert!((total - 1.0).abs() < 1e-6, "s={s} M={m}: {total}");
            }
        }
    }

    #[test]
    fn approaches_identity_near_normal_ordering() {
        let p = Distribution::normalized((0..=10).map(|n| 1.0 + (n as f64 * 0.7).sin()).collect()).unwrap();
        let out = s_ordered_pnd(&p, &OrderingParams::new(1.0 - 1e-4, 1.0).unwrap()).unwrap();
        let tv = 0.5 * (0..out.len().max(p.len())).map(|n| (out.get(n).copied().unwrap_or(0.0) - p.prob(n)).abs()).sum::<f64>();
        assert!(tv < 1e-3, "{tv}");
    }
}
