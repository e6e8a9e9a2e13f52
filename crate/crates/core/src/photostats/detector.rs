//! Detection matrix of an on-off pixel array.
//!
//! `T(c, n)` is the probability of `c` fired pixels out of `N` when `n`
//! photons arrive, each detected with efficiency `η` in a uniformly random
//! pixel, and every pixel fires spontaneously with probability `D`:
//!
//! ```text
//! T(c,n) = C(N,c) (1-D)^N (1-η)^n (-1)^c Σ_l C(c,l) (-1)^l (1-D)^-l (1 + l/N · η/(1-η))^n
//!        = C(N,c) (1-D)^(N-c) N^-n Σ_l (-1)^(c-l) C(c,l) (1-D)^(c-l) A_l^n,   A_l = N(1-η) + ηl
//! ```
//!
//! The alternating sum loses roughly `c · log2(N / nη)` bits to cancellation,
//! far beyond `f64` for the iCCD regime (`N ≈ 6500`, `c ≈ 40`). Every term
//! is first evaluated as sign × exp(log-magnitude) with compensated
//! summation; entries whose error estimate misses the accuracy target are
//! recomputed in [`BigFloat`] arithmetic with enough mantissa bits.
//!
//! Column sums are validated against an independent all-positive evaluation
//! ([`occupancy_matrix`]: binomial thinning, pixel-occupancy recurrence and
//! binomial dark counts), which also supplies the mass beyond `c_max`.

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use super::{DetectorParams, Distribution, TAIL_TOL};
use crate::error::{Error, Result};
use crate::numerics::{ln_binomial_int, BigFloat, CompensatedSum};

/// Entries down to `-EPS_NEG` are accepted as rounding and clamped to zero.
pub const EPS_NEG: f64 = 1e-12;

/// Relative accuracy required of every entry.
const REL_ACCURACY: f64 = 1e-9;
/// Relative accuracy targeted by both evaluation paths.
const TARGET: f64 = 1e-12;
/// Column-sum tolerance.
const COLUMN_TOL: f64 = 1e-9;
/// Absolute magnitude below which an entry is treated as exactly resolved.
const DUST: f64 = 1e-300;
const MAX_BITS: u64 = 1 << 16;
/// Occupancy probabilities below this are dropped as underflow.
const OCCUPANCY_FLOOR: f64 = 1e-320;

/// Click-count probabilities `T(c, n)` for `0 ≤ c ≤ c_max`, `0 ≤ n ≤ n_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMatrix {
    det: DetectorParams,
    c_max: usize,
    n_max: usize,
    /// Row-major by photocount `c`.
    entries: Vec<f64>,
    /// Probability mass of each column beyond `c_max`.
    column_tail: Vec<f64>,
}

impl DetectionMatrix {
    /// Matrix with `c_max` chosen as the smallest value leaving less than
    /// `tail_tol` of every column unrepresented.
    pub fn auto(det: &DetectorParams, n_max: usize, tail_tol: f64) -> Result<Self> {
        det.validate()?;
        let n_pix = det.n_pix as usize;
        let ceiling = n_pix.min(n_max + dark_quantile(det, tail_tol * 1e-3));
        let occ = occupancy_matrix(det, ceiling, n_max)?;
        let mut cum = vec![0.0; n_max + 1];
        let mut c_max = ceiling;
        for c in 0..=ceiling {
            for (n, acc) in cum.iter_mut().enumerate() {
                *acc += occ[c * (n_max + 1) + n];
            }
            if cum.iter().all(|s| 1.0 - s < tail_tol) {
                c_max = c;
                break;
            }
        }
        build(det, c_max, n_max)
    }

    /// Rebuild a matrix from stored entries (deserialization, testing).
    pub fn from_entries(det: DetectorParams, c_max: usize, n_max: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != (c_max + 1) * (n_max + 1) {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {} x {} detection matrix",
                entries.len(),
                c_max + 1,
                n_max + 1
            )));
        }
        let mut column_tail = vec![0.0; n_max + 1];
        for (n, tail) in column_tail.iter_mut().enumerate() {
            let s: f64 = (0..=c_max).map(|c| entries[c * (n_max + 1) + n]).sum();
            *tail = (1.0 - s).max(0.0);
        }
        Ok(Self { det, c_max, n_max, entries, column_tail })
    }

    /// Perfect photon-number resolving detector on `0..=n_max`.
    pub fn identity(n_max: usize) -> Self {
        let mut entries = vec![0.0; (n_max + 1) * (n_max + 1)];
        for n in 0..=n_max {
            entries[n * (n_max + 1) + n] = 1.0;
        }
        Self {
            det: DetectorParams { eta: 1.0, d: 0.0, n_pix: u64::MAX },
            c_max: n_max,
            n_max,
            entries,
            column_tail: vec![0.0; n_max + 1],
        }
    }

    pub fn get(&self, c: usize, n: usize) -> f64 {
        if c <= self.c_max && n <= self.n_max {
            self.entries[c * (self.n_max + 1) + n]
        } else {
            0.0
        }
    }

    pub fn row(&self, c: usize) -> &[f64] {
        &self.entries[c * (self.n_max + 1)..(c + 1) * (self.n_max + 1)]
    }

    pub fn column(&self, n: usize) -> Vec<f64> {
        (0..=self.c_max).map(|c| self.get(c, n)).collect()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn c_max(&self) -> usize {
        self.c_max
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn detector(&self) -> &DetectorParams {
        &self.det
    }

    /// Mass of column `n` beyond `c_max`.
    pub fn column_tail(&self, n: usize) -> f64 {
        self.column_tail[n]
    }

    /// Photocount distribution `f(c) = Σ_n T(c,n) p(n)`.
    pub fn forward(&self, p: &Distribution) -> Result<Distribution> {
        forward_histogram(self, p)
    }
}

/// Photocount distribution registered for photon-number distribution `p`.
pub fn forward_histogram(t: &DetectionMatrix, p: &Distribution) -> Result<Distribution> {
    if p.cutoff() > t.n_max {
        return Err(Error::DimensionMismatch(format!(
            "distribution cutoff {} exceeds detection matrix n_max {}",
            p.cutoff(),
            t.n_max
        )));
    }
    let probs: Vec<f64> = (0..=t.c_max)
        .map(|c| t.row(c).iter().zip(p.probs()).map(|(a, b)| a * b).sum())
        .collect();
    let lost: f64 = p.probs().iter().enumerate().map(|(n, q)| q * t.column_tail[n]).sum();
    let deficit = (1.0 - p.total()).max(0.0);
    Distribution::with_tolerance(probs, TAIL_TOL.max(deficit + lost + 1e-12))
}

/// Smallest `q` with `P(Bin(N, d) > q) < tol`.
fn dark_quantile(det: &DetectorParams, tol: f64) -> usize {
    let pmf = binomial_prefix(det.n_pix, det.d, det.n_pix as usize + 1);
    let mut cum = 0.0;
    for (q, p) in pmf.iter().enumerate() {
        cum += p;
        if 1.0 - cum < tol {
            return q;
        }
    }
    det.n_pix as usize
}

/// First `len` probabilities of `Bin(trials, p)`.
fn binomial_prefix(trials: u64, p: f64, len: usize) -> Vec<f64> {
    let len = len.min(trials as usize + 1);
    let mut out = vec![0.0; len];
    if len == 0 {
        return out;
    }
    if p == 0.0 {
        out[0] = 1.0;
        return out;
    }
    if p == 1.0 {
        if let Some(last) = out.get_mut(trials as usize) {
            *last = 1.0;
        }
        return out;
    }
    let ln_ratio = p.ln() - (-p).ln_1p();
    let mut ln_q = trials as f64 * (-p).ln_1p();
    for (x, slot) in out.iter_mut().enumerate() {
        *slot = ln_q.exp();
        ln_q += ((trials - x as u64) as f64).ln() - ((x + 1) as f64).ln() + ln_ratio;
    }
    out
}

/// Click-count probabilities from the all-positive occupancy route, laid out
/// like [`DetectionMatrix::entries`].
///
/// `n` photons are thinned to `k ~ Bin(n, η)` detections; `k` detections
/// occupy `j` distinct pixels with probability `Q_k(j)` from
/// `Q_{k+1}(j) = Q_k(j) j/N + Q_k(j-1) (N-j+1)/N`; the remaining `N - j`
/// pixels add `Bin(N - j, D)` dark clicks.
pub fn occupancy_matrix(det: &DetectorParams, c_max: usize, n_max: usize) -> Result<Vec<f64>> {
    det.validate()?;
    let n_pix = det.n_pix as usize;
    let np = det.n_pix as f64;
    // Occupancy never decreases, so states above c_max are never needed.
    let j_max = n_max.min(n_pix).min(c_max);
    let width = n_max + 1;

    // q[k][j] for j ≤ j_max; stops once P(occupied ≤ j_max) underflows,
    // since that probability is nonincreasing in k.
    let mut q = vec![vec![0.0; j_max + 1]];
    q[0][0] = 1.0;
    while q.len() <= n_max {
        let prev = q.last().expect("nonempty");
        if prev.iter().sum::<f64>() < OCCUPANCY_FLOOR {
            break;
        }
        let k = q.len() - 1;
        let mut next = vec![0.0; j_max + 1];
        for (j, slot) in next.iter_mut().enumerate().take(j_max.min(k + 1) + 1) {
            let stay = if j <= k { prev[j] * j as f64 / np } else { 0.0 };
            let grow = if j >= 1 { prev[j - 1] * (np - (j - 1) as f64) / np } else { 0.0 };
            *slot = stay + grow;
        }
        q.push(next);
    }

    let dark: Vec<Vec<f64>> = (0..=j_max)
        .map(|j| binomial_prefix(det.n_pix - j as u64, det.d, c_max - j + 1))
        .collect();

    let mut out = vec![0.0; (c_max + 1) * width];
    for n in 0..=n_max {
        let thin = binomial_prefix(n as u64, det.eta, q.len().min(n + 1));
        let mut occupied = vec![0.0; j_max + 1];
        for (&b, qk) in thin.iter().zip(&q) {
            if b == 0.0 {
                continue;
            }
            for (o, &qv) in occupied.iter_mut().zip(qk) {
                *o += b * qv;
            }
        }
        for c in 0..=c_max {
            let mut s = 0.0;
            for j in 0..=c.min(j_max) {
                if let Some(&dv) = dark[j].get(c - j) {
                    s += occupied[j] * dv;
                }
            }
            out[c * width + n] = s;
        }
    }
    Ok(out)
}

/// Exact-arithmetic tables at a fixed mantissa width.
struct WideTables {
    bits: u64,
    /// `A_l^n`, indexed `[l][n]`.
    a_pow: Vec<Vec<BigFloat>>,
    /// `(1-D)^j`.
    omd_pow: Vec<BigFloat>,
}

impl WideTables {
    fn build(det: &DetectorParams, c_max: usize, n_max: usize, bits: u64) -> Self {
        let exact = 4 * 64 + bits;
        let n_big = BigFloat::from_u64(det.n_pix);
        let eta = BigFloat::from_f64(det.eta);
        let a_pow = (0..=c_max)
            .map(|l| {
                let a = n_big.add(&eta.mul(&BigFloat::from_u64(det.n_pix - l as u64), exact).neg(), exact);
                let mut row = Vec::with_capacity(n_max + 1);
                let mut acc = BigFloat::from_u64(1);
                for _ in 0..=n_max {
                    row.push(acc.clone());
                    acc = acc.mul(&a, bits);
                }
                row
            })
            .collect();
        let omd = BigFloat::from_u64(1).add(&BigFloat::from_f64(det.d).neg(), exact);
        let mut omd_pow = Vec::with_capacity(c_max + 1);
        let mut acc = BigFloat::from_u64(1);
        for _ in 0..=c_max {
            omd_pow.push(acc.clone());
            acc = acc.mul(&omd, bits);
        }
        Self { bits, a_pow, omd_pow }
    }
}

struct Eq8 {
    det: DetectorParams,
    ln_a: Vec<f64>,
    ln_omd: f64,
    ln_n: f64,
    c_max: usize,
    n_max: usize,
    wide: Option<WideTables>,
}

/// Outcome of a single-entry evaluation.
struct Entry {
    value: f64,
    /// Estimated relative error (0 when resolved below [`DUST`]).
    rel_err: f64,
}

impl Eq8 {
    fn new(det: &DetectorParams, c_max: usize, n_max: usize) -> Self {
        let np = det.n_pix as f64;
        let ln_a = (0..=c_max).map(|l| (np * (1.0 - det.eta) + det.eta * l as f64).ln()).collect();
        Self {
            det: *det,
            ln_a,
            ln_omd: (-det.d).ln_1p(),
            ln_n: np.ln(),
            c_max,
            n_max,
            wide: None,
        }
    }

    fn structural_zero(&self, c: usize, n: usize) -> bool {
        self.det.d == 0.0 && (c > n || (self.det.eta == 0.0 && c > 0))
    }

    fn prefactor(&self, c: usize, n: usize) -> f64 {
        ln_binomial_int(self.det.n_pix, c as u64) + (self.det.n_pix - c as u64) as f64 * self.ln_omd - n as f64 * self.ln_n
    }

    /// Log-magnitudes (relative to the prefactor) and signs of the `l` terms.
    fn log_terms(&self, c: usize, n: usize) -> Vec<(f64, f64, f64)> {
        (0..=c)
            .filter_map(|l| {
                let ln_a = self.ln_a[l];
                let a_part = if n == 0 {
                    0.0
                } else if ln_a == f64::NEG_INFINITY {
                    return None;
                } else {
                    n as f64 * ln_a
                };
                let lc = ln_binomial_int(c as u64, l as u64);
                let ld = (c - l) as f64 * self.ln_omd;
                let sign = if (c - l) % 2 == 0 { 1.0 } else { -1.0 };
                let scale = 8.0 + lc.abs() + ld.abs() + a_part.abs() + c as f64;
                Some((lc + ld + a_part, sign, scale))
            })
            .collect()
    }

    fn fast(&self, c: usize, n: usize) -> (Entry, f64, f64) {
        let pref = self.prefactor(c, n);
        let terms = self.log_terms(c, n);
        let top = terms.iter().map(|t| t.0).fold(f64::NEG_INFINITY, f64::max);
        if terms.is_empty() || top == f64::NEG_INFINITY {
            return (Entry { value: 0.0, rel_err: 0.0 }, pref, f64::NEG_INFINITY);
        }
        let mut sum = CompensatedSum::new();
        let mut err = 0.0;
        for &(lt, sign, scale) in &terms {
            let mag = (lt - top).exp();
            sum.add(sign * mag);
            err += mag * scale * f64::EPSILON;
        }
        err += sum.abs_sum() * 2.0 * f64::EPSILON;
        let s = sum.value();
        let ln_abs_sum = top + sum.abs_sum().ln();
        let value = if s > 0.0 { (pref + top + s.ln()).exp() } else { 0.0 };
        let rel_err = if s > 0.0 { err / s } else { f64::INFINITY };
        // Tiny entries with tiny absolute error are resolved.
        let abs_err = (pref + top + err.ln()).exp();
        let rel_err = if abs_err < DUST && value < DUST { 0.0 } else { rel_err };
        (Entry { value, rel_err }, pref, ln_abs_sum)
    }

    fn ensure_wide(&mut self, bits: u64) {
        let have = self.wide.as_ref().map_or(0, |w| w.bits);
        if have < bits {
            self.wide = Some(WideTables::build(&self.det, self.c_max, self.n_max, bits.max(2 * have)));
        }
    }

    fn wide_entry(&mut self, c: usize, n: usize, pref: f64, ln_abs_sum: f64, guess_ln_value: f64) -> Result<f64> {
        // Bits lost to cancellation plus the accuracy target.
        let lost = (ln_abs_sum - (guess_ln_value - pref)) / std::f64::consts::LN_2;
        let mut bits = ((lost.max(0.0) + 48.0 + ((n + c + 8) as f64).log2()).ceil() as u64).max(128);
        loop {
            if bits > MAX_BITS {
                return Err(Error::NumericalInstability(format!(
                    "detection-matrix entry T({c}, {n}) not resolved to {REL_ACCURACY:e} with {MAX_BITS} bits"
                )));
            }
            self.ensure_wide(bits);
            let wide = self.wide.as_ref().expect("tables built");
            let add_bits = bits + 64;
            let mut s = BigFloat::zero();
            let mut binom = BigInt::from(1u32);
            for l in 0..=c {
                if l > 0 {
                    binom = binom * BigInt::from(c - l + 1) / BigInt::from(l);
                }
                let a = &wide.a_pow[l][n];
                if a.is_zero() {
                    continue;
                }
                let w = BigFloat::from_int(binom.clone()).mul(&wide.omd_pow[c - l], bits);
                let mut t = w.mul(a, bits);
                if (c - l) % 2 == 1 {
                    t = t.neg();
                }
                s = s.add(&t, add_bits);
            }
            let (ln_s, sign) = s.ln_abs();
            let ln_err = ln_abs_sum + ((n + c + 6) as f64).ln() + (1.0 - bits as f64) * std::f64::consts::LN_2;
            if sign > 0 && ln_err - ln_s <= TARGET.ln() {
                return Ok((pref + ln_s).exp());
            }
            if (pref + ln_err).exp() < DUST && (sign <= 0 || (pref + ln_s).exp() < DUST) {
                return Ok(if sign > 0 { (pref + ln_s).exp() } else { 0.0 });
            }
            bits *= 2;
        }
    }
}

fn build(det: &DetectorParams, c_max: usize, n_max: usize) -> Result<DetectionMatrix> {
    let occ = occupancy_matrix(det, c_max, n_max)?;
    let width = n_max + 1;
    let mut eq8 = Eq8::new(det, c_max, n_max);
    let mut entries = vec![0.0; (c_max + 1) * width];
    for c in 0..=c_max {
        for n in 0..=n_max {
            if eq8.structural_zero(c, n) {
                continue;
            }
            let (fast, pref, ln_abs_sum) = eq8.fast(c, n);
            // Below DUST even the sum of term magnitudes is negligible.
            let value = if fast.rel_err <= TARGET || pref + ln_abs_sum < DUST.ln() {
                fast.value
            } else {
                let guess = occ[c * width + n].max(DUST).ln();
                eq8.wide_entry(c, n, pref, ln_abs_sum, guess)?
            };
            entries[c * width + n] = value;
        }
    }

    let mut column_tail = vec![0.0; width];
    for n in 0..=n_max {
        let eq8_mass = CompensatedSum::from_iter((0..=c_max).map(|c| entries[c * width + n])).value();
        let occ_mass = CompensatedSum::from_iter((0..=c_max).map(|c| occ[c * width + n])).value();
        let tail = if c_max as u64 >= det.n_pix { 0.0 } else { (1.0 - occ_mass).max(0.0) };
        if (eq8_mass + tail - 1.0).abs() > COLUMN_TOL {
            return Err(Error::NumericalInstability(format!(
                "column n = {n} sums to {} (+ tail {tail:.3e}); expected 1 within {COLUMN_TOL:e}",
                eq8_mass
            )));
        }
        column_tail[n] = tail;
    }

    for e in entries.iter_mut() {
        if *e < -EPS_NEG {
            return Err(Error::NumericalInstability(format!("negative detection probability {e}")));
        }
        *e = e.max(0.0);
    }
    Ok(DetectionMatrix { det: *det, c_max, n_max, entries, column_tail })
}

/// Detection matrix with explicit truncation bounds.
pub fn detection_matrix(det: &DetectorParams, c_max: usize, n_max: usize) -> Result<DetectionMatrix> {
    det.validate()?;
    if c_max as u64 > det.n_pix {
        return Err(Error::InvalidParams(format!("c_max = {c_max} exceeds n_pix = {}", det.n_pix)));
    }
    build(det, c_max, n_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vacuum_column_is_dark_binomial() {
        let det = DetectorParams::new(0.3, 0.01, 40).unwrap();
        let t = detection_matrix(&det, 40, 3).unwrap();
        assert!((t.get(0, 0) - 0.99f64.powi(40)).abs() < 1e-15);
    }

    #[test]
    fn blind_noiseless_detector_never_clicks() {
        let det = DetectorParams::new(0.0, 0.0, 25).unwrap();
        let t = detection_matrix(&det, 25, 12).unwrap();
        for n in 0..=12 {
            assert_eq!(t.get(0, n), 1.0);
            for c in 1..=25 {
                assert_eq!(t.get(c, n), 0.0);
            }
        }
    }

    #[test]
    fn unit_efficiency_single_photon() {
        let det = DetectorParams::new(1.0, 0.0, 10).unwrap();
        let t = detection_matrix(&det, 10, 2).unwrap();
        assert!((t.get(1, 1) - 1.0).abs() < 1e-15);
        // two photons share a pixel with probability 1/N
        assert!((t.get(1, 2) - 0.1).abs() < 1e-14);
        assert!((t.get(2, 2) - 0.9).abs() < 1e-14);
    }

    #[test]
    fn eq8_agrees_with_occupancy_route_entrywise() {
        for det in [
            DetectorParams::new(0.228, 0.002, 100).unwrap(),
            DetectorParams::reference_idler(),
            DetectorParams::new(0.9, 0.0, 50).unwrap(),
        ] {
            let (c_max, n_max) = (det.n_pix.min(45) as usize, 60);
            let t = detection_matrix(&det, c_max, n_max).unwrap();
            let occ = occupancy_matrix(&det, c_max, n_max).unwrap();
            for c in 0..=c_max {
                for n in 0..=n_max {
                    let a = t.get(c, n);
                    let b = occ[c * (n_max + 1) + n];
                    assert!((a - b).abs() <= 1e-9 * b + 1e-280, "{det:?} T({c},{n}) = {a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn literal_per_pixel_dark_counts_stay_finite() {
        // Reading 0.214 as a per-pixel probability drives (1-D)^N to ~1e-710;
        // the matrix must still be computable.
        let det = DetectorParams::new(0.223, 0.214, 6784).unwrap();
        let t = detection_matrix(&det, 3, 5).unwrap();
        assert!(t.entries().iter().all(|x| *x >= 0.0 && x.is_finite()));
        assert!(t.entries().iter().all(|x| *x < 1e-300));
    }

    #[test]
    fn c_max_above_pixel_count_is_rejected() {
        let det = DetectorParams::new(0.5, 0.0, 10).unwrap();
        assert!(detection_matrix(&det, 11, 3).is_err());
    }

    #[test]
    fn auto_matrix_leaves_small_tails() {
        let det = DetectorParams::reference_idler();
        let t = DetectionMatrix::auto(&det, 80, TAIL_TOL).unwrap();
        assert!(t.c_max() < 80);
        for n in 0..=80 {
            assert!(t.column_tail(n) < TAIL_TOL);
        }
    }
}
