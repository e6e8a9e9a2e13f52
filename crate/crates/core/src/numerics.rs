//! Small numerical building blocks shared by the statistics modules.

use num_bigint::{BigInt, Sign};
use num_traits::{Signed, ToPrimitive, Zero};

pub use statrs::function::gamma::ln_gamma;

/// `ln C(n, k)` for real `n ≥ k ≥ 0`, via log-Γ.
pub fn ln_binomial(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

/// `ln C(n, k)` for integers, exact summation of logs for small `k`.
pub fn ln_binomial_int(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    if k < 64 {
        (0..k).map(|j| ((n - j) as f64).ln() - ((j + 1) as f64).ln()).sum()
    } else {
        ln_binomial(n as f64, k as f64)
    }
}

/// `ln n!`.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, j| acc * j as f64)
}

/// Neumaier (improved Kahan-Babuska) compensated accumulator that also keeps
/// the running sum of absolute values for error estimates.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
    abs: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
        self.abs += x.abs();
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }

    /// Sum of absolute values of all terms added so far.
    pub fn abs_sum(&self) -> f64 {
        self.abs
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

pub fn compensated_sum<I: IntoIterator<Item = f64>>(iter: I) -> f64 {
    iter.into_iter().collect::<CompensatedSum>().value()
}

/// Arbitrary-precision binary float `mantissa · 2^exponent`.
///
/// Multiplications round (truncate) the mantissa to a caller-chosen number of
/// bits, so each product carries a relative error below `2^(1 - bits)`.
/// Construction from `f64` and integers is exact.
#[derive(Debug, Clone, PartialEq)]
pub struct BigFloat {
    mantissa: BigInt,
    exponent: i64,
}

impl BigFloat {
    pub fn zero() -> Self {
        Self { mantissa: BigInt::zero(), exponent: 0 }
    }

    pub fn from_f64(x: f64) -> Self {
        assert!(x.is_finite(), "BigFloat::from_f64 on non-finite value");
        if x == 0.0 {
            return Self::zero();
        }
        let bits = x.to_bits();
        let sign = if bits >> 63 == 1 { Sign::Minus } else { Sign::Plus };
        let raw_exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (m, e) = if raw_exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), raw_exp - 1075)
        };
        Self { mantissa: BigInt::from_biguint(sign, m.into()), exponent: e }
    }

    pub fn from_int(x: BigInt) -> Self {
        Self { mantissa: x, exponent: 0 }
    }

    pub fn from_u64(x: u64) -> Self {
        Self::from_int(BigInt::from(x))
    }

    pub fn is_zero(&self) -> bool {
        self.mantissa.is_zero()
    }

    pub fn neg(mut self) -> Self {
        self.mantissa = -self.mantissa;
        self
    }

    fn round_to(mut self, bits: u64) -> Self {
        let have = self.mantissa.bits();
        if have > bits {
            let shift = have - bits;
            self.mantissa >>= shift as usize;
            self.exponent += shift as i64;
        }
        self
    }

    /// Product rounded to `bits` bits of mantissa.
    pub fn mul(&self, other: &BigFloat, bits: u64) -> BigFloat {
        BigFloat {
            mantissa: &self.mantissa * &other.mantissa,
            exponent: self.exponent + other.exponent,
        }
        .round_to(bits)
    }

    /// Sum rounded to `bits` bits of mantissa.
    pub fn add(&self, other: &BigFloat, bits: u64) -> BigFloat {
        if self.is_zero() {
            return other.clone().round_to(bits);
        }
        if other.is_zero() {
            return self.clone().round_to(bits);
        }
        // Drop far-subnormal contributions before aligning.
        let top_a = self.exponent + self.mantissa.bits() as i64;
        let top_b = other.exponent + other.mantissa.bits() as i64;
        let floor = top_a.max(top_b) - bits as i64 - 4;
        let a = self.clone().truncate_below(floor);
        let b = other.clone().truncate_below(floor);
        let e = a.exponent.min(b.exponent);
        let ma = a.mantissa << (a.exponent - e) as usize;
        let mb = b.mantissa << (b.exponent - e) as usize;
        BigFloat { mantissa: ma + mb, exponent: e }.round_to(bits)
    }

    fn truncate_below(mut self, floor: i64) -> Self {
        if self.exponent < floor {
            let shift = (floor - self.exponent) as usize;
            self.mantissa >>= shift;
            self.exponent = floor;
        }
        self
    }

    /// `self^n` by repeated squaring, rounded to `bits`.
    pub fn powi(&self, mut n: u64, bits: u64) -> BigFloat {
        let mut base = self.clone().round_to(bits);
        let mut acc = BigFloat::from_u64(1);
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(&base, bits);
            }
            n >>= 1;
            if n > 0 {
                base = base.mul(&base, bits);
            }
        }
        acc
    }

    /// Signed `(ln|x|, sign)`; `(-inf, 0)` for zero.
    pub fn ln_abs(&self) -> (f64, i8) {
        if self.is_zero() {
            return (f64::NEG_INFINITY, 0);
        }
        let sign = if self.mantissa.is_negative() { -1 } else { 1 };
        let mag = self.mantissa.abs();
        let have = mag.bits();
        let shift = have.saturating_sub(64);
        let top = (mag >> shift as usize).to_f64().unwrap_or(f64::MAX);
        let ln = top.ln() + (self.exponent + shift as i64) as f64 * std::f64::consts::LN_2;
        (ln, sign)
    }

    /// `log2|x|`, used to size precision.
    pub fn log2_abs(&self) -> f64 {
        self.ln_abs().0 / std::f64::consts::LN_2
    }

    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let sign = if self.mantissa.is_negative() { -1.0 } else { 1.0 };
        let mag = self.mantissa.abs();
        let shift = mag.bits().saturating_sub(64);
        let top = (mag >> shift as usize).to_f64().unwrap_or(f64::MAX);
        sign * ldexp(top, self.exponent + shift as i64)
    }
}

/// `x · 2^e` with exact power-of-two steps.
fn ldexp(mut x: f64, mut e: i64) -> f64 {
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
        if x.is_infinite() {
            return x;
        }
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
        if x == 0.0 {
            return x;
        }
    }
    x * 2f64.powi(e as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancelled_terms() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        assert_eq!(compensated_sum(xs), 2.0);
        let naive: f64 = xs.iter().sum();
        assert_eq!(naive, 0.0);
    }

    #[test]
    fn bigfloat_exact_from_f64_and_back() {
        for &x in &[0.228, -3.5e-300, 6784.0, 1.0 - 0.214 / 6784.0, f64::MIN_POSITIVE] {
            let b = BigFloat::from_f64(x);
            let back = b.to_f64();
            assert!((back - x).abs() <= x.abs() * 1e-15, "{x} -> {back}");
        }
    }

    #[test]
    fn bigfloat_resolves_catastrophic_cancellation() {
        // (1 + 2^-80) - 1 is invisible in f64.
        let tiny = BigFloat::from_f64(2f64.powi(-80));
        let one = BigFloat::from_u64(1);
        let s = one.add(&tiny, 256).add(&one.clone().neg(), 256);
        assert_eq!(s.to_f64(), 2f64.powi(-80));
    }

    #[test]
    fn bigfloat_powi_matches_f64() {
        let x = BigFloat::from_f64(0.777);
        let p = x.powi(150, 200).to_f64();
        let expect = 0.777f64.powi(150);
        assert!((p - expect).abs() < expect * 1e-12);
    }

    #[test]
    fn ln_binomial_int_matches_gamma_route() {
        let a = ln_binomial_int(6784, 40);
        let b = ln_binomial(6784.0, 40.0);
        assert!((a - b).abs() < 1e-9 * a.abs());
    }
}
