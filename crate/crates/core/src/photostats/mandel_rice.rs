use crate::error::{Error, Result};
use crate::numerics::{ln_factorial, ln_gamma};

fn check_args(m: f64, b: f64) -> Result<()> {
    if !(m.is_finite() && b.is_finite()) {
        return Err(Error::Domain(format!("non-finite Mandel-Rice arguments m={m}, b={b}")));
    }
    if m <= 0.0 {
        return Err(Error::Domain(format!("mode count must be positive, got {m}")));
    }
    if b < 0.0 {
        return Err(Error::Domain(format!("mean photons per mode must be nonnegative, got {b}")));
    }
    Ok(())
}

/// Photon-number probability of an `m`-mode chaotic field with `b` mean
/// photons per mode: `Γ(n+m) / (n! Γ(m)) · bⁿ / (1+b)^(n+m)`.
pub fn mandel_rice(n: u64, m: f64, b: f64) -> Result<f64> {
    check_args(m, b)?;
    if b == 0.0 {
        return Ok(if n == 0 { 1.0 } else { 0.0 });
    }
    let nf = n as f64;
    // Γ(n+m)/(n! Γ(m)) as a product for small n keeps full relative accuracy.
    let ln_c = if n < 128 {
        (0..n).map(|j| ((j as f64 + m) / (j as f64 + 1.0)).ln()).sum()
    } else {
        ln_gamma(nf + m) - ln_factorial(n) - ln_gamma(m)
    };
    let ln_p = ln_c + nf * b.ln() - (nf + m) * b.ln_1p();
    Ok(ln_p.exp().min(1.0))
}

/// Mandel-Rice probabilities for `n = 0, 1, ...` until the remaining tail
/// drops below `tol`.
///
/// Uses the ratio recurrence `p(n+1)/p(n) = (n+m)/(n+1) · b/(1+b)` in log
/// space, which stays accurate for non-integer and very small mode counts.
pub fn mandel_rice_pmf(m: f64, b: f64, tol: f64) -> Result<Vec<f64>> {
    check_args(m, b)?;
    if b == 0.0 {
        return Ok(vec![1.0]);
    }
    let mean = m * b;
    let ln_ratio = b.ln() - b.ln_1p();
    let mut ln_p = -m * b.ln_1p();
    let mut out = Vec::new();
    let mut cum = 0.0;
    let mut n = 0u64;
    loop {
        let p = ln_p.exp();
        out.push(p);
        cum += p;
        let past_mean = n as f64 >= mean;
        if past_mean && 1.0 - cum < tol {
            break;
        }
        // p(n) underflowing past the mean means the tail is below 1e-300.
        if past_mean && p == 0.0 {
            break;
        }
        if n > 50_000_000 {
            return Err(Error::Truncation { tail: 1.0 - cum, tol });
        }
        let nf = n as f64;
        ln_p += (nf + m).ln() - (nf + 1.0).ln() + ln_ratio;
        n += 1;
    }
    Ok(out)
}

/// First `len` Mandel-Rice probabilities via the same recurrence.
pub(crate) fn mandel_rice_prefix(m: f64, b: f64, len: usize) -> Result<Vec<f64>> {
    check_args(m, b)?;
    let mut out = vec![0.0; len];
    if len == 0 {
        return Ok(out);
    }
    if b == 0.0 {
        out[0] = 1.0;
        return Ok(out);
    }
    let ln_ratio = b.ln() - b.ln_1p();
    let mut ln_p = -m * b.ln_1p();
    for (n, slot) in out.iter_mut().enumerate() {
        *slot = ln_p.exp();
        let nf = n as f64;
        ln_p += (nf + m).ln() - (nf + 1.0).ln() + ln_ratio;
    }
    Ok(out)
}

/// Full (discrete) convolution of two probability vectors.
pub(crate) fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Single-beam photon-number law of a pair component plus a noise component
/// (the marginal of the twin-beam joint distribution).
pub fn compound_marginal(m_pair: f64, b_pair: f64, m_noise: f64, b_noise: f64, tol: f64) -> Result<Vec<f64>> {
    let pair = mandel_rice_pmf(m_pair, b_pair, tol)?;
    let noise = mandel_rice_pmf(m_noise, b_noise, tol)?;
    Ok(convolve(&pair, &noise))
}
