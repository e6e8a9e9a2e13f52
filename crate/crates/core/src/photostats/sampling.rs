use rand::Rng;
use rand_distr::{Binomial, Distribution as _};
use rayon::prelude::*;

use super::{DetectorParams, Distribution, JointDistribution};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, task_rng};

/// Multinomial draw of `n` trials over `probs` via sequential conditional
/// binomials. Mass missing from `probs` (truncated tails) is never drawn.
pub(crate) fn multinomial<R: Rng>(rng: &mut R, probs: &[f64], n: u64) -> Vec<u64> {
    let total: f64 = probs.iter().sum();
    let mut remaining_n = n;
    let mut remaining_p = total;
    let mut out = vec![0u64; probs.len()];
    for (slot, &p) in out.iter_mut().zip(probs) {
        if remaining_n == 0 {
            break;
        }
        if remaining_p <= 0.0 {
            break;
        }
        let q = (p / remaining_p).clamp(0.0, 1.0);
        let k = if q >= 1.0 {
            remaining_n
        } else if q <= 0.0 {
            0
        } else {
            Binomial::new(remaining_n, q).expect("valid binomial").sample(rng)
        };
        *slot = k;
        remaining_n -= k;
        remaining_p -= p;
    }
    // Rounding in remaining_p can leave a handful of draws unassigned.
    if remaining_n > 0 {
        if let Some((i, _)) = probs.iter().enumerate().rev().find(|(_, p)| **p > 0.0) {
            out[i] += remaining_n;
        }
    }
    out
}

/// Simulated finite-frame histogram: `n_frames` independent draws from `f`,
/// returned with both raw counts and relative frequencies.
pub fn sample_histogram(f: &Distribution, n_frames: u64, seed: u64) -> Result<Distribution> {
    if n_frames == 0 {
        return Err(Error::InvalidParams("n_frames must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let counts = multinomial(&mut rng, f.probs(), n_frames);
    Distribution::from_counts(counts)
}

/// Simulated joint `(c_s, c_i)` histogram of `n_frames` frames.
pub fn sample_joint_histogram(f: &JointDistribution, n_frames: u64, seed: u64) -> Result<JointDistribution> {
    if n_frames == 0 {
        return Err(Error::InvalidParams("n_frames must be positive".into()));
    }
    let mut rng = rng_from_seed(seed);
    let counts = multinomial(&mut rng, f.probs(), n_frames);
    let (rows, cols) = f.shape();
    JointDistribution::from_counts(counts, rows, cols)
}

const ORACLE_BLOCK: u64 = 1 << 16;

/// Pixel-level Monte Carlo of the on-off array: each of `n` photons is
/// registered with probability `eta` in a uniformly chosen pixel, every pixel
/// also fires with probability `d`, and fired pixels are counted.
///
/// Trials run in fixed-size blocks with per-block streams, so the result
/// does not depend on the thread count.
pub fn mc_detector_oracle(det: &DetectorParams, n: usize, trials: u64, seed: u64) -> Result<Distribution> {
    det.validate()?;
    if trials == 0 {
        return Err(Error::InvalidParams("trials must be positive".into()));
    }
    if det.n_pix > 10_000 {
        return Err(Error::InvalidParams(format!(
            "pixel-level simulation supports at most 10^4 pixels, got {}",
            det.n_pix
        )));
    }
    let n_pix = det.n_pix as usize;
    let n_blocks = trials.div_ceil(ORACLE_BLOCK);
    let counts = (0..n_blocks)
        .into_par_iter()
        .map(|block| {
            let mut rng = task_rng(seed, block);
            let start = block * ORACLE_BLOCK;
            let len = ORACLE_BLOCK.min(trials - start);
            let mut hist = vec![0u64; n_pix + 1];
            // stamp[pixel] == trial + 1 marks a pixel fired in this trial
            let mut stamp = vec![0u64; n_pix];
            for trial in 0..len {
                let mark = trial + 1;
                let mut fired = 0usize;
                for _ in 0..n {
                    if rng.random::<f64>() < det.eta {
                        let px = rng.random_range(0..n_pix);
                        if stamp[px] != mark {
                            stamp[px] = mark;
                            fired += 1;
                        }
                    }
                }
                if det.d > 0.0 {
                    // Each not-yet-fired pixel fires independently with probability d.
                    let dark = Binomial::new((n_pix - fired) as u64, det.d).expect("valid binomial").sample(&mut rng);
                    fired += dark as usize;
                }
                hist[fired] += 1;
            }
            hist
        })
        .reduce(
            || vec![0u64; n_pix + 1],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                a
            },
        );
    let last = counts.iter().rposition(|&c| c > 0).unwrap_or(0);
    Distribution::from_counts(counts[..=last].to_vec())
}
