use std::fmt;

use serde::{Deserialize, Serialize};

use super::MomentVector;
use crate::error::{Error, Result};
use crate::numerics::factorial;
use crate::photostats::Distribution;

/// Probabilities below this are treated as exactly zero in probability
/// witnesses.
pub const PROB_DUST: f64 = 1e-12;

/// Exponents of the witness `⟨W^k⟩⟨W^l⟩ − ⟨W^m⟩⟨W^n⟩`.
///
/// Stored in canonical orientation: `k ≤ l`, `m ≤ n` and `k < m`, so the
/// outer pair `(k, l)` comes first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WitnessIndex {
    pub k: usize,
    pub l: usize,
    pub m: usize,
    pub n: usize,
}

impl WitnessIndex {
    /// Validates homogeneity and non-triviality; the orientation is taken
    /// as given so that `(1,1,0,2)` means `⟨W⟩² − ⟨W²⟩`.
    pub fn new(k: usize, l: usize, m: usize, n: usize) -> Result<Self> {
        if k + l != m + n {
            return Err(Error::InvalidParams(format!("witness ({k},{l},{m},{n}) is not homogeneous")));
        }
        let (a, b) = (k.min(l), k.max(l));
        let (c, d) = (m.min(n), m.max(n));
        if (a, b) == (c, d) {
            return Err(Error::InvalidParams(format!("witness ({k},{l},{m},{n}) is identically zero")));
        }
        Ok(Self { k, l, m, n })
    }

    pub fn max_index(&self) -> usize {
        self.k.max(self.l).max(self.m).max(self.n)
    }
}

impl fmt::Display for WitnessIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.k, self.l, self.m, self.n)
    }
}

/// All homogeneous, non-trivial witnesses with indices up to `max_order`,
/// one per symmetry class, in lexicographic order.
pub fn witness_set(max_order: usize) -> Result<Vec<WitnessIndex>> {
    if max_order < 2 {
        return Err(Error::InvalidParams(format!("max_order must be at least 2, got {max_order}")));
    }
    let mut out = Vec::new();
    for k in 0..=max_order {
        for l in k..=max_order {
            for m in k + 1..=max_order {
                let Some(n) = (k + l).checked_sub(m) else { continue };
                if n >= m && n <= max_order {
                    out.push(WitnessIndex { k, l, m, n });
                }
            }
        }
    }
    Ok(out)
}

fn check_order(idx: &WitnessIndex, k_max: usize) -> Result<()> {
    if idx.max_index() > k_max {
        return Err(Error::DimensionMismatch(format!(
            "witness {idx} needs moments up to order {}, have {k_max}",
            idx.max_index()
        )));
    }
    Ok(())
}

/// `⟨W^k⟩⟨W^l⟩ − ⟨W^m⟩⟨W^n⟩`; negative values certify nonclassicality.
pub fn intensity_witness(mv: &MomentVector, idx: &WitnessIndex) -> Result<f64> {
    check_order(idx, mv.k_max())?;
    Ok(mv.get(idx.k) * mv.get(idx.l) - mv.get(idx.m) * mv.get(idx.n))
}

/// `k! l! p(k) p(l) − m! n! p(m) p(n)` over any probability-like slice.
pub fn probability_witness_slice(p: &[f64], idx: &WitnessIndex) -> f64 {
    let (a, b) = probability_witness_terms(p, idx);
    a - b
}

/// The two products `(k! l! p(k) p(l), m! n! p(m) p(n))`.
pub fn probability_witness_terms(p: &[f64], idx: &WitnessIndex) -> (f64, f64) {
    let q = |j: usize| {
        let v = p.get(j).copied().unwrap_or(0.0);
        if v.abs() < PROB_DUST {
            0.0
        } else {
            factorial(j) * v
        }
    };
    (q(idx.k) * q(idx.l), q(idx.m) * q(idx.n))
}

pub fn probability_witness(p: &Distribution, idx: &WitnessIndex) -> f64 {
    probability_witness_slice(p.probs(), idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nonclassicality::{factorial_moments, modified_moments};
    use crate::photostats::mandel_rice_pmf;
    use std::collections::BTreeSet;

    /// Brute-force enumeration: all quadruples, reduced by the symmetry group.
    fn brute_force(max_order: usize) -> BTreeSet<(usize, usize, usize, usize)> {
        let mut classes = BTreeSet::new();
        let r = 0..=max_order;
        for k in r.clone() {
            for l in r.clone() {
                for m in r.clone() {
                    for n in r.clone() {
                        if k + l != m + n {
                            continue;
                        }
                        let a = (k.min(l), k.max(l));
                        let b = (m.min(n), m.max(n));
                        if a == b {
                            continue;
                        }
                        let (first, second) = if a < b { (a, b) } else { (b, a) };
                        classes.insert((first.0, first.1, second.0, second.1));
                    }
                }
            }
        }
        classes
    }

    #[test]
    fn set_matches_brute_force() {
        for order in 2..=9 {
            let got: BTreeSet<_> = witness_set(order).unwrap().iter().map(|w| (w.k, w.l, w.m, w.n)).collect();
            assert_eq!(got, brute_force(order), "order {order}");
        }
        let three = witness_set(3).unwrap();
        assert_eq!(three.len(), 3);
        for w in [(0, 3, 1, 2), (1, 3, 2, 2), (0, 2, 1, 1)] {
            assert!(three.contains(&WitnessIndex::new(w.0, w.1, w.2, w.3).unwrap()));
        }
        assert_eq!(witness_set(2).unwrap(), vec![WitnessIndex::new(0, 2, 1, 1).unwrap()]);
        assert!(witness_set(1).is_err());
    }

    #[test]
    fn invalid_indices_rejected() {
        assert!(WitnessIndex::new(0, 2, 1, 2).is_err());
        assert!(WitnessIndex::new(1, 2, 2, 1).is_err());
    }

    #[test]
    fn intensity_witness_examples() {
        let idx = WitnessIndex::new(0, 2, 1, 1).unwrap();
        let coh = MomentVector::coherent(2.5, 3);
        assert_eq!(intensity_witness(&coh, &idx).unwrap(), 0.0);
        let fock = factorial_moments(&Distribution::point(1), 3).unwrap();
        assert_eq!(intensity_witness(&fock, &idx).unwrap(), -1.0);
        let thermal = Distribution::new(mandel_rice_pmf(1.0, 2.0, 1e-16).unwrap()).unwrap();
        let mv = factorial_moments(&thermal, 2).unwrap();
        assert!((intensity_witness(&mv, &idx).unwrap() - 4.0).abs() < 1e-9);
        let short = factorial_moments(&thermal, 2).unwrap();
        assert!(intensity_witness(&short, &WitnessIndex::new(0, 3, 1, 2).unwrap()).is_err());
    }

    #[test]
    fn probability_witness_examples() {
        let p = Distribution::poisson(1.3, 1e-15).unwrap();
        for idx in witness_set(3).unwrap() {
            assert!(probability_witness(&p, &idx).abs() < 1e-15);
        }
        let idx = WitnessIndex::new(0, 2, 1, 1).unwrap();
        assert_eq!(probability_witness(&Distribution::point(1), &idx), -1.0);
    }

    #[test]
    fn duality_on_skewed_distribution() {
        let p = Distribution::normalized(vec![0.3, 0.05, 0.4, 0.01, 0.2, 0.04]).unwrap();
        let mm = modified_moments(&p, 5).unwrap();
        let p0 = p.prob(0);
        for idx in witness_set(5).unwrap() {
            let a = probability_witness(&p, &idx);
            let b = p0 * p0 * intensity_witness(&mm, &idx).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()), "{idx}: {a} vs {b}");
        }
    }
}
