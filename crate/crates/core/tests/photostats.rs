use noncls::photostats::*;
use proptest::prelude::*;
use statrs::distribution::{Binomial, Discrete};

const MC_TRIALS: u64 = 400_000;

#[test]
fn detection_matrix_matches_pixel_monte_carlo_on_a_grid() {
    let grid = [(16u64, 0.9, 0.0), (40, 0.5, 0.01), (200, 0.3, 0.001)];
    for (k, &(n_pix, eta, d)) in grid.iter().enumerate() {
        let det = DetectorParams::new(eta, d, n_pix).unwrap();
        let t = detection_matrix(&det, n_pix as usize, 30).unwrap();
        for n in [0usize, 3, 12, 30] {
            let mc = mc_detector_oracle(&det, n, MC_TRIALS, 100 + k as u64).unwrap();
            for c in 0..=n_pix as usize {
                let p = t.get(c, n);
                let se = (p * (1.0 - p) / MC_TRIALS as f64).sqrt().max(1.0 / MC_TRIALS as f64);
                let dev = (mc.prob(c) - p).abs();
                assert!(dev < 5.0 * se, "n_pix {n_pix} n {n} c {c}: {} vs {p}", mc.prob(c));
            }
        }
    }
}

// A Poisson field spreads over independent Poisson pixels, so the click
// count is exactly Binomial(n_pix, 1 - (1 - d) exp(-eta mean / n_pix)).
#[test]
fn poisson_field_gives_binomial_clicks() {
    for &(mean, eta, d, n_pix) in &[(3.0, 0.5, 0.0, 50u64), (20.0, 0.23, 1e-3, 400), (8.0, 1.0, 0.02, 30)] {
        let det = DetectorParams::new(eta, d, n_pix).unwrap();
        let p = Distribution::poisson(mean, 1e-13).unwrap();
        let t = detection_matrix(&det, n_pix as usize, p.cutoff()).unwrap();
        let h = forward_histogram(&t, &p).unwrap();
        let q = 1.0 - (1.0 - d) * (-eta * mean / n_pix as f64).exp();
        let b = Binomial::new(q, n_pix).unwrap();
        for c in 0..=n_pix as usize {
            assert!((h.prob(c) - b.pmf(c as u64)).abs() < 1e-10, "c {c}: {} vs {}", h.prob(c), b.pmf(c as u64));
        }
    }
}

#[test]
fn joint_moments_match_the_twin_beam_model() {
    let src = TwinBeamParams::new(20.0, 2.0, 3.0, 0.1, 0.3, 0.2).unwrap();
    let j = twin_beam_joint(&src, None, 1e-12).unwrap();
    let (ms, mi) = j.means();
    assert!((ms - src.mean_signal()).abs() < 1e-8);
    assert!((mi - src.mean_idler()).abs() < 1e-8);
    let (rs, ri) = j.cutoffs();
    let mut cov = 0.0;
    for s in 0..=rs {
        for i in 0..=ri {
            cov += (s as f64 - ms) * (i as f64 - mi) * j.get(s, i);
        }
    }
    let expected = src.m_p * src.b_p * (1.0 + src.b_p);
    assert!((cov - expected).abs() < 1e-7, "{cov} vs {expected}");
    assert!((src.covariance() - expected).abs() < 1e-12);

    let sig = compound_marginal(src.m_p, src.b_p, src.m_s, src.b_s, 1e-14).unwrap();
    for (a, b) in j.marginal_signal().iter().zip(&sig) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn post_selected_idler_is_sub_poissonian() {
    let src = TwinBeamParams::reference();
    let det_s = DetectorParams::reference_signal();
    let mut fanos = Vec::new();
    for c_s in 2..=9 {
        let cond = conditional_idler_pnd(&src, &det_s, c_s, None).unwrap();
        fanos.push(cond.distribution.fano());
    }
    assert!(fanos.iter().all(|f| *f < 1.0), "{fanos:?}");
    // Without pairs the idler does not care about the signal.
    let uncorrelated = TwinBeamParams::new(270.0, 0.01, 0.026, 0.0, 7.6, 5.3).unwrap();
    let a = conditional_idler_pnd(&uncorrelated, &det_s, 2, None).unwrap();
    let b = conditional_idler_pnd(&uncorrelated, &det_s, 6, None).unwrap();
    assert!(a.distribution.total_variation(&b.distribution) < 1e-9);
    assert!(a.distribution.fano() > 1.0);
}

#[test]
fn sampled_histograms_approach_the_source() {
    let p = Distribution::poisson(6.0, 1e-12).unwrap();
    for frames in [1_000u64, 100_000, 10_000_000] {
        let expected: f64 = 0.5 * p.probs().iter().map(|q| (q * (1.0 - q) / frames as f64).sqrt()).sum::<f64>();
        let h = sample_histogram(&p, frames, 3).unwrap();
        assert_eq!(h.n_frames(), Some(frames));
        assert_eq!(h.counts().unwrap().iter().sum::<u64>(), frames);
        let tv = h.total_variation(&p);
        assert!(tv < 3.0 * expected, "frames {frames}: tv {tv} vs {expected}");
    }
}

#[test]
fn joint_sampling_preserves_frames_and_seed() {
    let src = TwinBeamParams::new(10.0, 1.0, 1.0, 0.1, 0.2, 0.2).unwrap();
    let j = twin_beam_joint(&src, None, 1e-10).unwrap();
    let a = sample_joint_histogram(&j, 50_000, 1).unwrap();
    let b = sample_joint_histogram(&j, 50_000, 1).unwrap();
    let c = sample_joint_histogram(&j, 50_000, 2).unwrap();
    assert_eq!(a.probs(), b.probs());
    assert_ne!(a.probs(), c.probs());
    assert!((a.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn detection_columns_are_distributions(eta in 0.01f64..1.0, d in 0.0f64..0.2, n_pix in 1u64..120, n_max in 0usize..60) {
        let det = DetectorParams::new(eta, d, n_pix).unwrap();
        let t = detection_matrix(&det, n_pix as usize, n_max).unwrap();
        for n in 0..=n_max {
            let mut sum = 0.0;
            for c in 0..=n_pix as usize {
                let v = t.get(c, n);
                prop_assert!(v >= 0.0 && v <= 1.0 + 1e-12);
                sum += v;
            }
            prop_assert!((sum - 1.0).abs() < 1e-9, "column {} sums to {}", n, sum);
        }
    }

    #[test]
    fn more_photons_mean_more_clicks(eta in 0.05f64..1.0, d in 0.0f64..0.1, n_pix in 2u64..80) {
        let det = DetectorParams::new(eta, d, n_pix).unwrap();
        let t = detection_matrix(&det, n_pix as usize, 40).unwrap();
        let mean = |n: usize| (0..=n_pix as usize).map(|c| c as f64 * t.get(c, n)).sum::<f64>();
        for n in 0..40 {
            prop_assert!(mean(n + 1) >= mean(n) - 1e-12);
        }
    }

    #[test]
    fn mandel_rice_has_the_right_moments(m in 0.05f64..50.0, b in 0.001f64..5.0) {
        let p = Distribution::new(mandel_rice_pmf(m, b, 1e-14).unwrap()).unwrap();
        prop_assert!((p.total() - 1.0).abs() < 1e-9);
        prop_assert!((p.mean() - m * b).abs() < 1e-6 * (1.0 + m * b));
        prop_assert!((p.variance() - m * b * (1.0 + b)).abs() < 1e-5 * (1.0 + m * b * (1.0 + b)));
    }

    #[test]
    fn forward_preserves_normalization(mean in 0.0f64..15.0, eta in 0.05f64..1.0, d in 0.0f64..0.05) {
        let det = DetectorParams::new(eta, d, 60).unwrap();
        let p = Distribution::poisson(mean, 1e-13).unwrap();
        let t = detection_matrix(&det, 60, p.cutoff()).unwrap();
        let h = forward_histogram(&t, &p).unwrap();
        prop_assert!((h.total() - p.total()).abs() < 1e-9);
    }
}
