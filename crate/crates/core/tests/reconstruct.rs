use noncls::photostats::*;
use noncls::reconstruct::*;
use proptest::prelude::*;

fn mixture(weights: &[f64], means: &[f64]) -> Distribution {
    let parts: Vec<Distribution> = means.iter().map(|m| Distribution::poisson(*m, 1e-14).unwrap()).collect();
    let len = parts.iter().map(|p| p.len()).max().unwrap();
    let w: Vec<f64> = (0..len).map(|n| weights.iter().zip(&parts).map(|(a, p)| a * p.prob(n)).sum()).collect();
    Distribution::normalized(w).unwrap()
}

#[test]
fn noiseless_round_trip_recovers_the_generator() {
    let det = DetectorParams::new(0.6, 1e-3, 400).unwrap();
    let p = mixture(&[0.3, 0.7], &[2.0, 9.0]);
    let t = detection_matrix(&det, p.cutoff(), p.cutoff()).unwrap();
    let h = forward_histogram(&t, &p).unwrap();
    let r = em_iterate(&h, &t, &EmConfig::default()).unwrap();
    let tv = r.distribution.total_variation(&p);
    assert!(tv < 1e-3, "tv {tv} after {} iterations", r.iterations);
}

#[test]
fn sampled_round_trip_keeps_the_mean() {
    let det = DetectorParams::reference_idler();
    let p = mixture(&[1.0], &[12.0]);
    let exact = DetectionMatrix::auto(&det, p.cutoff(), TAIL_TOL).unwrap().forward(&p).unwrap();
    let h = sample_histogram(&exact, 1_000_000, 5).unwrap();
    let n_max = 70;
    let t = detection_matrix(&det, h.cutoff(), n_max).unwrap();
    let r = em_iterate(&h, &t, &EmConfig { max_iter: 5000, ..EmConfig::default() }).unwrap();
    let rel = (r.distribution.mean() - p.mean()).abs() / p.mean();
    assert!(rel < 0.02, "mean {} vs {}", r.distribution.mean(), p.mean());
}

#[test]
fn starting_points_reach_the_same_likelihood() {
    let det = DetectorParams::new(0.4, 2e-3, 150).unwrap();
    let p = mixture(&[0.5, 0.5], &[1.0, 6.0]);
    let n_max = p.cutoff();
    let t = detection_matrix(&det, n_max, n_max).unwrap();
    let h = sample_histogram(&forward_histogram(&t, &p).unwrap(), 200_000, 9).unwrap();
    let t = detection_matrix(&det, h.cutoff(), n_max).unwrap();
    let run = |init| em_iterate(&h, &t, &EmConfig { init, max_iter: 20_000, ..EmConfig::default() }).unwrap();
    let a = run(EmInit::Uniform);
    let b = run(EmInit::HistogramCopy);
    assert!((a.log_likelihood - b.log_likelihood).abs() < 1e-6 * a.log_likelihood.abs());
    assert!(log_likelihood(&h, &t, &a.distribution).unwrap() >= log_likelihood(&h, &t, &p).unwrap() - 1e-9);
}

#[test]
fn plain_and_accelerated_updates_share_fixed_points() {
    let det = DetectorParams::new(0.7, 0.0, 100).unwrap();
    let p = mixture(&[0.2, 0.8], &[0.5, 4.0]);
    let t = detection_matrix(&det, p.cutoff(), p.cutoff()).unwrap();
    let h = forward_histogram(&t, &p).unwrap();
    let fast = em_iterate(&h, &t, &EmConfig::default()).unwrap();
    let slow = em_iterate(&h, &t, &EmConfig { accelerate: false, ..EmConfig::default() }).unwrap();
    assert!(fast.iterations <= slow.iterations);
    assert!(fast.distribution.total_variation(&slow.distribution) < 1e-4);
}

#[test]
fn fit_beats_the_truth_on_its_own_sample() {
    let src = TwinBeamParams::new(30.0, 1.0, 1.5, 0.08, 0.5, 0.4).unwrap();
    let det_s = DetectorParams::new(0.3, 1e-4, 500).unwrap();
    let det_i = DetectorParams::new(0.35, 1e-4, 500).unwrap();
    let j = twin_beam_joint(&src, None, 1e-10).unwrap();
    let (ns, ni) = j.cutoffs();
    let t_s = DetectionMatrix::auto(&det_s, ns, 1e-10).unwrap();
    let t_i = DetectionMatrix::auto(&det_i, ni, 1e-10).unwrap();
    let h = sample_joint_histogram(&forward_joint(&t_s, &t_i, &j).unwrap(), 300_000, 4).unwrap();
    let cfg = FitConfig { restarts: 2, seed: 1, ..FitConfig::default() };
    let a = fit_twin_beam(&h, &det_s, &det_i, &src, &cfg).unwrap();
    assert!(a.objective_value <= a.initial_objective + 1e-12);
    let rel = |x: f64, y: f64| (x - y).abs() / y;
    assert!(rel(a.params.mean_signal(), src.mean_signal()) < 0.02);
    assert!(rel(a.params.covariance(), src.covariance()) < 0.1);
    let b = fit_twin_beam(&h, &det_s, &det_i, &src, &cfg).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn likelihood_never_decreases(
        eta in 0.1f64..1.0,
        d in 0.0f64..0.01,
        m1 in 0.1f64..6.0,
        m2 in 0.1f64..12.0,
        w in 0.05f64..0.95,
        frames in 200u64..50_000,
        seed in 0u64..1000,
        accelerate in any::<bool>(),
    ) {
        let det = DetectorParams::new(eta, d, 120).unwrap();
        let p = mixture(&[w, 1.0 - w], &[m1, m2]);
        let t = detection_matrix(&det, 120, p.cutoff()).unwrap();
        let h = sample_histogram(&forward_histogram(&t, &p).unwrap(), frames, seed).unwrap();
        let n_max = p.cutoff() + 10;
        let t = detection_matrix(&det, h.cutoff(), n_max).unwrap();
        let cfg = EmConfig { max_iter: 300, record_history: true, accelerate, ..EmConfig::default() };
        let r = em_iterate(&h, &t, &cfg).unwrap();
        for pair in r.history.windows(2) {
            prop_assert!(pair[1] >= pair[0] - LIKELIHOOD_SLACK * pair[0].abs().max(1.0), "{} -> {}", pair[0], pair[1]);
        }
        prop_assert!((r.distribution.total() - 1.0).abs() < 1e-12);
        prop_assert!(r.distribution.probs().iter().all(|x| *x >= 0.0));
    }
}
