use noncls::ann::*;
use noncls::nonclassicality::WitnessKind;
use noncls::photostats::{DetectorParams, TwinBeamParams};
use noncls::Error;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn random_input(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let raw: Vec<f64> = (0..INPUT_LEN).map(|_| rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|v| v / total).collect()
}

fn randomized(sizes: &[usize], seed: u64) -> MlpModel {
    let mut m = MlpModel::new(sizes, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for b in m.biases.iter_mut().flatten() {
        *b = rng.random_range(-0.5..0.5);
    }
    m
}

/// Forward pass written independently: explicit matrix-vector products and a
/// softmax through log-sum-exp.
fn reference_forward(m: &MlpModel, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let depth = m.weights.len();
    for l in 0..depth {
        let rows = m.layer_sizes[l + 1];
        let cols = m.layer_sizes[l];
        let mut z = vec![0.0; rows];
        for r in 0..rows {
            let mut acc = m.biases[l][r];
            for c in 0..cols {
                acc += m.weights[l][r * cols + c] * a[c];
            }
            z[r] = if l + 1 < depth && acc < 0.0 { 0.0 } else { acc };
        }
        a = z;
    }
    let top = a.iter().cloned().fold(f64::MIN, f64::max);
    let lse = top + a.iter().map(|v| (v - top).exp()).sum::<f64>().ln();
    a.iter().map(|v| (v - lse).exp()).collect()
}

#[test]
fn zero_model_gives_uniform_output() {
    let m = MlpModel::zeros(&[40, 7, 5]).unwrap();
    let q = mlp_forward(&m, &[0.025; 40]).unwrap();
    for v in q {
        assert!((v - 0.2).abs() < 1e-15);
    }
}

#[test]
fn softmax_is_shift_invariant_and_normalized() {
    let z = [0.3, -1.2, 4.0, 0.0, 2.5];
    let a = softmax(&z);
    let b = softmax(&z.map(|v| v + 123.456));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-15);
    }
    assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    let huge = softmax(&[800.0, 799.0, -800.0]);
    assert!(huge.iter().all(|v| v.is_finite()));
    assert!((huge.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn forward_matches_reference_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..5 {
        let m = randomized(&[40, 5, 3], seed);
        for _ in 0..20 {
            let x = random_input(&mut rng);
            let q = mlp_forward(&m, &x).unwrap();
            let r = reference_forward(&m, &x);
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (a, b) in q.iter().zip(&r) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn forward_rejects_wrong_input_length() {
    let m = MlpModel::new(&[40, 4, 2], 0).unwrap();
    assert!(matches!(mlp_forward(&m, &[0.0; 39]), Err(Error::DimensionMismatch(_))));
    assert!(MlpModel::new(&[41, 4, 2], 0).is_err());
}

#[test]
fn cross_entropy_cases() {
    let onehot = [0.0, 1.0, 0.0];
    assert_eq!(cross_entropy(&onehot, &onehot), 0.0);
    let uniform = [0.125; 8];
    let mut t = [0.0; 8];
    t[5] = 1.0;
    assert!((cross_entropy(&t, &uniform) - 8f64.ln()).abs() < 1e-15);
    // clamped at 1e-15
    assert!((cross_entropy(&onehot, &[0.5, 0.0, 0.5]) + 1e-15f64.ln()).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let raw: Vec<f64> = (0..6).map(|_| rng.random::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        let q: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let k = rng.random_range(0..6);
        let mut p = vec![0.0; 6];
        p[k] = 1.0;
        assert!((cross_entropy(&p, &q) - (-q[k].ln())).abs() < 1e-12);
    }
}

fn loss_at(m: &MlpModel, x: &[f64], y: &[f64]) -> f64 {
    cross_entropy(y, &mlp_forward(m, x).unwrap())
}

/// Central differences with h = 1e-5 against the analytic gradient.
fn max_gradient_error(m: &MlpModel, x: &[f64], y: &[f64]) -> (f64, usize) {
    let g = backprop(m, x, y).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for l in 0..m.weights.len() {
        for (is_bias, len) in [(false, m.weights[l].len()), (true, m.biases[l].len())] {
            for i in 0..len {
                let mut plus = m.clone();
                let mut minus = m.clone();
                let (p, q, analytic) = if is_bias {
                    (&mut plus.biases[l][i], &mut minus.biases[l][i], g.biases[l][i])
                } else {
                    (&mut plus.weights[l][i], &mut minus.weights[l][i], g.weights[l][i])
                };
                *p += h;
                *q -= h;
                let numeric = (loss_at(&plus, x, y) - loss_at(&minus, x, y)) / (2.0 * h);
                if analytic.abs() < 1e-8 && numeric.abs() < 1e-8 {
                    continue;
                }
                checked += 1;
                worst = worst.max((analytic - numeric).abs() / analytic.abs().max(numeric.abs()));
            }
        }
    }
    (worst, checked)
}

#[test]
fn backprop_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..4 {
        // inputs of order one keep every hidden unit away from its kink
        let m = randomized(&[40, 5, 3], seed);
        let x: Vec<f64> = (0..INPUT_LEN).map(|_| rng.random::<f64>()).collect();
        let mut y = vec![0.0; 3];
        y[seed as usize % 3] = 1.0;
        let (err, checked) = max_gradient_error(&m, &x, &y);
        assert!(checked > 50);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

#[test]
fn output_gradient_vanishes_at_target() {
    // a saturated network already predicts class 1
    let mut m = MlpModel::zeros(&[40, 3]).unwrap();
    m.biases[0] = vec![-60.0, 60.0, -60.0];
    let g = backprop(&m, &[0.01; 40], &[0.0, 1.0, 0.0]).unwrap();
    assert!(g.biases[0].iter().all(|v| v.abs() < 1e-40));
}

#[test]
fn dead_relu_unit_gets_no_gradient() {
    let mut m = randomized(&[40, 4, 3], 2);
    // unit 1 of the hidden layer has a strongly negative pre-activation
    m.biases[0][1] = -1e3;
    let x = vec![0.025; 40];
    let g = backprop(&m, &x, &[1.0, 0.0, 0.0]).unwrap();
    assert!(g.weights[0][40..80].iter().all(|&v| v == 0.0));
    assert_eq!(g.biases[0][1], 0.0);
}

#[test]
fn adam_zero_gradient_changes_nothing() {
    let mut m = randomized(&[40, 5, 3], 1);
    let before = m.clone();
    let mut st = AdamState::new(&m);
    let g = Gradients::zeros_like(&m);
    adam_step(&mut m, &g, &mut st).unwrap();
    assert_eq!(m, before);
    assert_eq!(st.step, 1);
}

#[test]
fn adam_first_step_closed_form() {
    let mut m = randomized(&[40, 2, 2], 4);
    let before = m.clone();
    let mut st = AdamState::new(&m);
    let mut g = Gradients::zeros_like(&m);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for v in g.weights.iter_mut().chain(g.biases.iter_mut()).flatten() {
        *v = rng.random_range(-3.0..3.0);
    }
    adam_step(&mut m, &g, &mut st).unwrap();
    for l in 0..m.weights.len() {
        for i in 0..m.weights[l].len() {
            let gi = g.weights[l][i];
            let expect = before.weights[l][i] - 1e-3 * gi / (gi.abs() + 1e-8);
            assert!((m.weights[l][i] - expect).abs() < 1e-15);
        }
    }
}

#[test]
fn adam_constant_gradient_steps_are_bounded_by_lr() {
    let mut m = MlpModel::zeros(&[40, 2]).unwrap();
    let mut st = AdamState::new(&m);
    let mut g = Gradients::zeros_like(&m);
    g.biases[0] = vec![0.7, -2.0];
    let mut last = m.biases[0].clone();
    for _ in 0..500 {
        adam_step(&mut m, &g, &mut st).unwrap();
        for (k, (now, prev)) in m.biases[0].iter().zip(&last).enumerate() {
            let step = now - prev;
            assert!(step.abs() <= 1e-3 * (1.0 + 1e-12));
            assert!(step * g.biases[0][k] < 0.0);
        }
        last = m.biases[0].clone();
    }
    let final_step = (m.biases[0][0] - last[0]).abs();
    assert!(final_step <= 1e-3);
}

fn toy_separable(n: usize, seed: u64) -> TrainingSet {
    let scheme = ClassScheme::new(0.0, 1.0, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let label = i % 2;
            let mut x = vec![0.0; INPUT_LEN];
            let center = if label == 0 { 5 } else { 25 };
            for (k, v) in x.iter_mut().enumerate() {
                let d = k as f64 - center as f64 - rng.random_range(-3.0..3.0);
                *v = (-d * d / 20.0).exp();
            }
            let s: f64 = x.iter().sum();
            x.iter_mut().for_each(|v| *v /= s);
            Sample { x, label, tau_true: scheme.midpoint(label), b_p: 0.0, c_s: 0, family: 0, tail_mass: 0.0 }
        })
        .collect();
    TrainingSet {
        samples,
        scheme,
        kind: WitnessKind::Intensity,
        metadata: TrainingMetadata { config_hash: "toy".into(), seed, noise_frames: None, dropped_points: 0 },
    }
}

#[test]
fn separable_toy_set_is_learned() {
    let ts = toy_separable(600, 1);
    let m = MlpModel::new(&[40, 8, 2], 3).unwrap();
    let cfg = TrainConfig { epochs: 50, batch_size: 32, seed: 5, ..TrainConfig::default() };
    let run = train(&m, &ts, &cfg).unwrap();
    assert_eq!(run.metrics.len(), 50);
    let reached = run.metrics.iter().any(|e| e.val_accuracy == 1.0);
    assert!(reached, "{:?}", run.metrics.last());
    let eval = evaluate(&run.best_model, &ts, Some(&run.validation_indices)).unwrap();
    assert_eq!(eval.accuracy, 1.0);
}

#[test]
fn zero_epochs_return_the_model() {
    let ts = toy_separable(40, 2);
    let m = MlpModel::new(&[40, 4, 2], 1).unwrap();
    let run = train(&m, &ts, &TrainConfig { epochs: 0, ..TrainConfig::default() }).unwrap();
    assert!(run.metrics.is_empty());
    assert_eq!(run.model.weights, m.weights);
    assert_eq!(run.model.biases, m.biases);
    assert_eq!(run.best_epoch, None);
}

#[test]
fn training_is_bit_reproducible() {
    let ts = toy_separable(300, 4);
    let m = MlpModel::new(&[40, 6, 6, 2], 9).unwrap();
    let cfg = TrainConfig { epochs: 5, batch_size: 16, seed: 7, ..TrainConfig::default() };
    let a = train(&m, &ts, &cfg).unwrap();
    let b = train(&m, &ts, &cfg).unwrap();
    assert_eq!(a, b);
    let c = train(&m, &ts, &TrainConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.model.weights, c.model.weights);
}

#[test]
fn training_loss_trends_down() {
    let ts = toy_separable(400, 6);
    let m = MlpModel::new(&[40, 8, 2], 2).unwrap();
    let cfg = TrainConfig { epochs: 250, batch_size: 64, seed: 1, ..TrainConfig::default() };
    let run = train(&m, &ts, &cfg).unwrap();
    let avg = |a: usize| run.metrics[a..a + 10].iter().map(|e| e.train_loss).sum::<f64>() / 10.0;
    assert!(avg(240) < avg(0));
    assert!(avg(120) < avg(0));
}

#[test]
fn bad_split_rejected() {
    let ts = toy_separable(10, 0);
    let m = MlpModel::new(&[40, 2], 0).unwrap();
    for split in [0.0, 1.0, -0.5] {
        assert!(train(&m, &ts, &TrainConfig { split, epochs: 1, ..TrainConfig::default() }).is_err());
    }
}

#[test]
fn classify_saturated_and_tied() {
    let scheme = ClassScheme::intensity();
    let mut m = MlpModel::zeros(&[40, 8]).unwrap();
    let uniform = classify(&m, &[0.0; 40], &scheme).unwrap();
    assert_eq!(uniform.class, 0);
    assert!((uniform.tau - 0.0125).abs() < 1e-15);
    m.biases[0][3] = 50.0;
    let c = classify(&m, &[0.0; 40], &scheme).unwrap();
    assert_eq!(c.class, 3);
    assert!(c.probabilities[3] > 1.0 - 1e-15);
    assert!((c.tau - 0.0875).abs() < 1e-15);
    assert!(classify(&m, &[0.0; 40], &ClassScheme::probability()).is_err());
}

#[test]
fn evaluate_perfect_and_chance() {
    // labels produced by the model itself
    let mut ts = toy_separable(200, 3);
    ts.scheme = ClassScheme::new(0.0, 1.0, 8).unwrap();
    let m = randomized(&[40, 6, 8], 5);
    for s in ts.samples.iter_mut() {
        s.label = argmax(&mlp_forward(&m, &s.x).unwrap());
        s.tau_true = ts.scheme.midpoint(s.label);
    }
    let e = evaluate(&m, &ts, None).unwrap();
    assert_eq!(e.accuracy, 1.0);
    for (i, row) in e.confusion.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            if i != j {
                assert_eq!(v, 0);
            }
        }
    }

    // a balanced 8-class set against a network that ignores its input
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let n = 4000;
    for (i, s) in ts.samples.iter_mut().enumerate() {
        s.label = i % 8;
    }
    ts.samples = (0..n).map(|i| Sample { label: i % 8, ..ts.samples[i % 200].clone() }).collect();
    let mut guesser = MlpModel::zeros(&[40, 8]).unwrap();
    guesser.biases[0] = (0..8).map(|_| rng.random::<f64>()).collect();
    let e = evaluate(&guesser, &ts, None).unwrap();
    let sigma = (0.125f64 * 0.875 / n as f64).sqrt();
    assert!((e.accuracy - 0.125).abs() <= 3.0 * sigma, "{}", e.accuracy);
}

#[test]
fn model_json_round_trip() {
    let mut m = MlpModel::for_scheme(WitnessKind::Intensity, &ClassScheme::intensity(), 3).unwrap();
    m.training_data_hash = Some("abc".into());
    assert_eq!(m.layer_sizes, vec![40, 20, 20, 8]);
    let text = m.to_json().unwrap();
    let back = MlpModel::from_json(&text).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.to_json().unwrap(), text);
    let p = MlpModel::for_scheme(WitnessKind::Probability, &ClassScheme::probability(), 3).unwrap();
    assert_eq!(p.layer_sizes, vec![40, 50, 50, 50, 10]);
}

fn small_config(b_p_grid: Vec<f64>, noise: Option<u64>) -> TrainingConfig {
    let reference = TwinBeamParams::reference();
    TrainingConfig {
        families: vec![SourceFamily { base: reference, det_s: DetectorParams::reference_signal(), c_s: vec![5], b_p_grid }],
        per_class: 4,
        noise_frames: noise,
        ..TrainingConfig::desk_intensity(17)
    }
}

#[test]
fn pure_noise_source_is_class_zero() {
    let ts = generate_training_set(&small_config(vec![0.0], None)).unwrap();
    assert_eq!(ts.len(), 4);
    for s in &ts.samples {
        assert_eq!(s.tau_true, 0.0);
        assert_eq!(s.label, 0);
    }
    ts.validate().unwrap();
}

#[test]
fn noiseless_samples_repeat_exactly() {
    let cfg = small_config(vec![0.032, 0.032], None);
    let ts = generate_training_set(&cfg).unwrap();
    let first = &ts.samples[0];
    assert!(ts.samples.iter().all(|s| s.x == first.x && s.label == first.label));
    assert_eq!(generate_training_set(&cfg).unwrap(), ts);
}

#[test]
fn labels_rederive_from_stored_pair_intensity() {
    let cfg = small_config(vec![0.0, 0.0315, 0.032, 0.0322], Some(100_000));
    let ts = generate_training_set(&cfg).unwrap();
    ts.validate().unwrap();
    assert_eq!(ts, generate_training_set(&cfg).unwrap());
    let fam = &cfg.families[0];
    for s in &ts.samples {
        let params = fam.base.with_pair_intensity(s.b_p).unwrap();
        let tau = oracle_tau(&params, &fam.det_s, s.c_s, cfg.kind, cfg.max_order).unwrap();
        assert!((tau - s.tau_true).abs() <= 1e-9);
        assert_eq!(cfg.scheme.class_of(tau), Some(s.label));
        assert!(s.x.iter().sum::<f64>() <= 1.0 + 1e-9);
    }
}

#[test]
fn infeasible_pair_intensity_is_rejected() {
    // holding the beam means fixed caps the pair intensity near 0.0323
    let cfg = small_config(linspace(0.0, 0.064, 9), None);
    assert!(matches!(generate_training_set(&cfg), Err(Error::InfeasibleGrid(_))));
}

#[test]
fn feasible_sweep_spans_several_classes() {
    let top = max_pair_intensity(&TwinBeamParams::reference());
    // depth only switches on within a few percent of the feasibility limit
    let mut grid = vec![0.0];
    grid.extend(linspace(0.030, top * 0.9999, 40));
    let cfg = small_config(grid, None);
    let points = grid_points(&cfg).unwrap();
    let mut classes: Vec<usize> = points.iter().filter_map(|p| cfg.scheme.class_of(p.tau)).collect();
    classes.sort();
    classes.dedup();
    assert!(classes.len() >= 3, "{classes:?}");
}
