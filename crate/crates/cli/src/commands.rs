use std::path::{Path, PathBuf};

use clap::Parser;
use noncls::ann::{
    architecture_sweep, classify, default_hidden, evaluate, input_from_histogram, train, ClassScheme, MlpModel,
    SweepEntry, TrainConfig, TrainingSet, DEFAULT_NOISE_FRAMES, INPUT_LEN,
};
use noncls::io::{
    read_detector, read_distribution, read_joint, read_source, read_text, write_distribution, write_joint, write_text,
};
use noncls::nonclassicality::{default_m_eff, ncd_max, witness_set, NcdSource, WitnessKind, FALLBACK_M_EFF};
use noncls::photostats::{
    conditional_idler_pnd, detection_matrix, sample_histogram, sample_joint_histogram, twin_beam_joint, DetectionMatrix,
    DetectorParams, TwinBeamParams, TAIL_TOL,
};
use noncls::pipeline::{
    cmd_bench, delta_series, depth_series, idler_photocounts, joint_photocounts, reconstruction_cutoff, sha256_file,
    sweep_series, training_series, BenchReport, Method, PipelineConfig, RunManifest, Series,
};
use noncls::reconstruct::{em_iterate, fit_twin_beam, EmConfig, FitConfig};
use noncls::{Error, Result};
use serde_json::json;

use crate::args::{self, Arm, Cli, Command, Common};

const TRAINING_FILE: &str = "training_set.json";

/// What a command read and wrote.
#[derive(Default)]
struct Run {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seeds: Vec<(&'static str, u64)>,
    /// Reported after the outputs and the manifest are written.
    deferred: Option<Error>,
}

struct Ctx<'a> {
    common: &'a Common,
    config: PipelineConfig,
}

impl Ctx<'_> {
    fn out(&self) -> Result<&Path> {
        self.common.out.as_deref().ok_or_else(|| Error::InvalidParams("--out is required".into()))
    }

    fn seed(&self) -> u64 {
        self.config.seed_or(self.common.seed)
    }
}

fn name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Simulate(_) => "simulate",
        Command::Detmat(_) => "detmat",
        Command::Reconstruct(_) => "reconstruct",
        Command::Fit(_) => "fit",
        Command::Ncd(_) => "ncd",
        Command::GenTrain(_) => "gen-train",
        Command::Train(_) => "train",
        Command::Classify(_) => "classify",
        Command::Sweep(_) => "sweep",
        Command::Bench(_) => "bench",
        Command::Plotdata(_) => "plotdata",
    }
}

fn writes_directory(cmd: &Command) -> bool {
    matches!(cmd, Command::GenTrain(_) | Command::Bench(_) | Command::Plotdata(_))
}

fn manifest_path(common: &Common, cmd: &Command) -> Option<PathBuf> {
    if let Some(p) = &common.manifest {
        return Some(p.clone());
    }
    let out = common.out.as_ref()?;
    Some(if writes_directory(cmd) {
        out.join("manifest.json")
    } else {
        let mut s = out.clone().into_os_string();
        s.push(".manifest.json");
        PathBuf::from(s)
    })
}

/// Run one parsed command line. With `record`, a manifest of the run is
/// written next to its outputs.
pub fn execute(cli: &Cli, argv: &[String], record: bool) -> Result<()> {
    let cmd = cli.command.as_ref().ok_or_else(|| Error::InvalidParams("no subcommand given (see --help)".into()))?;
    let common = &cli.common;
    let config = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut manifest = RunManifest::new(name(cmd), argv.to_vec());
    manifest.version("noncls-cli", env!("CARGO_PKG_VERSION"));
    if let Some(p) = &common.config {
        manifest.config_hash = Some(sha256_file(p)?);
        manifest.input(p)?;
    }
    let ctx = Ctx { common, config };
    let run = match cmd {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Detmat(a) => detmat(&ctx, a),
        Command::Reconstruct(a) => reconstruct(&ctx, a),
        Command::Fit(a) => fit(&ctx, a),
        Command::Ncd(a) => ncd(&ctx, a),
        Command::GenTrain(a) => gen_train(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Classify(a) => classify_cmd(&ctx, a),
        Command::Sweep(a) => sweep(&ctx, a),
        Command::Bench(a) => bench(&ctx, a),
        Command::Plotdata(a) => plotdata(&ctx, a),
    }?;
    if record && !common.no_manifest {
        if let Some(path) = manifest_path(common, cmd) {
            for p in &run.inputs {
                manifest.input(p)?;
            }
            for p in &run.outputs {
                manifest.output(p)?;
            }
            for (k, v) in &run.seeds {
                manifest.seed(k, *v);
            }
            manifest.finish();
            manifest.write(&path)?;
            log::info!("manifest written to {}", path.display());
        }
    }
    match run.deferred {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Re-run a recorded command line from its working directory and compare
/// the digests of everything it wrote.
pub fn replay(path: &Path) -> Result<()> {
    let m = RunManifest::read(path)?;
    std::env::set_current_dir(&m.cwd)?;
    let cli = Cli::try_parse_from(&m.argv).map_err(|e| Error::Parse(e.to_string()))?;
    if cli.replay.is_some() {
        return Err(Error::InvalidParams("a manifest cannot record a replay".into()));
    }
    match execute(&cli, &m.argv, false) {
        Ok(()) | Err(Error::NonConvergence { .. }) => {}
        Err(e) => return Err(e),
    }
    let bad = m.mismatched_outputs();
    if !bad.is_empty() {
        return Err(Error::NumericalInstability(format!("replay changed {}", bad.join(", "))));
    }
    println!("replay reproduced all {} outputs bit for bit", m.outputs.len());
    Ok(())
}

/// `2..9` (inclusive) or `2,3,5`.
pub fn parse_list(text: &str) -> Result<Vec<usize>> {
    let bad = || Error::Parse(format!("expected a list like 1,2,3 or a range like 1..4, got {text:?}"));
    let num = |s: &str| s.trim().parse::<usize>().map_err(|_| bad());
    let out: Vec<usize> = match text.split_once("..") {
        Some((a, b)) => {
            let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
            if a > b {
                return Err(bad());
            }
            (a..=b).collect()
        }
        None => text.split(',').map(num).collect::<Result<_>>()?,
    };
    if out.is_empty() {
        return Err(bad());
    }
    Ok(out)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn detector_or(run: &mut Run, file: &Option<PathBuf>, fallback: Result<DetectorParams>) -> Result<DetectorParams> {
    match file {
        Some(p) => {
            run.inputs.push(p.clone());
            read_detector(p)
        }
        None => fallback,
    }
}

fn source_or(run: &mut Run, file: &Option<PathBuf>, fallback: Result<TwinBeamParams>) -> Result<TwinBeamParams> {
    match file {
        Some(p) => {
            run.inputs.push(p.clone());
            read_source(p)
        }
        None => fallback,
    }
}

fn simulate(ctx: &Ctx, a: &args::Simulate) -> Result<Run> {
    let mut run = Run::default();
    let out = ctx.out()?.to_path_buf();
    let source = source_or(&mut run, &a.source, ctx.config.source())?;
    let det_s = detector_or(&mut run, &a.detector_s, ctx.config.det_s())?;
    let det_i = detector_or(&mut run, &a.detector_i, ctx.config.det_i())?;
    let section = ctx.config.simulate.clone().unwrap_or_default();
    let frames = a.frames.or(section.frames).unwrap_or(DEFAULT_NOISE_FRAMES);
    let c_s = a.c_s.or(section.c_s);
    let sampled = !(a.exact || a.photon);
    if sampled && frames == 0 {
        return Err(Error::InvalidParams("frames must be positive".into()));
    }
    let seed = ctx.seed();
    let mut meta = json!({
        "source": source,
        "det_s": det_s,
        "det_i": det_i,
        "c_s": c_s,
        "quantity": if a.photon { "photons" } else { "photocounts" },
    });
    if sampled {
        meta["frames"] = json!(frames);
        meta["seed"] = json!(seed);
        run.seeds.push(("simulate", seed));
    }
    match c_s {
        Some(c) => {
            let cond = conditional_idler_pnd(&source, &det_s, c, None)?;
            meta["post_selection_probability"] = json!(cond.post_selection_probability);
            let d = if a.photon {
                cond.distribution
            } else {
                let exact = idler_photocounts(&cond.distribution, &det_i)?;
                if sampled {
                    sample_histogram(&exact, frames, seed)?
                } else {
                    exact
                }
            };
            write_distribution(&out, &d, Some(meta))?;
        }
        None => {
            let j = if a.photon {
                twin_beam_joint(&source, None, TAIL_TOL)?
            } else {
                let exact = joint_photocounts(&source, &det_s, &det_i)?;
                if sampled {
                    sample_joint_histogram(&exact, frames, seed)?
                } else {
                    exact
                }
            };
            write_joint(&out, &j, Some(meta))?;
        }
    }
    run.outputs.push(out);
    Ok(run)
}

fn detmat(ctx: &Ctx, a: &args::Detmat) -> Result<Run> {
    let mut run = Run::default();
    let out = ctx.out()?.to_path_buf();
    let fallback = match a.arm {
        Arm::Signal => ctx.config.det_s(),
        Arm::Idler => ctx.config.det_i(),
    };
    let det = detector_or(&mut run, &a.detector, fallback)?;
    let t = match a.c_max {
        Some(c) => detection_matrix(&det, c, a.n_max)?,
        None => DetectionMatrix::auto(&det, a.n_max, TAIL_TOL)?,
    };
    if noncls::io::Format::from_path(&out) == noncls::io::Format::Json {
        write_json(&out, &t)?;
    } else {
        let mut s = Series::new("detmat", &["c", "n", "probability"]);
        for c in 0..=t.c_max() {
            for n in 0..=t.n_max() {
                s.rows.push(vec![c as f64, n as f64, t.get(c, n)]);
            }
        }
        write_text(&out, &s.to_csv()?)?;
    }
    run.outputs.push(out);
    Ok(run)
}

fn reconstruct(ctx: &Ctx, a: &args::Reconstruct) -> Result<Run> {
    let out = ctx.out()?.to_path_buf();
    let mut run = Run { inputs: vec![a.histogram.clone(), a.detector.clone()], ..Run::default() };
    let h = read_distribution(&a.histogram)?;
    let det = read_detector(&a.detector)?;
    let c_max = h.cutoff();
    let n_max = a.n_max.unwrap_or_else(|| reconstruction_cutoff(&det, c_max));
    let t = detection_matrix(&det, c_max, n_max)?;
    let defaults = EmConfig::default();
    let cfg = EmConfig {
        max_iter: a.max_iter.unwrap_or(defaults.max_iter),
        rel_tol: a.tol.unwrap_or(defaults.rel_tol),
        accelerate: !a.no_accelerate,
        ..defaults
    };
    let r = em_iterate(&h, &t, &cfg)?;
    log::info!("EM: {} iterations, converged {}, log-likelihood {}", r.iterations, r.converged, r.log_likelihood);
    let meta = json!({
        "iterations": r.iterations,
        "converged": r.converged,
        "log_likelihood": r.log_likelihood,
        "n_max": n_max,
    });
    write_distribution(&out, &r.distribution, Some(meta))?;
    run.outputs.push(out);
    if !r.converged {
        run.deferred = Some(Error::NonConvergence { iterations: r.iterations });
    }
    Ok(run)
}

fn fit(ctx: &Ctx, a: &args::Fit) -> Result<Run> {
    let out = ctx.out()?.to_path_buf();
    let mut run = Run { inputs: vec![a.joint.clone(), a.detector_s.clone(), a.detector_i.clone()], ..Run::default() };
    let h = read_joint(&a.joint)?;
    let det_s = read_detector(&a.detector_s)?;
    let det_i = read_detector(&a.detector_i)?;
    let init = source_or(&mut run, &a.init, ctx.config.source())?;
    let defaults = FitConfig::default();
    let seed = ctx.seed();
    let cfg = FitConfig {
        restarts: a.restarts.unwrap_or(defaults.restarts),
        max_evals: a.max_evals.unwrap_or(defaults.max_evals),
        pin_means: a.pin_means,
        seed,
        ..defaults
    };
    run.seeds.push(("fit", seed));
    let r = fit_twin_beam(&h, &det_s, &det_i, &init, &cfg)?;
    write_json(&out, &r)?;
    run.outputs.push(out);
    if !r.converged {
        run.deferred = Some(Error::NonConvergence { iterations: r.n_evals });
    }
    Ok(run)
}

fn ncd(ctx: &Ctx, a: &args::Ncd) -> Result<Run> {
    let out = ctx.out()?.to_path_buf();
    let p = read_distribution(&a.distribution)?;
    let source = NcdSource::from(p);
    let m_eff = match a.m_eff {
        Some(m) => m,
        None => default_m_eff(&source, FALLBACK_M_EFF)?,
    };
    let r = ncd_max(&source, &witness_set(a.max_order)?, m_eff, a.kind.into())?;
    log::info!("tau_max = {} (witness {})", r.tau_max, r.best_witness);
    write_json(&out, &r)?;
    Ok(Run { inputs: vec![a.distribution.clone()], outputs: vec![out], ..Run::default() })
}

fn gen_train(ctx: &Ctx, a: &args::GenTrain) -> Result<Run> {
    let dir = ctx.out()?.to_path_buf();
    let mut config = ctx.config.clone();
    let mut section = config.training.take().unwrap_or_default();
    if let Some(k) = a.preset {
        section.preset = Some(k.into());
    }
    if let Some(n) = a.per_class {
        section.per_class = Some(n);
    }
    if let Some(f) = a.noise_frames {
        section.noise_frames = Some(f);
    }
    config.training = Some(section);
    let seed = ctx.seed();
    let cfg = config.training_config(seed)?;
    let ts = noncls::ann::generate_training_set(&cfg)?;
    log::info!("{} samples, class counts {:?}, {} grid points dropped", ts.len(), ts.class_counts(), ts.metadata.dropped_points);
    let path = dir.join(TRAINING_FILE);
    write_text(&path, &ts.to_json()?)?;
    Ok(Run { outputs: vec![path], seeds: vec![("gen-train", seed)], ..Run::default() })
}

fn training_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(TRAINING_FILE)
    } else {
        p.to_path_buf()
    }
}

fn load_training(p: &Path) -> Result<(TrainingSet, PathBuf)> {
    let path = training_path(p);
    Ok((TrainingSet::from_json(&read_text(&path)?)?, path))
}

fn train_cmd(ctx: &Ctx, a: &args::Train) -> Result<Run> {
    let out = ctx.out()?.to_path_buf();
    let (mut ts, data) = load_training(&a.data)?;
    if a.classes.is_some() || a.range.is_some() {
        let n = a.classes.unwrap_or(ts.scheme.n_classes);
        let scheme = match &a.range {
            Some(r) => ClassScheme::parse_range(r, n)?,
            None => ClassScheme::new(ts.scheme.tau_min, ts.scheme.tau_max, n)?,
        };
        let (relabeled, dropped) = ts.relabel(scheme)?;
        if dropped > 0 {
            log::warn!("{dropped} samples fall outside the class range and are dropped");
        }
        ts = relabeled;
    }
    let hidden = match &a.arch {
        Some(s) => parse_list(s)?,
        None => default_hidden(ts.kind),
    };
    let mut sizes = vec![INPUT_LEN];
    sizes.extend(&hidden);
    sizes.push(ts.scheme.n_classes);
    let seed = ctx.seed();
    let model = MlpModel::new(&sizes, seed)?;
    let cfg = TrainConfig { epochs: a.epochs, batch_size: a.batch_size, split: a.split, seed, lr: a.lr, ..TrainConfig::default() };
    let r = train(&model, &ts, &cfg)?;
    let ev = evaluate(&r.best_model, &ts, Some(&r.validation_indices))?;
    println!(
        "best epoch {:?}: validation accuracy {:.4}, within one class {:.4}",
        r.best_epoch, ev.accuracy, ev.within_one
    );
    write_text(&out, &r.best_model.to_json()?)?;

    let mut metrics = Series::new("metrics", &["epoch", "train_loss", "val_loss", "val_accuracy"]);
    for m in &r.metrics {
        metrics.rows.push(vec![m.epoch as f64, m.train_loss, m.val_loss, m.val_accuracy]);
    }
    let metrics_path = out.with_extension("metrics.csv");
    write_text(&metrics_path, &metrics.to_csv()?)?;
    Ok(Run { inputs: vec![data], outputs: vec![out, metrics_path], seeds: vec![("train", seed)], deferred: None })
}

fn classify_cmd(ctx: &Ctx, a: &args::Classify) -> Result<Run> {
    let model = MlpModel::from_json(&read_text(&a.model)?)?;
    let scheme = model.scheme.ok_or_else(|| Error::InvalidParams("model has no class scheme".into()))?;
    let h = read_distribution(&a.histogram)?;
    let c = classify(&model, &input_from_histogram(h.probs()), &scheme)?;
    let text = serde_json::to_string_pretty(&c)? + "\n";
    let mut run = Run { inputs: vec![a.model.clone(), a.histogram.clone()], ..Run::default() };
    match &ctx.common.out {
        Some(out) => {
            write_text(out, &text)?;
            run.outputs.push(out.clone());
        }
        None => print!("{text}"),
    }
    Ok(run)
}

fn sweep(ctx: &Ctx, a: &args::Sweep) -> Result<Run> {
    let out = ctx.out()?.to_path_buf();
    let (ts, data) = load_training(&a.data)?;
    let mut inputs = vec![data];
    let noisy = match &a.noisy {
        Some(p) => {
            let (set, path) = load_training(p)?;
            inputs.push(path);
            Some(set)
        }
        None => None,
    };
    let seed = ctx.seed();
    let cfg = TrainConfig { epochs: a.epochs, seed, ..TrainConfig::default() };
    let entries = architecture_sweep(&ts, &parse_list(&a.layers)?, &parse_list(&a.neurons)?, &cfg, noisy.as_ref())?;
    if noncls::io::Format::from_path(&out) == noncls::io::Format::Json {
        write_json(&out, &entries)?;
    } else {
        write_text(&out, &sweep_series(&entries).to_csv()?)?;
    }
    Ok(Run { inputs, outputs: vec![out], seeds: vec![("sweep", seed)], deferred: None })
}

fn bench(ctx: &Ctx, a: &args::Bench) -> Result<Run> {
    let dir = ctx.out()?.to_path_buf();
    let seed = ctx.seed();
    let mut cfg = ctx.config.bench_config(seed)?;
    let methods_given = a.methods.is_some() || ctx.config.bench.as_ref().is_some_and(|b| b.methods.is_some());
    if let Some(m) = &a.methods {
        cfg.methods = m.split(',').map(|s| s.trim().parse::<Method>()).collect::<Result<_>>()?;
    }
    if let Some(v) = a.frames {
        cfg.frames = v;
    }
    if let Some(v) = a.joint_frames {
        cfg.joint_frames = v;
    }
    if let Some(v) = a.replicas {
        cfg.replicas = v;
    }
    if let Some(v) = &a.c_s {
        cfg.c_s = parse_list(v)?;
    }
    if let Some(k) = a.kind {
        cfg.kind = WitnessKind::from(k);
    }
    if let Some(v) = a.max_order {
        cfg.max_order = v;
    }
    cfg.noiseless |= a.noiseless;
    cfg.validate()?;

    let mut run = Run { seeds: vec![("bench", seed)], ..Run::default() };
    let model = match &a.model {
        Some(p) => {
            run.inputs.push(p.clone());
            Some(MlpModel::from_json(&read_text(p)?)?)
        }
        None => {
            if !methods_given {
                cfg.methods.retain(|m| *m != Method::Ann);
                log::warn!("no --model given; the ann method is skipped");
            }
            None
        }
    };
    let report = cmd_bench(&cfg, model.as_ref())?;
    print_bench(&report);
    let files = [
        (dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n"),
        (dir.join("table.csv"), report.table_csv()?),
        (dir.join("delta.csv"), report.delta_csv()?),
    ];
    for (path, text) in files {
        write_text(&path, &text)?;
        run.outputs.push(path);
    }
    Ok(run)
}

fn print_bench(r: &BenchReport) {
    let fmt = |x: Option<f64>| x.map_or_else(|| "failed".to_string(), |v| format!("{v:.4}"));
    let mut header = format!("{:>4} {:>8}", "c_s", "truth");
    for m in &r.config.methods {
        header += &format!(" {:>18}", m.to_string());
    }
    println!("{header}");
    for row in &r.rows {
        let mut line = format!("{:>4} {:>8.4}", row.c_s, row.tau_true);
        for m in &r.config.methods {
            let s = row.method(*m);
            let cell = format!("{} ± {}", fmt(s.and_then(|s| s.mean)), fmt(s.and_then(|s| s.std)));
            line += &format!(" {cell:>18}");
        }
        println!("{line}");
    }
    println!("accumulated distance Δ:");
    for d in &r.delta {
        println!("  {:>5} - {:<5} {:.6e}", d.a.to_string(), d.b.to_string(), d.delta);
    }
    if let (Some(n), Some(w)) = (r.ann_within_class, r.class_width) {
        println!("ANN within one class width ({w}) of the truth for {n} of {} c_s", r.rows.len());
    }
}

fn plotdata(ctx: &Ctx, a: &args::Plotdata) -> Result<Run> {
    let dir = ctx.out()?.to_path_buf();
    if a.bench.is_none() && a.training.is_none() && a.sweep.is_none() {
        return Err(Error::InvalidParams("give at least one of --bench, --training, --sweep".into()));
    }
    let mut run = Run::default();
    let mut series: Vec<Series> = Vec::new();
    if let Some(p) = &a.bench {
        let report: BenchReport = serde_json::from_str(&read_text(p)?)?;
        series.extend(depth_series(&report));
        series.push(delta_series(&report));
        run.inputs.push(p.clone());
    }
    if let Some(p) = &a.training {
        let (ts, path) = load_training(p)?;
        series.extend(training_series(&ts));
        run.inputs.push(path);
    }
    if let Some(p) = &a.sweep {
        let entries: Vec<SweepEntry> = serde_json::from_str(&read_text(p)?)?;
        series.push(sweep_series(&entries));
        run.inputs.push(p.clone());
    }
    for s in &series {
        let path = dir.join(s.file_name());
        write_text(&path, &s.to_csv()?)?;
        run.outputs.push(path);
    }
    log::info!("wrote {} series to {}", series.len(), dir.display());
    Ok(run)
}
