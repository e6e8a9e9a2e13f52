use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ann::{classify, input_from_histogram, MlpModel};
use crate::error::{Error, Result};
use crate::nonclassicality::{default_m_eff, ncd_max, witness_set, NcdSource, WitnessKind};
use crate::photostats::{
    conditional_idler_pnd, detection_matrix, forward_joint, sample_histogram, sample_joint_histogram, twin_beam_joint,
    DetectionMatrix, DetectorParams, Distribution, JointDistribution, TwinBeamParams, TAIL_TOL,
};
use crate::reconstruct::{em_iterate, fit_twin_beam, EmConfig, FitConfig};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Truth,
    Ann,
    Em,
    Fit,
}

impl Method {
    pub const ESTIMATORS: [Method; 3] = [Method::Ann, Method::Em, Method::Fit];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Truth => "truth",
            Method::Ann => "ann",
            Method::Em => "em",
            Method::Fit => "fit",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "truth" => Ok(Self::Truth),
            "ann" => Ok(Self::Ann),
            "em" => Ok(Self::Em),
            "fit" => Ok(Self::Fit),
            other => Err(Error::Parse(format!("unknown method '{other}' (expected ann, em or fit)"))),
        }
    }
}

/// Comparison of depth estimators on simulated post-selected histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub source: TwinBeamParams,
    pub det_s: DetectorParams,
    pub det_i: DetectorParams,
    pub c_s: Vec<usize>,
    /// Frames in each simulated post-selected idler histogram.
    pub frames: u64,
    /// Frames in the joint histogram handed to the twin-beam fit.
    pub joint_frames: u64,
    pub replicas: usize,
    pub methods: Vec<Method>,
    pub kind: WitnessKind,
    pub max_order: usize,
    pub em: EmConfig,
    pub fit: FitConfig,
    /// Starting point of the fit; the true source when absent.
    pub fit_init: Option<TwinBeamParams>,
    /// Feed the exact histograms to every method instead of sampled ones.
    #[serde(default)]
    pub noiseless: bool,
    pub seed: u64,
}

impl BenchConfig {
    pub fn reference(seed: u64) -> Self {
        Self {
            source: TwinBeamParams::reference(),
            det_s: DetectorParams::reference_signal(),
            det_i: DetectorParams::reference_idler(),
            c_s: (2..=9).collect(),
            frames: 10_000,
            joint_frames: 1_200_000,
            replicas: 10,
            methods: vec![Method::Ann, Method::Em, Method::Fit],
            kind: WitnessKind::Intensity,
            max_order: 3,
            em: EmConfig { max_iter: 10_000, ..EmConfig::default() },
            fit: FitConfig { restarts: 3, seed, ..FitConfig::default() },
            fit_init: None,
            noiseless: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.source.validate()?;
        self.det_s.validate()?;
        self.det_i.validate()?;
        self.em.validate()?;
        if self.frames == 0 {
            return Err(Error::InvalidParams("frames must be positive".into()));
        }
        if self.methods.contains(&Method::Fit) && self.joint_frames == 0 {
            return Err(Error::InvalidParams("joint_frames must be positive".into()));
        }
        if self.c_s.is_empty() {
            return Err(Error::InvalidParams("no signal photocounts to post-select on".into()));
        }
        if self.replicas == 0 {
            return Err(Error::InvalidParams("replicas must be positive".into()));
        }
        if self.methods.contains(&Method::Truth) {
            return Err(Error::InvalidParams("truth is always computed; list only ann, em and fit".into()));
        }
        Ok(())
    }
}

/// One depth estimate; `tau` is absent when the method failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// EM only: whether the stopping rule was met.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converged: Option<bool>,
}

impl Estimate {
    fn ok(tau: f64) -> Self {
        Self { tau: Some(tau), error: None, converged: None }
    }

    fn failed(e: &Error) -> Self {
        Self { tau: None, error: Some(e.to_string()), converged: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean: Option<f64>,
    /// Sample standard deviation over successful replicas.
    pub std: Option<f64>,
    pub failures: usize,
    pub estimates: Vec<Estimate>,
}

impl MethodSummary {
    fn new(method: Method, estimates: Vec<Estimate>) -> Self {
        let ok: Vec<f64> = estimates.iter().filter_map(|e| e.tau).collect();
        let mean = (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64);
        let std = mean.filter(|_| ok.len() > 1).map(|m| {
            (ok.iter().map(|t| (t - m).powi(2)).sum::<f64>() / (ok.len() - 1) as f64).sqrt()
        });
        let failures = estimates.len() - ok.len();
        Self { method, mean, std, failures, estimates }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub c_s: usize,
    pub tau_true: f64,
    pub post_selection_probability: f64,
    pub methods: Vec<MethodSummary>,
}

impl BenchRow {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// Replica `r` of method `m`; the truth is the same for every replica.
    fn tau(&self, m: Method, r: usize) -> Option<f64> {
        match m {
            Method::Truth => Some(self.tau_true),
            _ => self.method(m)?.estimates.get(r)?.tau,
        }
    }
}

/// Accumulated squared distance between two methods,
/// `Δ = (1/R) Σ_r Σ_{c_s} (τ_a − τ_b)²` over the terms where both succeeded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaEntry {
    pub a: Method,
    pub b: Method,
    pub delta: f64,
    pub terms: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub rows: Vec<BenchRow>,
    pub delta: Vec<DeltaEntry>,
    /// Class width of the classifier, when the ANN took part.
    pub class_width: Option<f64>,
    /// Number of `c_s` whose mean ANN depth lies within one class width of
    /// the truth.
    pub ann_within_class: Option<usize>,
    /// Failures of the twin-beam fit, one per failed replica.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fit_failures: Vec<String>,
}

impl BenchReport {
    pub fn delta(&self, a: Method, b: Method) -> Option<&DeltaEntry> {
        self.delta.iter().find(|d| (d.a, d.b) == (a, b) || (d.a, d.b) == (b, a))
    }

    /// `c_s,tau_true,<method>_mean,<method>_std,<method>_failures,...`
    pub fn table_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["c_s".to_string(), "tau_true".to_string(), "post_selection_probability".to_string()];
        for m in &self.config.methods {
            header.extend([format!("{m}_mean"), format!("{m}_std"), format!("{m}_failures")]);
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![row.c_s.to_string(), row.tau_true.to_string(), row.post_selection_probability.to_string()];
            for m in &self.config.methods {
                let s = row.method(*m);
                rec.push(opt(s.and_then(|s| s.mean)));
                rec.push(opt(s.and_then(|s| s.std)));
                rec.push(s.map_or(0, |s| s.failures).to_string());
            }
            w.write_record(&rec)?;
        }
        finish(w)
    }

    pub fn delta_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["a", "b", "delta", "terms", "skipped"])?;
        for d in &self.delta {
            w.write_record([d.a.to_string(), d.b.to_string(), d.delta.to_string(), d.terms.to_string(), d.skipped.to_string()])?;
        }
        finish(w)
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Exact joint photocount distribution of a twin beam seen by two detectors.
pub fn joint_photocounts(source: &TwinBeamParams, det_s: &DetectorParams, det_i: &DetectorParams) -> Result<JointDistribution> {
    let joint = twin_beam_joint(source, None, TAIL_TOL)?;
    let (ns, ni) = joint.cutoffs();
    let t_s = DetectionMatrix::auto(det_s, ns, TAIL_TOL)?;
    let t_i = DetectionMatrix::auto(det_i, ni, TAIL_TOL)?;
    forward_joint(&t_s, &t_i, &joint)
}

/// Exact photocount distribution of a photon-number distribution `p`.
pub fn idler_photocounts(p: &Distribution, det: &DetectorParams) -> Result<Distribution> {
    DetectionMatrix::auto(det, p.cutoff(), TAIL_TOL)?.forward(p)
}

/// Depth of a photon-number distribution with the default effective mode
/// number (`fallback` for sub-Poissonian input).
pub fn depth_of(p: &Distribution, kind: WitnessKind, max_order: usize, fallback: f64) -> Result<f64> {
    let source = NcdSource::from(p.clone());
    let m_eff = default_m_eff(&source, fallback)?;
    Ok(ncd_max(&source, &witness_set(max_order)?, m_eff, kind)?.tau_max)
}

/// Photon-number support used to reconstruct a histogram reaching `c_max`:
/// half again the efficiency-corrected count range, plus a margin.
pub fn reconstruction_cutoff(det: &DetectorParams, c_max: usize) -> usize {
    ((c_max + 1) as f64 / det.eta.max(1e-3) * 1.5).ceil() as usize + 20
}

fn em_depth(h: &Distribution, cfg: &BenchConfig, fallback: f64) -> Estimate {
    let run = || -> Result<(f64, bool)> {
        let last = h.probs().iter().rposition(|&p| p > 0.0).unwrap_or(0);
        let trimmed = match h.counts() {
            Some(c) => Distribution::from_counts(c[..=last].to_vec())?,
            None => Distribution::normalized(h.probs()[..=last].to_vec())?,
        };
        let t = detection_matrix(&cfg.det_i, last, reconstruction_cutoff(&cfg.det_i, last))?;
        let em = em_iterate(&trimmed, &t, &cfg.em)?;
        Ok((depth_of(&em.distribution, cfg.kind, cfg.max_order, fallback)?, em.converged))
    };
    match run() {
        Ok((tau, converged)) => Estimate { converged: Some(converged), ..Estimate::ok(tau) },
        Err(e) => Estimate::failed(&e),
    }
}

/// Run the benchmark.
///
/// For every `c_s` the exact post-selected idler distribution gives the
/// true depth; replica `r` then simulates a `frames`-frame idler histogram
/// (seed stream `k·replicas + r` for the `k`-th `c_s`) that the ANN
/// classifies and EM reconstructs. The fit works on replica-specific joint
/// histograms of `joint_frames` frames and derives every `c_s` from the
/// fitted source. A failing estimate is recorded, not fatal.
pub fn cmd_bench(cfg: &BenchConfig, model: Option<&MlpModel>) -> Result<BenchReport> {
    cfg.validate()?;
    let scheme = if cfg.methods.contains(&Method::Ann) {
        let m = model.ok_or_else(|| Error::InvalidParams("the ann method needs a trained model".into()))?;
        m.validate()?;
        Some(m.scheme.ok_or_else(|| Error::InvalidParams("model has no class scheme".into()))?)
    } else {
        None
    };
    let fallback = cfg.source.m_p + cfg.source.m_i;

    struct Slice {
        c_s: usize,
        tau_true: f64,
        post: f64,
        histogram: Distribution,
    }
    let slices = cfg
        .c_s
        .par_iter()
        .map(|&c_s| {
            let cond = conditional_idler_pnd(&cfg.source, &cfg.det_s, c_s, None)?;
            let tau_true = depth_of(&cond.distribution, cfg.kind, cfg.max_order, fallback)?;
            let histogram = idler_photocounts(&cond.distribution, &cfg.det_i)?;
            Ok(Slice { c_s, tau_true, post: cond.post_selection_probability, histogram })
        })
        .collect::<Result<Vec<_>>>()?;

    let replicas = cfg.replicas;
    let jobs: Vec<(usize, usize)> = (0..slices.len()).flat_map(|k| (0..replicas).map(move |r| (k, r))).collect();
    let per_job: Vec<(Option<Estimate>, Option<Estimate>)> = jobs
        .par_iter()
        .map(|&(k, r)| {
            let s = &slices[k];
            let sampled = if cfg.noiseless {
                Ok(s.histogram.clone())
            } else {
                sample_histogram(&s.histogram, cfg.frames, derive_seed(cfg.seed, (k * replicas + r) as u64))
            };
            let h = match sampled {
                Ok(h) => h,
                Err(e) => return (Some(Estimate::failed(&e)), Some(Estimate::failed(&e))),
            };
            let ann = match (model, &scheme) {
                (Some(m), Some(sc)) => Some(match classify(m, &input_from_histogram(h.probs()), sc) {
                    Ok(c) => Estimate::ok(c.tau),
                    Err(e) => Estimate::failed(&e),
                }),
                _ => None,
            };
            let em = cfg.methods.contains(&Method::Em).then(|| em_depth(&h, cfg, fallback));
            (ann, em)
        })
        .collect();

    let mut fit_failures = Vec::new();
    let fit: Option<Vec<Vec<Estimate>>> = if cfg.methods.contains(&Method::Fit) {
        let runs = fit_replicas(cfg, fallback)?;
        for r in &runs {
            if let Err(e) = r {
                fit_failures.push(e.clone());
            }
        }
        Some(
            (0..slices.len())
                .map(|k| {
                    runs.iter()
                        .map(|r| match r {
                            Ok(taus) => taus[k].clone(),
                            Err(e) => Estimate { tau: None, error: Some(e.clone()), converged: None },
                        })
                        .collect()
                })
                .collect(),
        )
    } else {
        None
    };

    let rows: Vec<BenchRow> = slices
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let jobs = &per_job[k * replicas..(k + 1) * replicas];
            let methods = cfg
                .methods
                .iter()
                .map(|&m| {
                    let est: Vec<Estimate> = match m {
                        Method::Ann => jobs.iter().filter_map(|j| j.0.clone()).collect(),
                        Method::Em => jobs.iter().filter_map(|j| j.1.clone()).collect(),
                        Method::Fit => fit.as_ref().map(|f| f[k].clone()).unwrap_or_default(),
                        Method::Truth => Vec::new(),
                    };
                    MethodSummary::new(m, est)
                })
                .collect();
            BenchRow { c_s: s.c_s, tau_true: s.tau_true, post_selection_probability: s.post, methods }
        })
        .collect();

    let mut all = vec![Method::Truth];
    all.extend(Method::ESTIMATORS.iter().filter(|m| cfg.methods.contains(m)));
    let mut delta = Vec::new();
    for (i, &a) in all.iter().enumerate() {
        for &b in &all[i + 1..] {
            delta.push(accumulated_distance(&rows, a, b, replicas));
        }
    }

    let class_width = scheme.map(|s| s.width());
    let ann_within_class = class_width.map(|w| {
        rows.iter()
            .filter(|row| row.method(Method::Ann).and_then(|s| s.mean).is_some_and(|m| (m - row.tau_true).abs() <= w))
            .count()
    });
    Ok(BenchReport { config: cfg.clone(), rows, delta, class_width, ann_within_class, fit_failures })
}

fn accumulated_distance(rows: &[BenchRow], a: Method, b: Method, replicas: usize) -> DeltaEntry {
    let (mut sum, mut terms, mut skipped) = (0.0, 0, 0);
    for r in 0..replicas {
        for row in rows {
            match (row.tau(a, r), row.tau(b, r)) {
                (Some(x), Some(y)) => {
                    sum += (x - y).powi(2);
                    terms += 1;
                }
                _ => skipped += 1,
            }
        }
    }
    DeltaEntry { a, b, delta: sum / replicas as f64, terms, skipped }
}

/// Per replica: fitted-source depths for every `c_s`, or the fit error.
fn fit_replicas(cfg: &BenchConfig, fallback: f64) -> Result<Vec<std::result::Result<Vec<Estimate>, String>>> {
    let model = joint_photocounts(&cfg.source, &cfg.det_s, &cfg.det_i)?;
    let init = cfg.fit_init.unwrap_or(cfg.source);
    let stream0 = (cfg.c_s.len() * cfg.replicas) as u64;
    Ok((0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let run = || -> Result<Vec<Estimate>> {
                let seed = derive_seed(cfg.seed, stream0 + r as u64);
                let h = if cfg.noiseless { model.clone() } else { sample_joint_histogram(&model, cfg.joint_frames, seed)? };
                let fit_cfg = FitConfig { seed: derive_seed(cfg.fit.seed, r as u64), ..cfg.fit.clone() };
                let fitted = fit_twin_beam(&h, &cfg.det_s, &cfg.det_i, &init, &fit_cfg)?;
                Ok(cfg
                    .c_s
                    .iter()
                    .map(|&c_s| {
                        let tau = conditional_idler_pnd(&fitted.params, &cfg.det_s, c_s, None)
                            .and_then(|c| depth_of(&c.distribution, cfg.kind, cfg.max_order, fallback));
                        match tau {
                            Ok(t) => Estimate::ok(t),
                            Err(e) => Estimate::failed(&e),
                        }
                    })
                    .collect())
            };
            run().map_err(|e| e.to_string())
        })
        .collect())
}
