use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bench::{BenchConfig, Method};
use crate::ann::{linspace, ClassScheme, SourceFamily, TrainingConfig};
use crate::error::{Error, Result};
use crate::io::{parse_toml, read_text, DetectorSpec};
use crate::nonclassicality::WitnessKind;
use crate::photostats::{DetectorParams, TwinBeamParams};
use crate::reconstruct::{EmConfig, FitConfig};

/// Pipeline configuration file. Every section is optional; missing values
/// fall back to the experimental source and detectors.
///
/// ```toml
/// seed = 7
/// [source]
/// m_p = 270.0
/// m_s = 0.01
/// m_i = 0.026
/// b_p = 0.032
/// b_s = 7.6
/// b_i = 5.3
/// [signal]
/// eta = 0.228
/// d = 0.206
/// d_convention = "per_roi"
/// n_pix = 6528
/// [bench]
/// frames = 10000
/// methods = ["ann", "em"]
/// ```
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub source: Option<TwinBeamParams>,
    pub signal: Option<DetectorSpec>,
    pub idler: Option<DetectorSpec>,
    pub simulate: Option<SimulateSection>,
    pub training: Option<TrainingSection>,
    pub bench: Option<BenchSection>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub frames: Option<u64>,
    pub c_s: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    /// `"intensity"` or `"probability"`: start from the built-in grid for that
    /// witness kind, then apply the remaining keys.
    pub preset: Option<WitnessKind>,
    pub kind: Option<WitnessKind>,
    pub max_order: Option<usize>,
    pub per_class: Option<usize>,
    /// Zero keeps the exact histograms.
    pub noise_frames: Option<u64>,
    pub classes: Option<usize>,
    /// `"min:max"` depth range of the classes.
    pub range: Option<String>,
    pub families: Option<Vec<FamilySection>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySection {
    pub source: Option<TwinBeamParams>,
    pub signal: Option<DetectorSpec>,
    pub c_s: Vec<usize>,
    pub b_p_grid: Option<Vec<f64>>,
    /// `[from, to, n]`, appended to `b_p_grid`.
    pub b_p_linspace: Option<(f64, f64, usize)>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSection {
    pub c_s: Option<Vec<usize>>,
    pub frames: Option<u64>,
    pub joint_frames: Option<u64>,
    pub replicas: Option<usize>,
    pub methods: Option<Vec<Method>>,
    pub kind: Option<WitnessKind>,
    pub max_order: Option<usize>,
    pub em_max_iter: Option<usize>,
    pub em_tol: Option<f64>,
    pub fit_restarts: Option<usize>,
    pub fit_max_evals: Option<usize>,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        parse_toml(text)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&read_text(path)?)
    }

    /// An explicit seed wins over the configured one; zero otherwise.
    pub fn seed_or(&self, explicit: Option<u64>) -> u64 {
        explicit.or(self.seed).unwrap_or(0)
    }

    pub fn source(&self) -> Result<TwinBeamParams> {
        let s = self.source.unwrap_or_else(TwinBeamParams::reference);
        s.validate()?;
        Ok(s)
    }

    pub fn det_s(&self) -> Result<DetectorParams> {
        self.signal.unwrap_or_else(DetectorSpec::reference_signal).params()
    }

    pub fn det_i(&self) -> Result<DetectorParams> {
        self.idler.unwrap_or_else(DetectorSpec::reference_idler).params()
    }

    pub fn training_config(&self, seed: u64) -> Result<TrainingConfig> {
        let t = self.training.clone().unwrap_or_default();
        let mut cfg = match t.preset.unwrap_or(WitnessKind::Intensity) {
            WitnessKind::Intensity => TrainingConfig::desk_intensity(seed),
            WitnessKind::Probability => TrainingConfig::desk_probability(seed),
        };
        cfg.det_i = self.det_i()?;
        if let Some(k) = t.kind {
            cfg.kind = k;
        }
        if let Some(o) = t.max_order {
            cfg.max_order = o;
        }
        if let Some(n) = t.per_class {
            cfg.per_class = n;
        }
        if let Some(f) = t.noise_frames {
            cfg.noise_frames = (f > 0).then_some(f);
        }
        let n_classes = t.classes.unwrap_or(cfg.scheme.n_classes);
        cfg.scheme = match &t.range {
            Some(r) => ClassScheme::parse_range(r, n_classes)?,
            None => ClassScheme::new(cfg.scheme.tau_min, cfg.scheme.tau_max, n_classes)?,
        };
        if let Some(fams) = &t.families {
            cfg.families = fams
                .iter()
                .map(|f| {
                    let mut grid = f.b_p_grid.clone().unwrap_or_default();
                    if let Some((a, b, n)) = f.b_p_linspace {
                        grid.extend(linspace(a, b, n));
                    }
                    if grid.is_empty() {
                        return Err(Error::InvalidParams("training family needs b_p_grid or b_p_linspace".into()));
                    }
                    Ok(SourceFamily {
                        base: match f.source {
                            Some(s) => s,
                            None => self.source()?,
                        },
                        det_s: match f.signal {
                            Some(d) => d.params()?,
                            None => self.det_s()?,
                        },
                        c_s: f.c_s.clone(),
                        b_p_grid: grid,
                    })
                })
                .collect::<Result<_>>()?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn bench_config(&self, seed: u64) -> Result<BenchConfig> {
        let b = self.bench.clone().unwrap_or_default();
        let mut cfg = BenchConfig::reference(seed);
        cfg.source = self.source()?;
        cfg.det_s = self.det_s()?;
        cfg.det_i = self.det_i()?;
        if let Some(v) = b.c_s {
            cfg.c_s = v;
        }
        if let Some(v) = b.frames {
            cfg.frames = v;
        }
        if let Some(v) = b.joint_frames {
            cfg.joint_frames = v;
        }
        if let Some(v) = b.replicas {
            cfg.replicas = v;
        }
        if let Some(v) = b.methods {
            cfg.methods = v;
        }
        if let Some(v) = b.kind {
            cfg.kind = v;
        }
        if let Some(v) = b.max_order {
            cfg.max_order = v;
        }
        cfg.em = EmConfig {
            max_iter: b.em_max_iter.unwrap_or(cfg.em.max_iter),
            rel_tol: b.em_tol.unwrap_or(cfg.em.rel_tol),
            ..cfg.em
        };
        cfg.fit = FitConfig {
            restarts: b.fit_restarts.unwrap_or(cfg.fit.restarts),
            max_evals: b.fit_max_evals.unwrap_or(cfg.fit.max_evals),
            ..cfg.fit
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
