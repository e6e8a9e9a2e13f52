//! File formats: distributions and histograms as CSV or JSON, detector and
//! source parameters as TOML.
//!
//! CSV distributions have the header `index,probability[,count]`, joint ones
//! `index,index2,probability[,count]` with every cell listed row-major. JSON
//! distributions are objects with `probs` and optional `counts`,
//! `n_frames` and `meta`. Floats are written in shortest round-trip form, so
//! read-then-write reproduces a file byte for byte.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photostats::{DarkCountConvention, DetectorParams, Distribution, JointDistribution, TwinBeamParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    /// `.json` means JSON; anything else is read as CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Self::Json,
            _ => Self::Csv,
        }
    }
}

/// JSON layout shared by one- and two-dimensional distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionFile {
    pub probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_frames: Option<u64>,
    /// `[rows, cols]` of a joint distribution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta: Option<serde_json::Value>,
}

impl DistributionFile {
    pub fn from_distribution(d: &Distribution, meta: Option<serde_json::Value>) -> Self {
        Self {
            probs: d.probs().to_vec(),
            counts: d.counts().map(<[u64]>::to_vec),
            n_frames: d.n_frames(),
            shape: None,
            meta,
        }
    }

    pub fn from_joint(j: &JointDistribution, meta: Option<serde_json::Value>) -> Self {
        let (rows, cols) = j.shape();
        Self {
            probs: j.probs().to_vec(),
            counts: j.counts().map(<[u64]>::to_vec),
            n_frames: j.n_frames(),
            shape: Some([rows, cols]),
            meta,
        }
    }

    /// Histograms are rebuilt from their counts; plain distributions must be
    /// normalized to within the default tail tolerance.
    pub fn to_distribution(&self) -> Result<Distribution> {
        if self.shape.is_some_and(|[r, _]| r != 1) {
            return Err(Error::DimensionMismatch("expected a one-dimensional distribution, found a joint one".into()));
        }
        let d = match &self.counts {
            Some(c) => {
                check_len(c.len(), self.probs.len())?;
                Distribution::from_counts(c.clone())?
            }
            None => Distribution::new(self.probs.clone())?,
        };
        check_frames(self.n_frames, d.n_frames())?;
        Ok(d)
    }

    pub fn to_joint(&self) -> Result<JointDistribution> {
        let [rows, cols] = self
            .shape
            .ok_or_else(|| Error::Parse("joint distribution needs a \"shape\": [rows, cols] field".into()))?;
        check_len(rows * cols, self.probs.len())?;
        let j = match &self.counts {
            Some(c) => {
                check_len(c.len(), self.probs.len())?;
                JointDistribution::from_counts(c.clone(), rows, cols)?
            }
            None => JointDistribution::new(self.probs.clone(), rows, cols)?,
        };
        check_frames(self.n_frames, j.n_frames())?;
        Ok(j)
    }
}

fn check_len(found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::DimensionMismatch(format!("{found} entries where {expected} were expected")));
    }
    Ok(())
}

fn check_frames(stated: Option<u64>, counted: Option<u64>) -> Result<()> {
    match (stated, counted) {
        (Some(a), Some(b)) if a != b => Err(Error::Parse(format!("n_frames is {a} but the counts sum to {b}"))),
        (Some(_), None) => Err(Error::Parse("n_frames given without counts".into())),
        _ => Ok(()),
    }
}

pub fn distribution_to_csv(d: &Distribution) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    match d.counts() {
        Some(counts) => {
            w.write_record(["index", "probability", "count"])?;
            for (i, (p, c)) in d.probs().iter().zip(counts).enumerate() {
                w.write_record([i.to_string(), p.to_string(), c.to_string()])?;
            }
        }
        None => {
            w.write_record(["index", "probability"])?;
            for (i, p) in d.probs().iter().enumerate() {
                w.write_record([i.to_string(), p.to_string()])?;
            }
        }
    }
    finish(w)
}

pub fn joint_to_csv(j: &JointDistribution) -> Result<String> {
    let (rows, cols) = j.shape();
    let mut w = csv::Writer::from_writer(Vec::new());
    let counts = j.counts();
    if counts.is_some() {
        w.write_record(["index", "index2", "probability", "count"])?;
    } else {
        w.write_record(["index", "index2", "probability"])?;
    }
    for s in 0..rows {
        for i in 0..cols {
            let k = s * cols + i;
            let mut rec = vec![s.to_string(), i.to_string(), j.probs()[k].to_string()];
            if let Some(c) = counts {
                rec.push(c[k].to_string());
            }
            w.write_record(&rec)?;
        }
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Parsed CSV rows: `(index, index2, probability, count)`.
struct CsvTable {
    joint: bool,
    has_counts: bool,
    rows: Vec<(usize, usize, f64, u64)>,
}

fn parse_table(text: &str) -> Result<CsvTable> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let idx = col("index").ok_or_else(|| Error::Parse("CSV header lacks an 'index' column".into()))?;
    let prob = col("probability").ok_or_else(|| Error::Parse("CSV header lacks a 'probability' column".into()))?;
    let idx2 = col("index2");
    let count = col("count");
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).ok_or_else(|| Error::Parse(format!("row {}: missing field", line + 2)));
        let bad = |what: &str, v: &str| Error::Parse(format!("row {}: bad {what} '{v}'", line + 2));
        let i = field(idx)?.parse::<usize>().map_err(|_| bad("index", &rec[idx]))?;
        let i2 = match idx2 {
            Some(k) => field(k)?.parse::<usize>().map_err(|_| bad("index2", &rec[k]))?,
            None => 0,
        };
        let p = field(prob)?.parse::<f64>().map_err(|_| bad("probability", &rec[prob]))?;
        let c = match count {
            Some(k) => field(k)?.parse::<u64>().map_err(|_| bad("count", &rec[k]))?,
            None => 0,
        };
        rows.push((i, i2, p, c));
    }
    if rows.is_empty() {
        return Err(Error::Parse("CSV has no data rows".into()));
    }
    Ok(CsvTable { joint: idx2.is_some(), has_counts: count.is_some(), rows })
}

/// Missing indices are zero; repeated indices are rejected.
fn scatter<T: Copy + Default>(len: usize, items: impl Iterator<Item = (usize, T)>) -> Result<Vec<T>> {
    let mut out = vec![T::default(); len];
    let mut seen = vec![false; len];
    for (k, v) in items {
        if std::mem::replace(&mut seen[k], true) {
            return Err(Error::Parse(format!("cell {k} appears twice")));
        }
        out[k] = v;
    }
    Ok(out)
}

pub fn distribution_from_csv(text: &str) -> Result<Distribution> {
    let t = parse_table(text)?;
    if t.joint {
        return Err(Error::DimensionMismatch("expected a one-dimensional distribution, found index2".into()));
    }
    let len = t.rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
    if t.has_counts {
        Distribution::from_counts(scatter(len, t.rows.iter().map(|r| (r.0, r.3)))?)
    } else {
        Distribution::new(scatter(len, t.rows.iter().map(|r| (r.0, r.2)))?)
    }
}

pub fn joint_from_csv(text: &str) -> Result<JointDistribution> {
    let t = parse_table(text)?;
    if !t.joint {
        return Err(Error::Parse("joint distribution needs an 'index2' column".into()));
    }
    let rows = t.rows.iter().map(|r| r.0).max().unwrap_or(0) + 1;
    let cols = t.rows.iter().map(|r| r.1).max().unwrap_or(0) + 1;
    let cells = t.rows.iter().map(|r| (r.0 * cols + r.1, r));
    if t.has_counts {
        JointDistribution::from_counts(scatter(rows * cols, cells.map(|(k, r)| (k, r.3)))?, rows, cols)
    } else {
        JointDistribution::new(scatter(rows * cols, cells.map(|(k, r)| (k, r.2)))?, rows, cols)
    }
}

pub fn distribution_to_json(d: &Distribution, meta: Option<serde_json::Value>) -> Result<String> {
    Ok(serde_json::to_string_pretty(&DistributionFile::from_distribution(d, meta))? + "\n")
}

pub fn joint_to_json(j: &JointDistribution, meta: Option<serde_json::Value>) -> Result<String> {
    Ok(serde_json::to_string_pretty(&DistributionFile::from_joint(j, meta))? + "\n")
}

pub fn read_distribution(path: &Path) -> Result<Distribution> {
    let text = read_text(path)?;
    match Format::from_path(path) {
        Format::Json => serde_json::from_str::<DistributionFile>(&text)?.to_distribution(),
        Format::Csv => distribution_from_csv(&text),
    }
}

pub fn read_joint(path: &Path) -> Result<JointDistribution> {
    let text = read_text(path)?;
    match Format::from_path(path) {
        Format::Json => serde_json::from_str::<DistributionFile>(&text)?.to_joint(),
        Format::Csv => joint_from_csv(&text),
    }
}

pub fn write_distribution(path: &Path, d: &Distribution, meta: Option<serde_json::Value>) -> Result<()> {
    let text = match Format::from_path(path) {
        Format::Json => distribution_to_json(d, meta)?,
        Format::Csv => distribution_to_csv(d)?,
    };
    write_text(path, &text)
}

pub fn write_joint(path: &Path, j: &JointDistribution, meta: Option<serde_json::Value>) -> Result<()> {
    let text = match Format::from_path(path) {
        Format::Json => joint_to_json(j, meta)?,
        Format::Csv => joint_to_csv(j)?,
    };
    write_text(path, &text)
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Write, creating parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Detector parameters as written in configuration files: `d` is read
/// according to `d_convention` (per region of interest unless stated).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub eta: f64,
    pub d: f64,
    #[serde(default)]
    pub d_convention: DarkCountConvention,
    pub n_pix: u64,
}

impl DetectorSpec {
    pub fn params(&self) -> Result<DetectorParams> {
        DetectorParams::with_convention(self.eta, self.d, self.d_convention, self.n_pix)
    }

    pub fn reference_signal() -> Self {
        Self { eta: 0.228, d: 0.206, d_convention: DarkCountConvention::PerRoi, n_pix: 6528 }
    }

    pub fn reference_idler() -> Self {
        Self { eta: 0.223, d: 0.214, d_convention: DarkCountConvention::PerRoi, n_pix: 6784 }
    }
}

pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
}

pub fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Parse(e.to_string()))
}

/// A detector file holds the four detector keys at top level.
pub fn read_detector(path: &Path) -> Result<DetectorParams> {
    parse_toml::<DetectorSpec>(&read_text(path)?)?.params()
}

/// A source file holds `m_p, m_s, m_i, b_p, b_s, b_i` at top level.
pub fn read_source(path: &Path) -> Result<TwinBeamParams> {
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Source {
        m_p: f64,
        m_s: f64,
        m_i: f64,
        b_p: f64,
        b_s: f64,
        b_i: f64,
    }
    let s: Source = parse_toml(&read_text(path)?)?;
    TwinBeamParams::new(s.m_p, s.m_s, s.m_i, s.b_p, s.b_s, s.b_i)
}
