use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bench::{BenchReport, Method};
use crate::ann::{SweepEntry, TrainingSet};
use crate::error::{Error, Result};

/// A named numeric table written as CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Series {
    pub fn new(name: impl Into<String>, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    /// Empty cells stand for missing values (NaN).
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(|v| if v.is_nan() { String::new() } else { v.to_string() }))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_csv(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let columns: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| if f.is_empty() { Ok(f64::NAN) } else { f.parse::<f64>().map_err(|_| Error::Parse(format!("bad number '{f}'"))) })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != columns.len() {
                return Err(Error::DimensionMismatch(format!("row of {} fields under {} columns", row.len(), columns.len())));
            }
            rows.push(row);
        }
        Ok(Self { name: name.into(), columns, rows })
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }
}

/// Depth against signal photocount, one series per method with columns
/// `c_s,tau,tau_err` (replica mean and standard deviation; the truth has zero
/// error).
pub fn depth_series(report: &BenchReport) -> Vec<Series> {
    let mut truth = Series::new("depth_truth", &["c_s", "tau", "tau_err"]);
    for row in &report.rows {
        truth.rows.push(vec![row.c_s as f64, row.tau_true, 0.0]);
    }
    let mut out = vec![truth];
    for &m in &report.config.methods {
        let mut s = Series::new(format!("depth_{m}"), &["c_s", "tau", "tau_err"]);
        for row in &report.rows {
            if let Some(summary) = row.method(m) {
                s.rows.push(vec![row.c_s as f64, summary.mean.unwrap_or(f64::NAN), summary.std.unwrap_or(f64::NAN)]);
            }
        }
        out.push(s);
    }
    out
}

/// Pairwise accumulated distances with columns `a,b,delta` where methods are
/// coded truth 0, ann 1, em 2, fit 3.
pub fn delta_series(report: &BenchReport) -> Series {
    let code = |m: Method| match m {
        Method::Truth => 0.0,
        Method::Ann => 1.0,
        Method::Em => 2.0,
        Method::Fit => 3.0,
    };
    let mut s = Series::new("delta", &["a", "b", "delta"]);
    for d in &report.delta {
        s.rows.push(vec![code(d.a), code(d.b), d.delta]);
    }
    s
}

/// Training-grid depth against pair intensity, one series per family and
/// signal photocount, columns `b_p,tau`.
pub fn training_series(ts: &TrainingSet) -> Vec<Series> {
    let mut groups: BTreeMap<(usize, usize), BTreeMap<u64, f64>> = BTreeMap::new();
    for s in &ts.samples {
        groups.entry((s.family, s.c_s)).or_default().insert(s.b_p.to_bits(), s.tau_true);
    }
    groups
        .into_iter()
        .map(|((family, c_s), points)| {
            let mut s = Series::new(format!("tau_vs_bp_f{family}_cs{c_s}"), &["b_p", "tau"]);
            let mut rows: Vec<Vec<f64>> = points.into_iter().map(|(b, t)| vec![f64::from_bits(b), t]).collect();
            rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
            s.rows = rows;
            s
        })
        .collect()
}

/// Validation metrics against architecture, columns
/// `layers,neurons,n_params,val_loss,val_accuracy,noisy_accuracy`.
/// Uniform-width architectures only; the width is that of the first layer.
pub fn sweep_series(entries: &[SweepEntry]) -> Series {
    let mut s = Series::new("sweep", &["layers", "neurons", "n_params", "val_loss", "val_accuracy", "noisy_accuracy"]);
    for e in entries {
        s.rows.push(vec![
            e.hidden.len() as f64,
            e.hidden.first().copied().unwrap_or(0) as f64,
            e.n_params as f64,
            e.val_loss,
            e.val_accuracy,
            e.noisy_accuracy.unwrap_or(f64::NAN),
        ]);
    }
    s
}
