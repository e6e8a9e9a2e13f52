//! Python bindings. Distributions cross the boundary as lists of floats,
//! matrices as lists of rows.

use noncls::ann::{classify, input_from_histogram, MlpModel};
use noncls::error::Error;
use noncls::nonclassicality::{default_m_eff, ncd_max, witness_set, NcdSource, WitnessKind, FALLBACK_M_EFF};
use noncls::photostats::{
    conditional_idler_pnd, detection_matrix, sample_histogram, DarkCountConvention, DetectorParams, Distribution,
    TwinBeamParams,
};
use noncls::pipeline::{idler_photocounts, joint_photocounts, reconstruction_cutoff};
use noncls::reconstruct::{em_iterate, EmConfig};
use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        3 => PyArithmeticError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for noncls::error::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn kind_of(kind: &str) -> PyResult<WitnessKind> {
    match kind {
        "intensity" => Ok(WitnessKind::Intensity),
        "probability" => Ok(WitnessKind::Probability),
        other => Err(PyValueError::new_err(format!("kind must be 'intensity' or 'probability', got {other:?}"))),
    }
}

/// Six-parameter twin-beam source.
#[pyclass(name = "TwinBeam", module = "noncls_py", frozen)]
struct PyTwinBeam(TwinBeamParams);

#[pymethods]
impl PyTwinBeam {
    #[new]
    fn new(m_p: f64, m_s: f64, m_i: f64, b_p: f64, b_s: f64, b_i: f64) -> PyResult<Self> {
        TwinBeamParams::new(m_p, m_s, m_i, b_p, b_s, b_i).py().map(Self)
    }

    #[staticmethod]
    fn reference() -> Self {
        Self(TwinBeamParams::reference())
    }

    fn as_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let p = &self.0;
        let d = PyDict::new(py);
        for (k, v) in [("m_p", p.m_p), ("m_s", p.m_s), ("m_i", p.m_i), ("b_p", p.b_p), ("b_s", p.b_s), ("b_i", p.b_i)] {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!("TwinBeam(m_p={}, m_s={}, m_i={}, b_p={}, b_s={}, b_i={})", p.m_p, p.m_s, p.m_i, p.b_p, p.b_s, p.b_i)
    }
}

/// Pixelated detector. `d` is per region of interest unless `per_pixel`.
#[pyclass(name = "Detector", module = "noncls_py", frozen)]
struct PyDetector(DetectorParams);

#[pymethods]
impl PyDetector {
    #[new]
    #[pyo3(signature = (eta, d, n_pix, per_pixel = false))]
    fn new(eta: f64, d: f64, n_pix: u64, per_pixel: bool) -> PyResult<Self> {
        let conv = if per_pixel { DarkCountConvention::PerPixel } else { DarkCountConvention::PerRoi };
        DetectorParams::with_convention(eta, d, conv, n_pix).py().map(Self)
    }

    #[staticmethod]
    fn reference_signal() -> Self {
        Self(DetectorParams::reference_signal())
    }

    #[staticmethod]
    fn reference_idler() -> Self {
        Self(DetectorParams::reference_idler())
    }

    /// Detection matrix as rows `T[c][n]`.
    fn matrix(&self, c_max: usize, n_max: usize) -> PyResult<Vec<Vec<f64>>> {
        let t = detection_matrix(&self.0, c_max, n_max).py()?;
        Ok((0..=c_max).map(|c| (0..=n_max).map(|n| t.get(c, n)).collect()).collect())
    }

    /// Photocount histogram produced by photon-number distribution `p`.
    fn forward(&self, p: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(idler_photocounts(&Distribution::new(p).py()?, &self.0).py()?.probs().to_vec())
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.0.eta
    }

    /// Per-pixel dark-count probability.
    #[getter]
    fn d(&self) -> f64 {
        self.0.d
    }

    #[getter]
    fn n_pix(&self) -> u64 {
        self.0.n_pix
    }
}

/// Idler photon-number distribution post-selected on `c_s` signal counts,
/// and the post-selection probability.
#[pyfunction]
fn conditional_idler(source: &PyTwinBeam, signal: &PyDetector, c_s: usize) -> PyResult<(Vec<f64>, f64)> {
    let c = conditional_idler_pnd(&source.0, &signal.0, c_s, None).py()?;
    Ok((c.distribution.probs().to_vec(), c.post_selection_probability))
}

/// Joint photocount distribution as rows `[c_s][c_i]`.
#[pyfunction]
fn joint_photocount_distribution(source: &PyTwinBeam, signal: &PyDetector, idler: &PyDetector) -> PyResult<Vec<Vec<f64>>> {
    let j = joint_photocounts(&source.0, &signal.0, &idler.0).py()?;
    let (rs, ri) = j.cutoffs();
    Ok((0..=rs).map(|s| (0..=ri).map(|i| j.get(s, i)).collect()).collect())
}

/// Multinomial histogram of `frames` draws from `p`, as relative frequencies.
#[pyfunction]
fn sample(p: Vec<f64>, frames: u64, seed: u64) -> PyResult<Vec<f64>> {
    Ok(sample_histogram(&Distribution::new(p).py()?, frames, seed).py()?.probs().to_vec())
}

/// EM reconstruction. Returns `(p, converged, iterations)`; not converging is
/// reported through the flag, not raised.
#[pyfunction]
#[pyo3(signature = (histogram, detector, n_max = None, max_iter = 100_000, rel_tol = 1e-10))]
fn reconstruct(
    histogram: Vec<f64>,
    detector: &PyDetector,
    n_max: Option<usize>,
    max_iter: usize,
    rel_tol: f64,
) -> PyResult<(Vec<f64>, bool, usize)> {
    let h = Distribution::new(histogram).py()?;
    let c_max = h.cutoff();
    let n_max = n_max.unwrap_or_else(|| reconstruction_cutoff(&detector.0, c_max));
    let t = detection_matrix(&detector.0, c_max, n_max).py()?;
    let r = em_iterate(&h, &t, &EmConfig { max_iter, rel_tol, ..EmConfig::default() }).py()?;
    Ok((r.distribution.probs().to_vec(), r.converged, r.iterations))
}

/// Nonclassicality depth of photon-number distribution `p`.
///
/// Returns a dict with `tau_max`, `m_eff`, `best_witness` and `per_witness`,
/// a list of `(index, value, tau, s_threshold)` with `index = (k, l, m, n)`.
#[pyfunction]
#[pyo3(signature = (p, kind = "intensity", max_order = 3, m_eff = None))]
fn ncd<'py>(py: Python<'py>, p: Vec<f64>, kind: &str, max_order: usize, m_eff: Option<f64>) -> PyResult<Bound<'py, PyDict>> {
    let kind = kind_of(kind)?;
    let source = NcdSource::from(Distribution::new(p).py()?);
    let m_eff = match m_eff {
        Some(m) => m,
        None => default_m_eff(&source, FALLBACK_M_EFF).py()?,
    };
    let r = ncd_max(&source, &witness_set(max_order).py()?, m_eff, kind).py()?;
    let idx = |w: &noncls::nonclassicality::WitnessIndex| (w.k, w.l, w.m, w.n);
    let d = PyDict::new(py);
    d.set_item("tau_max", r.tau_max)?;
    d.set_item("m_eff", r.m_eff)?;
    d.set_item("best_witness", idx(&r.best_witness))?;
    let per: Vec<_> = r.per_witness.iter().map(|w| (idx(&w.index), w.value, w.tau, w.s_threshold)).collect();
    d.set_item("per_witness", per)?;
    Ok(d)
}

/// Trained depth classifier.
#[pyclass(name = "Model", module = "noncls_py", frozen)]
struct PyModel(MlpModel);

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        MlpModel::from_json(text).py().map(Self)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        Self::from_json(&noncls::io::read_text(&path).py()?)
    }

    /// Class, depth (class midpoint) and class probabilities for a photocount histogram.
    fn classify(&self, histogram: Vec<f64>) -> PyResult<(usize, f64, Vec<f64>)> {
        let scheme = self.0.scheme.as_ref().ok_or_else(|| PyValueError::new_err("model has no class scheme"))?;
        let c = classify(&self.0, &input_from_histogram(&histogram), scheme).py()?;
        Ok((c.class, c.tau, c.probabilities))
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.0.layer_sizes.clone()
    }
}

#[pymodule]
fn noncls_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTwinBeam>()?;
    m.add_class::<PyDetector>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(conditional_idler, m)?)?;
    m.add_function(wrap_pyfunction!(joint_photocount_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(sample, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(ncd, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
