//! Python bindings for the crashcast pipeline.

use std::path::PathBuf;

use ndarray::Array2;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use crashcast::config::{EvalMode, RunConfig};
use crashcast::learners::ensemble::{self, EnsembleModel};
use crashcast::{backtest, evaluation, features, pipeline, selection, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn labels(y: Vec<u8>) -> Vec<i32> {
    y.into_iter().map(i32::from).collect()
}

fn rows_to_array(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((rows.len(), d), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Fitted soft-voting ensemble loaded from a `model.json` artifact.
#[pyclass(name = "EnsembleModel", frozen)]
struct PyEnsembleModel {
    inner: EnsembleModel,
}

#[pymethods]
impl PyEnsembleModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text =
            std::fs::read_to_string(&path).map_err(|e| PyRuntimeError::new_err(format!("{}: {e}", path.display())))?;
        Ok(PyEnsembleModel { inner: EnsembleModel::from_json(&text).map_err(to_py)? })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyEnsembleModel { inner: EnsembleModel::from_json(text).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn selected_features(&self) -> Vec<String> {
        self.inner.selected_features.clone()
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold
    }

    /// Crash probabilities and 0/1 calls for raw (unstandardised) rows.
    fn predict(&self, rows: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<i32>)> {
        let x = rows_to_array(&rows)?;
        let (p, yhat) = self.inner.predict(x.view()).map_err(to_py)?;
        Ok((p, labels(yhat)))
    }

    /// Per-member probabilities keyed by member name.
    fn predict_members(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<(String, Vec<f64>)>> {
        let x = rows_to_array(&rows)?;
        let members = self.inner.predict_members(x.view()).map_err(to_py)?;
        Ok(ensemble::MEMBER_NAMES.iter().map(|n| n.to_string()).zip(members).collect())
    }

    fn __repr__(&self) -> String {
        format!("EnsembleModel(features={})", self.inner.selected_features.len())
    }
}

/// Run every stage and return the run summary as JSON.
#[pyfunction]
#[pyo3(signature = (out, config=None, synthetic=None, seed=None, mode=None))]
fn run_pipeline(
    py: Python<'_>,
    out: PathBuf,
    config: Option<PathBuf>,
    synthetic: Option<String>,
    seed: Option<u64>,
    mode: Option<&str>,
) -> PyResult<String> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(&p).map_err(to_py)?,
        None => RunConfig::default(),
    };
    cfg.out = out;
    if let Some(s) = synthetic {
        cfg.data.synthetic = Some(s);
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    match mode {
        None => {}
        Some("in_sample") => cfg.mode = EvalMode::InSample,
        Some("walk_forward") => cfg.mode = EvalMode::WalkForward,
        Some(other) => return Err(PyValueError::new_err(format!("unknown mode `{other}`"))),
    }
    let summary = py.detach(|| pipeline::run_pipeline(cfg)).map_err(to_py)?;
    serde_json::to_string(&summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Write a synthetic scenario's price files; returns the planted crash count.
#[pyfunction]
fn write_synthetic(name: &str, seed: u64, out: PathBuf) -> PyResult<usize> {
    let (_, truth) = pipeline::write_synthetic(name, seed, &out).map_err(to_py)?;
    Ok(truth.crashes.len())
}

#[pyfunction]
#[pyo3(signature = (members, threshold=ensemble::DEFAULT_THRESHOLD))]
fn soft_vote(members: Vec<Vec<f64>>, threshold: f64) -> PyResult<(Vec<f64>, Vec<i32>)> {
    let (p, yhat) = ensemble::soft_vote(&members, threshold).map_err(to_py)?;
    Ok((p, labels(yhat)))
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, y: Vec<u8>) -> PyResult<f64> {
    evaluation::roc_auc(&scores, &y).map_err(to_py)
}

#[pyfunction]
fn hurst_exponent(returns: Vec<f64>, tau: usize) -> PyResult<Vec<f64>> {
    features::hurst_exponent(&returns, tau).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (x, y, bins=10))]
fn mutual_information(x: Vec<f64>, y: Vec<u8>, bins: usize) -> PyResult<f64> {
    selection::mutual_information(&x, &y, bins).map_err(to_py)
}

#[pyfunction]
fn max_drawdown(equity: Vec<f64>) -> PyResult<f64> {
    backtest::max_drawdown(&equity).map_err(to_py)
}

/// `(alpha_daily, beta, t_stat_alpha)` of strategy on benchmark returns.
#[pyfunction]
fn capm_fit(strategy: Vec<f64>, benchmark: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let f = backtest::capm_fit(&strategy, &benchmark).map_err(to_py)?;
    Ok((f.alpha_daily, f.beta, f.t_stat_alpha))
}

#[pymodule]
fn crashcast_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEnsembleModel>()?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(soft_vote, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(hurst_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(mutual_information, m)?)?;
    m.add_function(wrap_pyfunction!(max_drawdown, m)?)?;
    m.add_function(wrap_pyfunction!(capm_fit, m)?)?;
    Ok(())
}
