//! Python bindings: empirical CDFs, the frequency bounds, the independence
//! Kendall function, and JSON-configured checks and experiments.
//!
//! Long computations release the interpreter lock. Configurations and reports
//! cross the boundary as JSON text.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use jointcheck::copula::{copula_bound_curve, independence_kendall as kendall, KendallCurve};
use jointcheck::ecdf::{EmpiricalCdf as CoreCdf, UniformCdf};
use jointcheck::experiments::{self, BetaExperimentConfig, CheckConfig, RegressionExperimentConfig};
use jointcheck::frequency_bound::{meng_bound as meng, theorem1_bound as bound};
use jointcheck::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidParameter(_) | Error::DimensionMismatch { .. } | Error::EmptyData | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Step-function CDF of a sample.
#[pyclass(name = "EmpiricalCdf", frozen)]
struct EmpiricalCdf {
    inner: CoreCdf,
}

#[pymethods]
impl EmpiricalCdf {
    #[new]
    fn new(samples: Vec<f64>) -> PyResult<Self> {
        Ok(Self { inner: CoreCdf::from_samples(&samples).map_err(to_py)? })
    }

    fn eval(&self, t: f64) -> f64 {
        self.inner.eval(t)
    }

    /// Exact integral of the CDF from 0 to `s`.
    fn integral(&self, s: f64) -> PyResult<f64> {
        self.inner.integral(s).map_err(to_py)
    }

    fn quantile(&self, q: f64) -> f64 {
        self.inner.quantile(q)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// `min(2·alpha, 1)`.
#[pyfunction]
fn meng_bound(alpha: f64) -> f64 {
    meng(alpha)
}

/// `(bound, s_star)` for a joint p-value `alpha` given the null CDF of
/// conditional exceedance probabilities. Without a CDF, the uniform law is used.
#[pyfunction]
#[pyo3(signature = (alpha, cdf=None, grid_step=1e-4))]
fn theorem1_bound(alpha: f64, cdf: Option<PyRef<'_, EmpiricalCdf>>, grid_step: f64) -> PyResult<(f64, f64)> {
    let r = match cdf {
        Some(c) => bound(&c.inner, alpha, grid_step),
        None => bound(&UniformCdf, alpha, grid_step),
    }
    .map_err(to_py)?;
    Ok((r.bound, r.s_star))
}

#[pyfunction]
fn independence_kendall(t: f64, d: usize) -> PyResult<f64> {
    kendall(t, d).map_err(to_py)
}

/// Frequency bound of `p^d` when the statistics are independent.
#[pyfunction]
#[pyo3(signature = (p, d, grid_step=1e-4))]
fn independence_bound(p: f64, d: usize, grid_step: f64) -> PyResult<f64> {
    let curve = KendallCurve::independence(d).map_err(to_py)?;
    Ok(copula_bound_curve(&curve, p, d, grid_step).map_err(to_py)?.bound)
}

/// `log10(value / (2·normalizer))`.
#[pyfunction]
fn log_ratio(value: f64, normalizer: f64) -> f64 {
    experiments::log_ratio(value, normalizer)
}

fn parse<T: serde::de::DeserializeOwned>(text: &str) -> PyResult<T> {
    serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn dump<T: serde::Serialize>(value: &T) -> PyResult<String> {
    serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Runs a check; returns the report as JSON text.
#[pyfunction]
fn run_check(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let config: CheckConfig = parse(config_json)?;
    let out = py.detach(|| experiments::run_check(&config)).map_err(to_py)?;
    dump(&out.report)
}

/// Joint p-value and frequency bound; returns the report as JSON text.
#[pyfunction]
fn run_bound(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let config: CheckConfig = parse(config_json)?;
    let out = py.detach(|| experiments::run_bound(&config)).map_err(to_py)?;
    dump(&out.report)
}

/// Beta-quantile study; returns the full report as JSON text. `out_dir`, when
/// given, receives the report and table files.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir=None))]
fn run_beta_experiment(py: Python<'_>, config_json: &str, out_dir: Option<std::path::PathBuf>) -> PyResult<String> {
    let config: BetaExperimentConfig = parse(config_json)?;
    let out = py
        .detach(|| {
            let out = experiments::run_beta_experiment(&config)?;
            if let Some(d) = &out_dir {
                out.write_dir(d)?;
            }
            Ok::<_, Error>(out)
        })
        .map_err(to_py)?;
    dump(&out.report)
}

#[pyfunction]
#[pyo3(signature = (config_json, out_dir=None))]
fn run_regression_experiment(
    py: Python<'_>,
    config_json: &str,
    out_dir: Option<std::path::PathBuf>,
) -> PyResult<String> {
    let config: RegressionExperimentConfig = parse(config_json)?;
    let out = py
        .detach(|| {
            let out = experiments::run_regression_experiment(&config)?;
            if let Some(d) = &out_dir {
                out.write_dir(d)?;
            }
            Ok::<_, Error>(out)
        })
        .map_err(to_py)?;
    dump(&out.report)
}

#[pymodule]
fn pyjointcheck(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", experiments::VERSION)?;
    m.add_class::<EmpiricalCdf>()?;
    m.add_function(wrap_pyfunction!(meng_bound, m)?)?;
    m.add_function(wrap_pyfunction!(theorem1_bound, m)?)?;
    m.add_function(wrap_pyfunction!(independence_kendall, m)?)?;
    m.add_function(wrap_pyfunction!(independence_bound, m)?)?;
    m.add_function(wrap_pyfunction!(log_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(run_check, m)?)?;
    m.add_function(wrap_pyfunction!(run_bound, m)?)?;
    m.add_function(wrap_pyfunction!(run_beta_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(run_regression_experiment, m)?)?;
    Ok(())
}
