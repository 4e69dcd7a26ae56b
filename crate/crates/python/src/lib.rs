//! Python bindings. Structured results are returned as plain dicts and lists.

use std::path::Path;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use pbv_charge::config::{parse_config, ExperimentConfig, OutputFormat};
use pbv_charge::estimators::{self, DecayWeighting};
use pbv_charge::mechanism::{self, PhotonOrder};
use pbv_charge::output::write_results;
use pbv_charge::ple::{self, Spectrum};
use pbv_charge::rate_model;
use pbv_charge::reproduce::{run_reproduction, simulate_config, FigId};
use pbv_charge::Error;

fn to_py_err(e: Error) -> PyErr {
    let msg = format!("[{}] {e}", e.kind());
    match e.exit_code() {
        3 => PyRuntimeError::new_err(msg),
        4 => PyOSError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn config_from(text: Option<&str>) -> PyResult<ExperimentConfig> {
    text.map_or_else(|| Ok(ExperimentConfig::default()), |t| parse_config(t).map_err(to_py_err))
}

/// The built-in configuration as a TOML document.
#[pyfunction]
fn default_config() -> String {
    ExperimentConfig::default().to_toml()
}

/// Parses and validates a TOML config, returning it with defaults filled in.
#[pyfunction]
fn load_config<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &parse_config(text).map_err(to_py_err)?)
}

/// Runs a reproduction pipeline (`fig2`, `fig3`, `fig4`, `fig1_ple`,
/// `mechanism`). With `out_dir`, also writes the files and manifest.
#[pyfunction]
#[pyo3(signature = (fig, config=None, seed=None, out_dir=None, format="csv"))]
fn reproduce<'py>(
    py: Python<'py>,
    fig: &str,
    config: Option<&str>,
    seed: Option<u64>,
    out_dir: Option<&str>,
    format: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let fig: FigId = fig.parse().map_err(to_py_err)?;
    let config = config_from(config)?;
    let seed = seed.unwrap_or(config.seed);
    let format: OutputFormat = format.parse().map_err(to_py_err)?;
    let bundle = py.detach(|| run_reproduction(fig, &config, seed)).map_err(to_py_err)?;
    if let Some(dir) = out_dir {
        write_results(&bundle, format, Path::new(dir)).map_err(to_py_err)?;
    }
    to_py(py, &bundle)
}

/// Simulates `config.sequence` and returns per-repetition window counts.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None))]
fn simulate(py: Python<'_>, config: Option<&str>, seed: Option<u64>) -> PyResult<Vec<Vec<u64>>> {
    let config = config_from(config)?;
    let seed = seed.unwrap_or(config.seed);
    let ens = py.detach(|| simulate_config(&config, seed)).map_err(to_py_err)?;
    Ok(ens.traces.iter().map(|t| t.counts()).collect())
}

#[pyfunction]
fn photon_energy(wavelength_nm: f64) -> PyResult<f64> {
    mechanism::photon_energy(wavelength_nm).map_err(to_py_err)
}

/// Minimal photon order, or `None` when more than `max_order` are needed.
#[pyfunction]
#[pyo3(signature = (threshold_ev, wavelength_nm, max_order=2))]
fn min_photon_order(threshold_ev: f64, wavelength_nm: f64, max_order: u32) -> PyResult<Option<u32>> {
    let order = mechanism::min_photon_order(threshold_ev, wavelength_nm, max_order).map_err(to_py_err)?;
    Ok(match order {
        PhotonOrder::Order(n) => Some(n),
        PhotonOrder::Infeasible => None,
    })
}

#[pyfunction]
fn steady_state_bright(a: f64, b: f64) -> PyResult<f64> {
    rate_model::steady_state_bright(a, b).map_err(to_py_err)
}

#[pyfunction]
fn evolve_population(p0: f64, a: f64, b: f64, t: f64) -> PyResult<f64> {
    rate_model::evolve_population(p0, a, b, t).map_err(to_py_err)
}

/// `(P(bright read as dark), P(dark read as bright))`.
#[pyfunction]
#[pyo3(signature = (bright_mean, dark_mean, threshold=3))]
fn discrimination_error(bright_mean: f64, dark_mean: f64, threshold: u64) -> PyResult<(f64, f64)> {
    estimators::discrimination_error(bright_mean, dark_mean, threshold).map_err(to_py_err)
}

#[pyfunction]
#[pyo3(signature = (counts, threshold=3))]
fn estimate_population<'py>(py: Python<'py>, counts: Vec<u64>, threshold: u64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &estimators::estimate_population(&counts, threshold).map_err(to_py_err)?)
}

#[pyfunction]
#[pyo3(signature = (t, y, weighting="unweighted"))]
fn fit_monoexponential<'py>(py: Python<'py>, t: Vec<f64>, y: Vec<f64>, weighting: &str) -> PyResult<Bound<'py, PyAny>> {
    let w = match weighting {
        "unweighted" => DecayWeighting::Unweighted,
        "poisson" => DecayWeighting::Poisson,
        other => return Err(PyValueError::new_err(format!("unknown weighting `{other}`"))),
    };
    to_py(py, &estimators::fit_monoexponential(&t, &y, w).map_err(to_py_err)?)
}

#[pyfunction]
#[pyo3(signature = (power, rate, rate_err=None))]
fn fit_power_law<'py>(
    py: Python<'py>,
    power: Vec<f64>,
    rate: Vec<f64>,
    rate_err: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &estimators::fit_power_law(&power, &rate, rate_err.as_deref()).map_err(to_py_err)?)
}

#[pyfunction]
fn fit_lorentzian<'py>(
    py: Python<'py>,
    detuning_ghz: Vec<f64>,
    counts: Vec<f64>,
    dwell_ms: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let spectrum = Spectrum { detuning_ghz, counts, dwell_ms };
    let fit = ple::fit_lorentzian(&spectrum).map_err(to_py_err)?;
    to_py(py, &fit.to_json())
}

#[pymodule]
#[pyo3(name = "pbv_charge")]
fn pbv_charge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(load_config, m)?)?;
    m.add_function(wrap_pyfunction!(reproduce, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(photon_energy, m)?)?;
    m.add_function(wrap_pyfunction!(min_photon_order, m)?)?;
    m.add_function(wrap_pyfunction!(steady_state_bright, m)?)?;
    m.add_function(wrap_pyfunction!(evolve_population, m)?)?;
    m.add_function(wrap_pyfunction!(discrimination_error, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_population, m)?)?;
    m.add_function(wrap_pyfunction!(fit_monoexponential, m)?)?;
    m.add_function(wrap_pyfunction!(fit_power_law, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lorentzian, m)?)?;
    Ok(())
}
