//! Python bindings. Results cross the boundary as JSON strings.

use landmark_dl::config::AnalysisConfig;
use landmark_dl::data::{ingest_csv, save_csv, CsvSchema};
use landmark_dl::nuisance::LearnerLibrary;
use landmark_dl::report::{analyze, render_simplex, AnalysisReport};
use landmark_dl::simulate::{
    counterexample_scenario, replicate_rng, run_mc, sample_scenario, simulate_counterexample, McConfig, ScenarioSpec,
};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn err(e: landmark_dl::Error) -> PyErr {
    if matches!(e, landmark_dl::Error::Io(_)) {
        PyIOError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn scenario(name: &str) -> PyResult<ScenarioSpec> {
    let mut s =
        ScenarioSpec::builtin(name).ok_or_else(|| PyValueError::new_err(format!("unknown scenario {name:?}")))?;
    s.calibrate().map_err(err)?;
    Ok(s)
}

/// Analyzes a CSV file and returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (path, t, y, folds = 5, seed = 20240521, known_pi = None, learners = "default"))]
fn analyze_csv(
    path: &str,
    t: f64,
    y: f64,
    folds: usize,
    seed: u64,
    known_pi: Option<f64>,
    learners: &str,
) -> PyResult<String> {
    let data = ingest_csv(path, &CsvSchema::default()).map_err(err)?;
    let mut cfg = AnalysisConfig::new(t, y);
    cfg.folds = folds;
    cfg.seed = seed;
    cfg.known_randomization_prob = known_pi;
    cfg.learner_library = Some(match learners {
        "default" => LearnerLibrary::default_for(data.dim(), known_pi),
        "parametric" => LearnerLibrary::parametric(data.dim(), known_pi),
        "covariate-free" => LearnerLibrary::covariate_free(known_pi),
        other => return Err(PyValueError::new_err(format!("unknown learner set {other:?}"))),
    });
    let report = analyze(&data, &cfg).map_err(err)?;
    report.to_json().map_err(err)
}

/// Simplex SVG for a report produced by `analyze_csv`.
#[pyfunction]
fn simplex_svg(report_json: &str) -> PyResult<String> {
    let r = AnalysisReport::from_json(report_json).map_err(err)?;
    Ok(render_simplex(&r.simplex).0)
}

/// Writes one simulated dataset from a built-in scenario.
#[pyfunction]
#[pyo3(signature = (name, n, path, seed = 1))]
fn generate_csv(name: &str, n: usize, path: &str, seed: u64) -> PyResult<()> {
    let s = scenario(name)?;
    let data = sample_scenario(&s, n, &mut replicate_rng(seed, 0)).map_err(err)?;
    save_csv(&data, path).map_err(err)
}

/// Monte Carlo table for a built-in scenario, as JSON.
#[pyfunction]
#[pyo3(signature = (name, n, reps, seed = 1, folds = 1))]
fn monte_carlo(py: Python<'_>, name: &str, n: usize, reps: usize, seed: u64, folds: usize) -> PyResult<String> {
    let s = scenario(name)?;
    let cfg = if folds > 1 {
        McConfig::flexible(folds)
    } else {
        McConfig::parametric()
    };
    let report = py.detach(|| run_mc(&s, n, reps, &cfg, seed)).map_err(err)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Analytic `(survival ratio, selection, joint factor)`.
#[pyfunction]
fn counterexample(z1: f64, z2: f64, t: f64) -> PyResult<(f64, f64, f64)> {
    let v = counterexample_scenario(z1, z2, t).map_err(err)?;
    Ok((v.survival_ratio, v.selection, v.joint_factor))
}

/// Analytic values next to estimates from a simulated trial, as JSON.
#[pyfunction]
#[pyo3(signature = (z1, z2, t, n = 100_000, seed = 1))]
fn simulate_counterexample_json(py: Python<'_>, z1: f64, z2: f64, t: f64, n: usize, seed: u64) -> PyResult<String> {
    let r = py.detach(|| simulate_counterexample(z1, z2, t, n, seed)).map_err(err)?;
    serde_json::to_string(&r).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn landmark_dl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(analyze_csv, m)?)?;
    m.add_function(wrap_pyfunction!(simplex_svg, m)?)?;
    m.add_function(wrap_pyfunction!(generate_csv, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(counterexample, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_counterexample_json, m)?)?;
    Ok(())
}
