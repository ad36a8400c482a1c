//! Python bindings. Instances, classes and reports cross the boundary as the
//! same JSON documents the CLI reads and writes.

use agnosticq_core::{
    gen_finite_class, gen_linear_features, gen_mdp, json, learn_general, learn_linear, solve_dp, DeterministicMdp,
    Env, FeatureMap, FiniteClass, GenParams, LinearOptions,
};
use agnosticq_harness::{run_sweep, verify_bounds, ExperimentConfig, Report};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Generates an instance and returns its JSON.
#[pyfunction]
#[pyo3(signature = (widths, actions, gap, seed, value_ceiling = 1.0))]
fn generate(widths: Vec<usize>, actions: usize, gap: f64, seed: u64, value_ceiling: f64) -> PyResult<String> {
    let params = GenParams { value_ceiling, ..GenParams::new(widths, actions, gap) };
    gen_mdp(seed, &params).and_then(|m| m.to_json()).map_err(err)
}

/// Ground truth (Q*, V*, optimal sets, gap) as JSON.
#[pyfunction]
fn solve(mdp: &str) -> PyResult<String> {
    let mdp = DeterministicMdp::from_json(mdp).map_err(err)?;
    let truth = solve_dp(&mdp).map_err(err)?;
    json::to_string_pretty(&truth).map_err(err)
}

/// Realizable features of dimension `d` with error at most `delta`.
#[pyfunction]
#[pyo3(signature = (mdp, d, seed, delta = 0.0))]
fn features(mdp: &str, d: usize, seed: u64, delta: f64) -> PyResult<String> {
    let mdp = DeterministicMdp::from_json(mdp).map_err(err)?;
    let truth = solve_dp(&mdp).map_err(err)?;
    gen_linear_features(&truth, d, delta, seed).and_then(|(fm, _)| fm.to_json()).map_err(err)
}

/// A finite class of `size` functions containing one within `delta` of Q*.
#[pyfunction]
#[pyo3(signature = (mdp, size, seed, delta = 0.0))]
fn finite_class(mdp: &str, size: usize, seed: u64, delta: f64) -> PyResult<String> {
    let mdp = DeterministicMdp::from_json(mdp).map_err(err)?;
    let truth = solve_dp(&mdp).map_err(err)?;
    gen_finite_class(&truth, size, delta, seed).and_then(|c| c.to_json()).map_err(err)
}

/// Runs the linear agent; returns `(matched_pi_star, data_additions, value_at_root)`.
#[pyfunction]
fn run_linear(mdp: &str, features: &str, rho: f64) -> PyResult<(bool, usize, f64)> {
    let mdp = DeterministicMdp::from_json(mdp).map_err(err)?;
    let fm = FeatureMap::from_json(features).map_err(err)?;
    let (policy, stats) = learn_linear(&mut Env::new(&mdp, 0), &fm, rho, &LinearOptions::default()).map_err(err)?;
    let matched = solve_dp(&mdp).map_err(err)?.policy_matches(&mdp, &policy);
    Ok((matched, stats.data_additions, stats.value_at_root))
}

/// Runs the general agent on a finite class; returns `(matched_pi_star, y_size, value_at_root)`.
#[pyfunction]
fn run_general(mdp: &str, class: &str, rho: f64, delta: f64) -> PyResult<(bool, usize, f64)> {
    let mdp = DeterministicMdp::from_json(mdp).map_err(err)?;
    let class = FiniteClass::from_json(class).map_err(err)?;
    let (policy, stats) =
        learn_general(&mut Env::new(&mdp, 0), &class, rho, delta, &Default::default()).map_err(err)?;
    let matched = solve_dp(&mdp).map_err(err)?.policy_matches(&mdp, &policy);
    Ok((matched, stats.y_size, stats.value_at_root))
}

/// Runs a sweep from a JSON config; returns the report JSON.
#[pyfunction]
fn sweep(py: Python<'_>, config: &str) -> PyResult<String> {
    let cfg = ExperimentConfig::from_json(config).map_err(err)?;
    let report = py.detach(|| run_sweep(&cfg)).map_err(err)?;
    report.to_json().map_err(err)
}

/// Checks a report; returns `(pass, text)`.
#[pyfunction]
fn verify(report: &str) -> PyResult<(bool, String)> {
    let report = Report::from_json(report).map_err(err)?;
    let summary = verify_bounds(&report).map_err(err)?;
    Ok((summary.pass, summary.to_string()))
}

#[pymodule]
fn agnosticq(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(features, m)?)?;
    m.add_function(wrap_pyfunction!(finite_class, m)?)?;
    m.add_function(wrap_pyfunction!(run_linear, m)?)?;
    m.add_function(wrap_pyfunction!(run_general, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
