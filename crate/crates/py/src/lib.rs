use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use wildsphere::config::{parse_schedule, RunConfig};
use wildsphere::geom::v3;
use wildsphere::pipeline::{run_build, verify_run, write_artifacts, MeshFormat, PipelineError};
use wildsphere::profile;
use wildsphere::surface::{DeltaSchedule, ExceptionalSet};

fn run_err(e: PipelineError) -> PyErr {
    match e {
        PipelineError::Config(c) => PyValueError::new_err(c.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json(v: &impl serde::Serialize) -> String {
    serde_json::to_string(v).expect("serializable")
}

/// A built set of stages with its tree and ledger.
#[pyclass(frozen, module = "wildsphere._wildsphere")]
struct Run {
    inner: wildsphere::pipeline::Run,
}

#[pymethods]
impl Run {
    #[getter]
    fn depth(&self) -> usize {
        self.inner.approx.depth
    }

    #[getter]
    fn mode(&self) -> String {
        format!("{:?}", self.inner.approx.mode).to_lowercase()
    }

    #[getter]
    fn config_toml(&self) -> String {
        self.inner.config.to_toml()
    }

    fn ledger_json(&self) -> String {
        json(&self.inner.approx.ledger)
    }

    fn ledger_text(&self) -> String {
        self.inner.approx.ledger.to_text()
    }

    fn sites_json(&self) -> String {
        self.inner.approx.sites_json().to_string()
    }

    /// Runs the certification suite; returns `(pass, text, json)`.
    fn verify(&self, py: Python<'_>) -> PyResult<(bool, String, String)> {
        let report = py.detach(|| verify_run(&self.inner)).map_err(run_err)?;
        Ok((report.pass, report.to_text(), json(&report)))
    }

    /// Vertices and triangles of stage `k`.
    fn stage_mesh(&self, k: usize) -> PyResult<(Vec<[f64; 3]>, Vec<[u32; 3]>)> {
        let m = self.inner.approx.stage_mesh(k).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok((m.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(), m.triangles))
    }

    /// Writes meshes, ledger and manifest; returns the written paths.
    #[pyo3(signature = (out, formats = vec!["obj".to_string(), "ply".to_string()]))]
    fn write(&self, py: Python<'_>, out: PathBuf, formats: Vec<String>) -> PyResult<Vec<String>> {
        let formats = formats.iter().map(|f| MeshFormat::parse(f).ok_or_else(|| PyValueError::new_err(format!("unknown mesh format `{f}`")))).collect::<PyResult<Vec<_>>>()?;
        let manifest = py.detach(|| write_artifacts(&self.inner, &out, &formats)).map_err(run_err)?;
        Ok(manifest.artifacts.iter().map(|a| a.path.clone()).collect())
    }

    /// Stabilized value of the limit map at a point of the base surface.
    fn evaluate(&self, x: f64, y: f64, z: f64) -> PyResult<(f64, f64, f64)> {
        let p = self.inner.approx.evaluate_f(&v3(x, y, z)).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok((p.x, p.y, p.z))
    }
}

/// Builds a run from an optional TOML config with optional overrides.
#[pyfunction]
#[pyo3(signature = (config = None, depth = None, schedule = None, seed = None))]
fn build(py: Python<'_>, config: Option<&str>, depth: Option<usize>, schedule: Option<&str>, seed: Option<u64>) -> PyResult<Run> {
    let mut cfg = match config {
        Some(text) => RunConfig::from_toml(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => RunConfig::default(),
    };
    if let Some(d) = depth {
        cfg.depth = d;
    }
    if let Some(s) = schedule {
        cfg.schedule = parse_schedule(s).map_err(|e| PyValueError::new_err(e.to_string()))?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let inner = py.detach(|| run_build(&cfg)).map_err(run_err)?;
    Ok(Run { inner })
}

/// Closed-form energy of the truncated profile.
#[pyfunction]
fn truncation_energy(s: f64, tau: f64, n: usize) -> f64 {
    profile::truncation_energy(s, tau, n)
}

/// Profile parameter for a budget; returns `(s, support_bound)`.
#[pyfunction]
#[pyo3(signature = (delta, tau, n, budget, slack = 0.0))]
fn solve_s(delta: f64, tau: f64, n: usize, budget: f64, slack: f64) -> PyResult<(f64, bool)> {
    let sol = profile::solve_s(delta, tau, n, budget, slack).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((sol.s, sol.support_bound))
}

/// Box-count estimates for `k = 1..=depth`; `ratio` switches to `δ_k = ratio^k`.
#[pyfunction]
#[pyo3(signature = (depth, ratio = None))]
fn dimension_table(depth: usize, ratio: Option<f64>) -> Vec<f64> {
    let schedule = ratio.map_or(DeltaSchedule::DoubleExponential, |ratio| DeltaSchedule::Geometric { ratio });
    ExceptionalSet::from_schedule(depth, schedule).table.iter().map(|r| r.estimate).collect()
}

#[pymodule]
fn _wildsphere(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Run>()?;
    m.add_function(wrap_pyfunction!(build, m)?)?;
    m.add_function(wrap_pyfunction!(truncation_energy, m)?)?;
    m.add_function(wrap_pyfunction!(solve_s, m)?)?;
    m.add_function(wrap_pyfunction!(dimension_table, m)?)?;
    Ok(())
}
