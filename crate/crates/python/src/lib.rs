//! Python bindings for the vmKdV solver.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use vmkdv::assembly::DiscreteState;
use vmkdv::config::RunConfig;
use vmkdv::exact::{self, SolitonParams, TwoSolitonParams};
use vmkdv::stepper::{initial_state, invariant_row, Stepper};
use vmkdv::{experiment, jet, metrics, Error};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Usage(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Validated run configuration, read from TOML.
#[pyclass(name = "Config", frozen, from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    /// Defaults, optionally overridden by a TOML document.
    #[new]
    #[pyo3(signature = (toml = None))]
    fn new(toml: Option<&str>) -> PyResult<Self> {
        let inner = match toml {
            Some(t) => RunConfig::from_toml(t).map_err(to_py)?,
            None => RunConfig::default(),
        };
        Ok(PyConfig { inner })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn cells(&self) -> usize {
        self.inner.cells
    }

    #[getter]
    fn degree(&self) -> usize {
        self.inner.degree
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    #[getter]
    fn final_time(&self) -> f64 {
        self.inner.final_time
    }

    #[getter]
    fn ic(&self) -> &'static str {
        self.inner.ic.kind()
    }

    fn steps(&self) -> PyResult<usize> {
        self.inner.steps().map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(ic={}, cells={}, degree={}, tau={}, final_time={})",
            self.inner.ic.kind(),
            self.inner.cells,
            self.inner.degree,
            self.inner.tau,
            self.inner.final_time
        )
    }
}

/// A discrete solution that can be stepped from Python.
#[pyclass(name = "Simulation")]
struct PySimulation {
    state: DiscreteState,
    stepper: Stepper,
    tau: f64,
    steps: usize,
}

fn components(f: &vmkdv::FeField) -> Vec<Vec<f64>> {
    (0..f.components()).map(|c| f.component(c).to_vec()).collect()
}

#[pymethods]
impl PySimulation {
    #[new]
    fn new(config: &PyConfig) -> PyResult<Self> {
        let cfg = &config.inner;
        cfg.validate().map_err(to_py)?;
        let space = cfg.space().map_err(to_py)?;
        let ic = cfg.ic.solution().map_err(to_py)?;
        let state = initial_state(space, cfg.dim(), |x| ic(x, 0.0), cfg.init_mode).map_err(to_py)?;
        Ok(PySimulation {
            state,
            stepper: Stepper::new(cfg.newton).map_err(to_py)?,
            tau: cfg.tau,
            steps: 0,
        })
    }

    #[getter]
    fn t(&self) -> f64 {
        self.state.t
    }

    #[getter]
    fn p(&self) -> f64 {
        self.state.p
    }

    #[getter]
    fn steps_taken(&self) -> usize {
        self.steps
    }

    /// Node positions of the degrees of freedom.
    fn x(&self) -> Vec<f64> {
        self.state.space().dof_positions()
    }

    /// Nodal values of `U`, one list per component.
    fn u(&self) -> Vec<Vec<f64>> {
        components(&self.state.u)
    }

    fn v(&self) -> Vec<Vec<f64>> {
        components(&self.state.v)
    }

    fn w(&self) -> Vec<Vec<f64>> {
        components(&self.state.w)
    }

    /// Advances `n` steps and returns the invariant row of the last one.
    #[pyo3(signature = (n = 1))]
    fn advance(&mut self, n: usize) -> PyResult<BTreeMap<&'static str, f64>> {
        let mut last = None;
        for _ in 0..n {
            let (next, stats) = self.stepper.step(&self.state, self.tau).map_err(to_py)?;
            self.state = next;
            self.steps += 1;
            last = Some(stats);
        }
        self.invariants_with(last.as_ref())
    }

    fn invariants(&self) -> PyResult<BTreeMap<&'static str, f64>> {
        self.invariants_with(None)
    }

    /// L² error per component against the exact solution at the current time.
    fn l2_errors(&self, config: &PyConfig) -> PyResult<Vec<f64>> {
        if !config.inner.ic.has_exact_solution() {
            return Err(PyValueError::new_err("no exact solution for this initial data"));
        }
        let f = config.inner.ic.solution().map_err(to_py)?;
        let t = self.state.t;
        Ok(metrics::l2_errors(&self.state.u, |x| f(x, t)))
    }
}

impl PySimulation {
    fn invariants_with(&self, stats: Option<&vmkdv::stepper::StepStats>) -> PyResult<BTreeMap<&'static str, f64>> {
        let r = invariant_row(&self.state, self.steps, stats).map_err(to_py)?;
        Ok(BTreeMap::from([
            ("t", r.t),
            ("F2", r.f2),
            ("F4", r.f4),
            ("F6", r.f6),
            ("P", r.p),
            ("constraint", r.constraint),
            ("newton_iters", r.newton_iters as f64),
            ("residual", r.residual),
        ]))
    }
}

/// Runs a configuration to its final time in memory and returns the
/// invariant columns, plus `linf_l2_errors` when errors are tracked.
#[pyfunction]
fn run(py: Python<'_>, config: &PyConfig) -> PyResult<BTreeMap<String, Vec<f64>>> {
    let cfg = config.inner.clone();
    let out = py
        .detach(|| experiment::simulate(&cfg, |_, _, _| Ok(())))
        .map_err(to_py)?;
    let rows = out.invariants.rows();
    let col = |f: fn(&metrics::InvariantRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let mut m = BTreeMap::from([
        ("step".to_string(), col(|r| r.step as f64)),
        ("t".to_string(), col(|r| r.t)),
        ("F2".to_string(), col(|r| r.f2)),
        ("F4".to_string(), col(|r| r.f4)),
        ("F6".to_string(), col(|r| r.f6)),
        ("P".to_string(), col(|r| r.p)),
        ("constraint".to_string(), col(|r| r.constraint)),
        ("newton_iters".to_string(), col(|r| r.newton_iters as f64)),
        ("residual".to_string(), col(|r| r.residual)),
    ]);
    if let Some(e) = out.errors.as_ref().and_then(|e| e.final_running()) {
        m.insert("linf_l2_errors".into(), e.to_vec());
    }
    Ok(m)
}

#[pyfunction]
#[pyo3(signature = (x, t, mu = 1.0, shift = 20.0, direction = vec![0.8, 0.6]))]
fn one_soliton(x: f64, t: f64, mu: f64, shift: f64, direction: Vec<f64>) -> PyResult<Vec<f64>> {
    let p = SolitonParams::new(mu, shift, direction).map_err(to_py)?;
    Ok(exact::one_soliton(&p, x, t))
}

/// The two-soliton benchmark solution.
#[pyfunction]
fn two_soliton(x: f64, t: f64) -> Vec<f64> {
    exact::two_soliton(&TwoSolitonParams::benchmark(), x, t)
}

/// `(is_conserved, flux)` for one of `f2`, `f4`, `f6`, `quartic`.
#[pyfunction]
fn verify_conservation(density: &str, d: usize) -> PyResult<(bool, Option<String>)> {
    let f = match density {
        "f2" => jet::f2(d),
        "f4" => jet::f4(d),
        "f6" => jet::f6(d),
        "quartic" => jet::norm_sq(d, 0).map(|p| p.pow(2)),
        other => return Err(PyValueError::new_err(format!("unknown density `{other}`"))),
    }
    .map_err(to_py)?;
    let c = jet::verify_conservation(&f, d).map_err(to_py)?;
    Ok((c.is_conserved, c.flux.map(|g| g.to_string())))
}

#[pyfunction]
fn claws_report(dims: Vec<usize>) -> PyResult<String> {
    experiment::claws_report(&dims).map(|(_, text)| text).map_err(to_py)
}

#[pyfunction]
fn eoc(errors: Vec<f64>, meshsizes: Vec<f64>) -> PyResult<Vec<f64>> {
    metrics::eoc(&errors, &meshsizes).map_err(to_py)
}

#[pymodule(name = "vmkdv")]
mod python_module {
    #[pymodule_export]
    use super::{
        claws_report, eoc, one_soliton, run, two_soliton, verify_conservation, PyConfig, PySimulation,
    };
}
