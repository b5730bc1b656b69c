//! Python bindings for `sglab_core`.
//!
//! Structured results (verdicts, path reports, stop reasons) are returned as
//! plain dicts decoded from their JSON form.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use sglab_core::checks::{self, Sampler, UniformNjiParams};
use sglab_core::dynamics::{self, StopRule};
use sglab_core::path::{self, DecayPath};
use sglab_core::{ConeVec, GainNetwork, GainOperator, KFun, NetworkSpec};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn cone(v: Vec<f64>) -> PyResult<ConeVec> {
    ConeVec::new(v).map_err(err)
}

fn rule(max_iter: usize, tol: f64) -> StopRule {
    StopRule { max_iter, tol, divergence_bound: None }
}

/// Piecewise-linear K∞ function.
#[pyclass(name = "KFun", module = "sglab", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyKFun(KFun);

#[pymethods]
impl PyKFun {
    /// Breakpoints starting at `(0, 0)` and the slope past the last one.
    #[new]
    fn new(points: Vec<(f64, f64)>, final_slope: f64) -> PyResult<Self> {
        KFun::new(points, final_slope).map(PyKFun).map_err(err)
    }

    #[staticmethod]
    fn linear(k: f64) -> PyResult<Self> {
        KFun::linear(k).map(PyKFun).map_err(err)
    }

    #[staticmethod]
    fn identity() -> Self {
        PyKFun(KFun::identity())
    }

    fn __call__(&self, r: f64) -> PyResult<f64> {
        self.0.try_eval(r).map_err(err)
    }

    fn inverse(&self) -> Self {
        PyKFun(self.0.inverse())
    }

    /// `self ∘ inner`.
    fn compose(&self, inner: &PyKFun) -> Self {
        PyKFun(self.0.compose(&inner.0))
    }

    fn add(&self, other: &PyKFun) -> Self {
        PyKFun(self.0.add(&other.0))
    }

    fn id_plus(&self) -> Self {
        PyKFun(self.0.id_plus())
    }

    /// η with `(id + ρ)⁻¹ = id − η`.
    fn sub_from_id(&self) -> PyResult<Self> {
        sglab_core::kinfty::sub_from_id(&self.0).map(PyKFun).map_err(err)
    }

    #[getter]
    fn points(&self) -> Vec<(f64, f64)> {
        self.0.points().collect()
    }

    #[getter]
    fn final_slope(&self) -> f64 {
        self.0.final_slope()
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

/// Gain network built from the JSON network format.
#[pyclass(name = "Network", module = "sglab", frozen)]
struct PyNetwork(GainNetwork);

#[pymethods]
impl PyNetwork {
    /// `n` overrides the node count of template networks.
    #[staticmethod]
    #[pyo3(signature = (text, n=None))]
    fn from_json(text: &str, n: Option<usize>) -> PyResult<Self> {
        let spec: NetworkSpec = serde_json::from_str(text).map_err(err)?;
        spec.build(n).map(PyNetwork).map_err(err)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.0.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.0.graph().edge_count()
    }

    fn is_max_type(&self) -> bool {
        self.0.is_max_type()
    }

    fn is_homogeneous(&self) -> bool {
        self.0.is_homogeneous()
    }

    /// Gain on the edge `from → to`, if present.
    fn gain(&self, from: usize, to: usize) -> Option<PyKFun> {
        self.0.gain(from, to).cloned().map(PyKFun)
    }

    fn operator(&self) -> PyOperator {
        PyOperator(self.0.clone().into())
    }
}

/// Gain operator `Γ` and its enlarged, augmented and projected variants.
#[pyclass(name = "Operator", module = "sglab", frozen)]
struct PyOperator(GainOperator);

#[pymethods]
impl PyOperator {
    #[new]
    fn new(network: &PyNetwork) -> Self {
        PyOperator(network.0.clone().into())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    /// `(id + ρ) ∘ Γ`.
    fn enlarge_left(&self, rho: &PyKFun) -> Self {
        PyOperator(self.0.enlarge_left(&rho.0))
    }

    /// `Γ ∘ (id + ρ)`.
    fn enlarge_right(&self, rho: &PyKFun) -> Self {
        PyOperator(self.0.enlarge_right(&rho.0))
    }

    /// `id ⊕ Γ`.
    fn augmented(&self) -> Self {
        PyOperator(self.0.augmented())
    }

    /// `b ⊕ Γ`.
    fn projected(&self, b: Vec<f64>) -> PyResult<Self> {
        self.0.projected(&cone(b)?).map(PyOperator).map_err(err)
    }

    fn restricted(&self, nodes: Vec<usize>) -> PyResult<Self> {
        self.0.restricted(&nodes).map(PyOperator).map_err(err)
    }

    fn apply(&self, s: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.0.apply(&cone(s)?).map_err(err)?.into_vec())
    }

    fn apply_n(&self, s: Vec<f64>, n: usize) -> PyResult<Vec<f64>> {
        Ok(self.0.apply_n(&cone(s)?, n).map_err(err)?.into_vec())
    }
}

/// Decay path as knots `r_grid` and points, linearly interpolated.
#[pyclass(name = "DecayPath", module = "sglab", frozen)]
struct PyDecayPath(DecayPath);

#[pymethods]
impl PyDecayPath {
    #[getter]
    fn r_grid(&self) -> Vec<f64> {
        self.0.r_grid.clone()
    }

    #[getter]
    fn points(&self) -> Vec<Vec<f64>> {
        self.0.points.iter().map(|p| p.as_slice().to_vec()).collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __call__(&self, r: f64) -> PyResult<Vec<f64>> {
        if !(r >= 0.0) {
            return Err(PyValueError::new_err(format!("path evaluated at {r}")));
        }
        Ok(self.0.eval(r).into_vec())
    }

    /// Validation report as a dict; `strict` and `c0` hold the verdicts.
    fn validate<'py>(&self, py: Python<'py>, op: &PyOperator) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &path::validate(&self.0, &op.0).map_err(err)?)
    }

    #[pyo3(signature = (target_rho=None, max_knots=path::DEFAULT_MAX_KNOTS))]
    fn regularize(&self, target_rho: Option<&PyKFun>, max_knots: usize) -> PyResult<Self> {
        path::regularize(&self.0, target_rho.map(|k| &k.0), max_knots).map(PyDecayPath).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        Ok(sglab_core::report::path_json(&self.0))
    }
}

/// States of `sⁿ⁺¹ = Γ(sⁿ)` and the stop reason.
#[pyfunction]
#[pyo3(signature = (op, s0, max_iter=100_000, tol=1e-10))]
fn iterate<'py>(py: Python<'py>, op: &PyOperator, s0: Vec<f64>, max_iter: usize, tol: f64) -> PyResult<(Vec<Vec<f64>>, Bound<'py, PyAny>)> {
    let t = dynamics::iterate(&op.0, &cone(s0)?, &rule(max_iter, tol)).map_err(err)?;
    let states = t.states.into_iter().map(ConeVec::into_vec).collect();
    Ok((states, to_py(py, &t.stop)?))
}

/// `s_*(b)`; raises when the iteration does not converge.
#[pyfunction]
#[pyo3(signature = (op, b, max_iter=100_000, tol=1e-10))]
fn min_fixed_point(op: &PyOperator, b: Vec<f64>, max_iter: usize, tol: f64) -> PyResult<Vec<f64>> {
    let fp = dynamics::min_fixed_point(&op.0, &cone(b)?, &rule(max_iter, tol)).map_err(err)?;
    if !fp.converged() {
        return Err(PyValueError::new_err(format!("no convergence: {:?}", fp.stop)));
    }
    Ok(fp.point.into_vec())
}

/// `s^*(b)`.
#[pyfunction]
#[pyo3(signature = (op, b, r_cap=None, max_iter=100_000, tol=1e-10))]
fn max_fixed_point(op: &PyOperator, b: Vec<f64>, r_cap: Option<f64>, max_iter: usize, tol: f64) -> PyResult<Vec<f64>> {
    Ok(dynamics::max_fixed_point(&op.0, &cone(b)?, r_cap, &rule(max_iter, tol)).map_err(err)?.point.into_vec())
}

#[pyfunction]
#[pyo3(signature = (op, budget=10_000, seed=0, lo=1e-3, hi=1e3))]
fn nji_probe<'py>(py: Python<'py>, op: &PyOperator, budget: usize, seed: u64, lo: f64, hi: f64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &checks::nji_probe(&op.0, &Sampler::new(seed, budget, (lo, hi))).map_err(err)?)
}

/// Uniform NJI at radius `r` and threshold `eps` with `δ ∈ {2⁻⁸, …, 1}`.
#[pyfunction]
#[pyo3(signature = (op, r, eps, n_max, budget=10_000, seed=0, lo=1e-3, hi=1e3))]
#[allow(clippy::too_many_arguments)]
fn uniform_nji_probe<'py>(
    py: Python<'py>,
    op: &PyOperator,
    r: f64,
    eps: f64,
    n_max: usize,
    budget: usize,
    seed: u64,
    lo: f64,
    hi: f64,
) -> PyResult<Bound<'py, PyAny>> {
    let params = UniformNjiParams::dyadic(r, eps, n_max);
    to_py(py, &checks::uniform_nji_probe(&op.0, &params, &Sampler::new(seed, budget, (lo, hi))).map_err(err)?)
}

#[pyfunction]
fn max_mbi_probe<'py>(py: Python<'py>, op: &PyOperator, r_grid: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &checks::max_mbi_probe(&op.0, &r_grid, &StopRule::default()).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (network, rho=None, grid=None, budget=100_000))]
fn cycle_gain_check<'py>(py: Python<'py>, network: &PyNetwork, rho: Option<&PyKFun>, grid: Option<Vec<f64>>, budget: usize) -> PyResult<Bound<'py, PyAny>> {
    let grid = grid.unwrap_or_else(|| path::geometric_grid(-10, 10));
    to_py(py, &checks::cycle_gain_check(&network.0, rho.map(|k| &k.0), &grid, budget).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (op, n_max=64, seed=0))]
fn spectral_condition<'py>(py: Python<'py>, op: &PyOperator, n_max: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &checks::spectral_condition(&op.0, n_max, seed).map_err(err)?)
}

/// Rays `r𝟙` over `r_grid`: KL table, UGS and GATT verdicts.
#[pyfunction]
#[pyo3(signature = (op, r_grid, n_max=200))]
fn stability_battery<'py>(py: Python<'py>, op: &PyOperator, r_grid: Vec<f64>, n_max: usize) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &dynamics::stability_battery(&op.0, &r_grid, n_max, &StopRule::default()).map_err(err)?)
}

/// `2^lo, 2^(lo+1), …, 2^hi`.
#[pyfunction]
fn geometric_grid(lo: i32, hi: i32) -> Vec<f64> {
    path::geometric_grid(lo, hi)
}

#[pyfunction]
#[pyo3(signature = (op, rho=None, r_grid=None))]
fn minimal_path(op: &PyOperator, rho: Option<&PyKFun>, r_grid: Option<Vec<f64>>) -> PyResult<PyDecayPath> {
    let grid = r_grid.unwrap_or_else(path::default_grid);
    path::minimal_path(&op.0, rho.map(|k| &k.0), &grid, &StopRule::default()).map(PyDecayPath).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (op, rho=None, r_grid=None, m_interp=16))]
fn combined_path(op: &PyOperator, rho: Option<&PyKFun>, r_grid: Option<Vec<f64>>, m_interp: usize) -> PyResult<PyDecayPath> {
    let grid = r_grid.unwrap_or_else(path::default_grid);
    path::combined_path(&op.0, rho.map(|k| &k.0), &grid, m_interp, &StopRule::default()).map(PyDecayPath).map_err(err)
}

#[pymodule]
fn sglab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKFun>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyOperator>()?;
    m.add_class::<PyDecayPath>()?;
    m.add_function(wrap_pyfunction!(iterate, m)?)?;
    m.add_function(wrap_pyfunction!(min_fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(max_fixed_point, m)?)?;
    m.add_function(wrap_pyfunction!(nji_probe, m)?)?;
    m.add_function(wrap_pyfunction!(uniform_nji_probe, m)?)?;
    m.add_function(wrap_pyfunction!(max_mbi_probe, m)?)?;
    m.add_function(wrap_pyfunction!(cycle_gain_check, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_condition, m)?)?;
    m.add_function(wrap_pyfunction!(stability_battery, m)?)?;
    m.add_function(wrap_pyfunction!(geometric_grid, m)?)?;
    m.add_function(wrap_pyfunction!(minimal_path, m)?)?;
    m.add_function(wrap_pyfunction!(combined_path, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
