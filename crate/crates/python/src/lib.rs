//! Python bindings: `import nodal`.

use nodal_core as core;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde::Serialize;
use serde_json::Value;

fn err(e: core::Error) -> PyErr {
    if e.is_domain() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let items = a.iter().map(|x| to_py(py, x)).collect::<PyResult<Vec<_>>>()?;
            PyList::new(py, items)?.into_any()
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn ser<'py, T: Serialize>(py: Python<'py>, x: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(x).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

#[pyclass(name = "PhiSpec", module = "nodal", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPhi(core::PhiSpec);

#[pymethods]
impl PyPhi {
    #[staticmethod]
    fn power(p: f64) -> PyResult<Self> {
        core::PhiSpec::power(p).map(PyPhi).map_err(err)
    }

    #[staticmethod]
    fn sum_of_powers(p: f64, q: f64) -> PyResult<Self> {
        core::PhiSpec::sum_of_powers(p, q).map(PyPhi).map_err(err)
    }

    /// `phi` and optional `dphi` are expressions in `t`.
    #[staticmethod]
    #[pyo3(signature = (phi, gamma1, gamma2, dphi=None))]
    fn custom(phi: &str, gamma1: f64, gamma2: f64, dphi: Option<&str>) -> PyResult<Self> {
        let phi = core::ScalarFn::parse(phi).map_err(err)?;
        let dphi = dphi.map(core::ScalarFn::parse).transpose().map_err(err)?;
        core::PhiSpec::custom(phi, dphi, gamma1, gamma2).map(PyPhi).map_err(err)
    }

    #[getter]
    fn gamma1(&self) -> f64 {
        self.0.gamma1()
    }

    #[getter]
    fn gamma2(&self) -> f64 {
        self.0.gamma2()
    }

    fn phi(&self, t: f64) -> f64 {
        self.0.phi(t)
    }

    fn h(&self, t: f64) -> PyResult<f64> {
        self.0.h_eval(t).map_err(err)
    }

    fn h_inverse(&self, s: f64) -> PyResult<f64> {
        self.0.h_inverse(s).map_err(err)
    }

    #[pyo3(name = "Phi")]
    fn big_phi(&self, t: f64) -> PyResult<f64> {
        self.0.Phi_eval(t).map_err(err)
    }

    #[pyo3(name = "H")]
    fn big_h(&self, t: f64) -> PyResult<f64> {
        self.0.H_eval(t).map_err(err)
    }

    fn validate<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        ser(py, &core::validate_phi(&self.0))
    }

    fn __repr__(&self) -> String {
        format!("PhiSpec({})", self.0.describe())
    }
}

#[pyclass(name = "FSpec", module = "nodal", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyF(core::FSpec);

#[pymethods]
impl PyF {
    #[staticmethod]
    #[pyo3(signature = (delta, d_infinity=1.0))]
    fn power(delta: f64, d_infinity: f64) -> PyResult<Self> {
        core::FSpec::power(delta, d_infinity).map(PyF).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (d_infinity=1.0))]
    fn arctan(d_infinity: f64) -> PyResult<Self> {
        core::FSpec::arctan(d_infinity).map(PyF).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (expr, d_infinity=1.0))]
    fn custom(expr: &str, d_infinity: f64) -> PyResult<Self> {
        let f = core::ScalarFn::parse(expr).map_err(err)?;
        core::FSpec::custom(f, d_infinity).map(PyF).map_err(err)
    }

    #[getter]
    fn d_infinity(&self) -> f64 {
        self.0.d_infinity()
    }

    fn f(&self, t: f64) -> f64 {
        self.0.f_eval(t)
    }

    #[pyo3(name = "F")]
    fn big_f(&self, t: f64) -> f64 {
        self.0.F_eval(t)
    }

    #[pyo3(signature = (gamma1, probe=None))]
    fn validate<'py>(&self, py: Python<'py>, gamma1: f64, probe: Option<f64>) -> PyResult<Bound<'py, PyAny>> {
        let probe = probe.unwrap_or(self.0.d_infinity());
        let rep = core::validate_f(&self.0, gamma1, probe).map_err(err)?;
        ser(py, &rep)
    }

    fn __repr__(&self) -> String {
        format!("FSpec({})", self.0.describe())
    }
}

#[pyclass(name = "ProblemParams", module = "nodal", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyParams(core::ProblemParams);

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (alpha, gamma, lam, radius, d=1.0))]
    fn new(alpha: f64, gamma: f64, lam: f64, radius: f64, d: f64) -> Self {
        PyParams(core::ProblemParams::new(alpha, gamma, lam, radius, d))
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.0.gamma
    }

    #[getter]
    fn lam(&self) -> f64 {
        self.0.lambda
    }

    #[getter]
    fn radius(&self) -> f64 {
        self.0.radius
    }

    #[getter]
    fn d(&self) -> f64 {
        self.0.d
    }

    fn with_d(&self, d: f64) -> Self {
        PyParams(self.0.with_d(d))
    }

    fn __repr__(&self) -> String {
        let p = &self.0;
        format!(
            "ProblemParams(alpha={}, gamma={}, lam={}, radius={}, d={})",
            p.alpha, p.gamma, p.lambda, p.radius, p.d
        )
    }
}

#[pyclass(name = "Trajectory", module = "nodal", frozen)]
struct PyTrajectory(core::Trajectory);

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn r(&self) -> Vec<f64> {
        self.0.r.clone()
    }

    #[getter]
    fn u(&self) -> Vec<f64> {
        self.0.u.clone()
    }

    #[getter]
    fn du(&self) -> Vec<f64> {
        self.0.du.clone()
    }

    #[getter]
    fn v(&self) -> Vec<f64> {
        self.0.v.clone()
    }

    #[getter]
    fn status(&self) -> String {
        serde_json::to_value(self.0.status)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default()
    }

    #[getter]
    fn sign_changes(&self) -> usize {
        self.0.sign_changes
    }

    fn u_at(&self, r: f64) -> f64 {
        self.0.u_at(r)
    }

    fn du_at(&self, r: f64) -> f64 {
        self.0.du_at(r)
    }

    fn write_csv(&self, path: std::path::PathBuf) -> PyResult<()> {
        let file = std::fs::File::create(&path).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        self.0
            .write_csv(std::io::BufWriter::new(file), &[])
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

fn solver(abs_tol: f64, rel_tol: f64) -> core::SolverOptions {
    core::SolverOptions {
        abs_tol,
        rel_tol,
        ..Default::default()
    }
}

/// Solves the initial value problem from `u(0) = params.d` on `[0, r_max]`.
#[pyfunction]
#[pyo3(signature = (params, phi, f, r_max, max_zero_count=None, abs_tol=1e-10, rel_tol=1e-10))]
fn integrate(
    py: Python<'_>,
    params: &PyParams,
    phi: &PyPhi,
    f: &PyF,
    r_max: f64,
    max_zero_count: Option<usize>,
    abs_tol: f64,
    rel_tol: f64,
) -> PyResult<PyTrajectory> {
    let opts = solver(abs_tol, rel_tol);
    py.detach(|| core::integrate_trajectory(&params.0, &phi.0, &f.0, r_max, max_zero_count, &opts))
        .map(PyTrajectory)
        .map_err(err)
}

#[pyfunction]
fn zeros<'py>(py: Python<'py>, traj: &PyTrajectory, count: usize) -> PyResult<Bound<'py, PyAny>> {
    ser(py, &core::zeros_of(&traj.0, count))
}

#[pyfunction]
fn lambda_threshold(phi: &PyPhi, f: &PyF, alpha: f64, gamma: f64, radius: f64, d_infinity: f64) -> PyResult<f64> {
    core::lambda_threshold(&phi.0, &f.0, alpha, gamma, radius, d_infinity).map_err(err)
}

#[pyfunction]
fn integral_residual(traj: &PyTrajectory, params: &PyParams, phi: &PyPhi, f: &PyF) -> f64 {
    core::integral_residual(&traj.0, &params.0.with_d(traj.0.d()), &phi.0, &f.0)
}

/// Positive solution and `levels` sign-changing solutions. Returns a dict with
/// `d_levels`, `zero_counts`, `lambda_used`, `tolerances` and `profiles`.
#[pyfunction]
#[pyo3(signature = (params, phi, f, levels))]
fn solve_problem<'py>(
    py: Python<'py>,
    params: &PyParams,
    phi: &PyPhi,
    f: &PyF,
    levels: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = core::ShootingOptions::default();
    let res = py
        .detach(|| core::solve_problem(&params.0, &phi.0, &f.0, levels, &opts))
        .map_err(|p| err(p.into()))?;
    let out = PyDict::new(py);
    out.set_item("d_levels", res.d_levels.clone())?;
    out.set_item("zero_counts", res.zero_counts.clone())?;
    out.set_item("lambda_used", res.lambda_used)?;
    out.set_item("tolerances", ser(py, &res.tolerances)?)?;
    let profiles = res
        .profiles
        .into_iter()
        .map(|t| Py::new(py, PyTrajectory(t)))
        .collect::<PyResult<Vec<_>>>()?;
    out.set_item("profiles", profiles)?;
    Ok(out)
}

#[pyfunction]
fn energy_profile<'py>(
    py: Python<'py>,
    traj: &PyTrajectory,
    params: &PyParams,
    phi: &PyPhi,
    f: &PyF,
) -> PyResult<Bound<'py, PyAny>> {
    ser(py, &core::energy_profile(&traj.0, &params.0.with_d(traj.0.d()), &phi.0, &f.0))
}

#[pyfunction]
fn check_prop1<'py>(
    py: Python<'py>,
    traj: &PyTrajectory,
    params: &PyParams,
    phi: &PyPhi,
    f: &PyF,
) -> PyResult<Bound<'py, PyAny>> {
    ser(py, &core::check_prop1(&traj.0, &params.0.with_d(traj.0.d()), &phi.0, &f.0))
}

#[pyfunction]
#[pyo3(signature = (phi, samples=10_000))]
fn check_bounds_suite<'py>(py: Python<'py>, phi: &PyPhi, samples: usize) -> PyResult<Bound<'py, PyAny>> {
    ser(py, &core::check_bounds_suite(&phi.0, samples))
}

#[pyfunction]
#[pyo3(signature = (phi, dim, trials=10_000))]
fn check_simon<'py>(py: Python<'py>, phi: &PyPhi, dim: usize, trials: usize) -> PyResult<Bound<'py, PyAny>> {
    ser(py, &core::check_simon(&phi.0, dim, trials))
}

#[pymodule]
fn nodal(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPhi>()?;
    m.add_class::<PyF>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(zeros, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(integral_residual, m)?)?;
    m.add_function(wrap_pyfunction!(solve_problem, m)?)?;
    m.add_function(wrap_pyfunction!(energy_profile, m)?)?;
    m.add_function(wrap_pyfunction!(check_prop1, m)?)?;
    m.add_function(wrap_pyfunction!(check_bounds_suite, m)?)?;
    m.add_function(wrap_pyfunction!(check_simon, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
