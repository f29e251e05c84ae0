//! Python bindings: systems, dispersion, the audit, envelope coefficients and the sweeps.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use wavepack::audit::{audit as run_audit, AuditOptions, Theorem};
use wavepack::dispersion::{carrier_dispersion, eigendecompose, BranchPolicy};
use wavepack::harness::{self, ExperimentConfig};
use wavepack::multipacket::{interaction_experiment, InteractionSetup};
use wavepack::nls::derive_nls_params;
use wavepack::system::{builtin_by_name, format_system, load_system, parse_system, SystemSpec};
use wavepack::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::AuditFailed(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// A validated first-order system `U_t = A U_x + E U + T2(U,U) + T3(U,U,U)`.
#[pyclass(name = "System", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySystem {
    spec: SystemSpec,
}

#[pymethods]
impl PySystem {
    /// Built-in by name: kg, kg-linear, example2, example2-cubic, transport.
    #[staticmethod]
    fn builtin(name: &str) -> PyResult<Self> {
        builtin_by_name(name)
            .map(|spec| Self { spec })
            .ok_or_else(|| PyValueError::new_err(format!("unknown built-in system '{name}'")))
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        parse_system(text).map(|spec| Self { spec }).map_err(err)
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        load_system(std::path::Path::new(path)).map(|spec| Self { spec }).map_err(err)
    }

    fn to_toml(&self) -> String {
        format_system(&self.spec)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.spec.dim
    }

    #[getter]
    fn label(&self) -> String {
        self.spec.label.clone()
    }

    #[getter]
    fn has_quadratic(&self) -> bool {
        self.spec.has_quadratic()
    }

    /// Branch frequencies at each `k`, ascending: one list per branch.
    fn omega(&self, ks: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let mut sorted = ks.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let data = eigendecompose(&self.spec, &sorted, BranchPolicy::continuous()).map_err(err)?;
        Ok((0..data.dim())
            .map(|b| ks.iter().map(|&k| data.omega_at(b, k)).collect::<Result<Vec<_>, _>>())
            .collect::<Result<_, _>>()
            .map_err(err)?)
    }

    /// `(omega0, c, nu1, nu2)` of the envelope equation for carrier `(n0, k0)`.
    #[pyo3(signature = (k0, n0 = 0))]
    fn nls_coefficients(&self, k0: f64, n0: usize) -> PyResult<(f64, f64, (f64, f64), (f64, f64))> {
        let data = carrier_dispersion(&self.spec, k0).map_err(err)?;
        let (p, _) = derive_nls_params(&self.spec, &data, n0, k0, 3).map_err(err)?;
        Ok((p.omega0, p.c, (p.nu1.re, p.nu1.im), (p.nu2.re, p.nu2.im)))
    }

    /// Non-resonance audit: `(pass, table, report_json)`.
    #[pyo3(signature = (k0, n0 = 0, multi = false))]
    fn audit(&self, k0: f64, n0: usize, multi: bool) -> PyResult<(bool, String, String)> {
        let data = carrier_dispersion(&self.spec, k0).map_err(err)?;
        let mut opts = AuditOptions::new(n0, k0);
        if multi {
            opts.theorem = Theorem::MultiPacket;
        }
        let rep = run_audit(&self.spec, &data, &opts).map_err(err)?;
        Ok((rep.pass(), rep.table(), rep.to_json().map_err(err)?))
    }

    fn __repr__(&self) -> String {
        format!("System('{}', dim={})", self.spec.label, self.spec.dim)
    }
}

fn config(toml_text: &str) -> PyResult<ExperimentConfig> {
    ExperimentConfig::from_toml(toml_text).map_err(err)
}

/// Least-squares order fit of `(eps, error)` pairs: `(slope, intercept, r_squared)`.
#[pyfunction]
fn fit_order(pairs: Vec<(f64, f64)>) -> PyResult<(f64, f64, f64)> {
    let f = harness::fit_order(&pairs).map_err(err)?;
    Ok((f.slope, f.intercept, f.r_squared))
}

/// Error sweep from an experiment file's text; returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (toml_text, canonical = false))]
fn converge(py: Python<'_>, toml_text: &str, canonical: bool) -> PyResult<String> {
    let cfg = config(toml_text)?;
    let rep = py.detach(|| harness::run_convergence(&cfg)).map_err(err)?;
    if canonical {
        harness::canonical_json(&rep).map_err(err)
    } else {
        harness::to_json(&rep).map_err(err)
    }
}

#[pyfunction]
fn residual_sweep(py: Python<'_>, toml_text: &str) -> PyResult<String> {
    let cfg = config(toml_text)?;
    let rep = py.detach(|| harness::run_residual_sweep(&cfg)).map_err(err)?;
    harness::to_json(&rep).map_err(err)
}

/// Two-packet collision; returns the interaction report as JSON.
#[pyfunction]
#[pyo3(signature = (system, k0, eps, t0 = 2.0, branches = (0, 1), amplitudes = (1.0, 1.0)))]
fn interact(py: Python<'_>, system: &PySystem, k0: f64, eps: f64, t0: f64, branches: (usize, usize), amplitudes: (f64, f64)) -> PyResult<String> {
    let mut setup = InteractionSetup::new(k0, [branches.0, branches.1], eps, t0);
    setup.amplitudes = [amplitudes.0, amplitudes.1];
    let spec = system.spec.clone();
    let rep = py.detach(|| interaction_experiment(&spec, &setup)).map_err(err)?;
    harness::to_json(&rep).map_err(err)
}

#[pymodule]
#[pyo3(name = "wavepack")]
fn wavepack_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", harness::CODE_VERSION)?;
    m.add_class::<PySystem>()?;
    m.add_function(wrap_pyfunction!(fit_order, m)?)?;
    m.add_function(wrap_pyfunction!(converge, m)?)?;
    m.add_function(wrap_pyfunction!(residual_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(interact, m)?)?;
    Ok(())
}
