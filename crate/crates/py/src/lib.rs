//! Python bindings: configs, scenario runs, DFS scans and the closed-form
//! helpers, with complex numbers passed as Python `complex`.

use std::path::PathBuf;

use num_complex::Complex64 as C64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use cohprod::ansatz::{assemble_density, pump_lattice_displacements, pump_phonon_drive, PropagationOptions};
use cohprod::bath::{BathSpec, Displacement, Mode};
use cohprod::config::{validate_config as validate, BuiltModel, ExperimentConfig};
use cohprod::model::PumpSpec;
use cohprod::oracle::{compare_reduced, exact_propagate_density, OracleConfig};
use cohprod::scenarios::{initial_state, run_experiment as run, RunReport};

fn err(e: cohprod::Error) -> PyErr {
    match e {
        cohprod::Error::Config(_) | cohprod::Error::InvalidArgument(_) | cohprod::Error::DimensionMismatch { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse(text: &str) -> PyResult<ExperimentConfig> {
    validate(text).map_err(|errs| PyValueError::new_err(errs.join("; ")))
}

#[pyclass(name = "Bath", frozen)]
struct PyBath {
    inner: BathSpec,
}

#[pymethods]
impl PyBath {
    #[new]
    #[pyo3(signature = (omegas, n_cuts, temperature = 0.0))]
    fn new(omegas: Vec<f64>, n_cuts: Vec<usize>, temperature: f64) -> PyResult<Self> {
        if omegas.len() != n_cuts.len() {
            return Err(PyValueError::new_err("omegas and n_cuts differ in length"));
        }
        let modes = omegas.into_iter().zip(n_cuts).map(|(omega, n_cut)| Mode { omega, n_cut }).collect();
        Ok(Self {
            inner: BathSpec::new(modes, temperature).map_err(err)?,
        })
    }

    #[getter]
    fn n_modes(&self) -> usize {
        self.inner.n_modes()
    }

    #[getter]
    fn temperature(&self) -> f64 {
        self.inner.temperature()
    }

    fn theta(&self, q: usize) -> PyResult<f64> {
        if q >= self.inner.n_modes() {
            return Err(PyValueError::new_err("mode index out of range"));
        }
        Ok(self.inner.theta(q))
    }

    /// Tr(γ₂† γ₁) for two displacement vectors.
    fn gaussian_overlap(&self, beta1: Vec<C64>, beta2: Vec<C64>) -> PyResult<C64> {
        cohprod::bath::gaussian_overlap(&Displacement(beta1), &Displacement(beta2), &self.inner).map_err(err)
    }

    fn dephasing_exponent(&self, beta1: Vec<C64>, beta2: Vec<C64>) -> PyResult<f64> {
        cohprod::bath::dephasing_exponent(&Displacement(beta1), &Displacement(beta2), &self.inner).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Bath(n_modes={}, temperature={})", self.inner.n_modes(), self.inner.temperature())
    }
}

#[pyclass(name = "Subspace", frozen, get_all)]
struct PySubspace {
    dim: usize,
    is_dfs: bool,
    is_complement: bool,
    mu: Vec<C64>,
    eigen_residual: f64,
    adjoint_residual: f64,
}

#[pyclass(name = "Model", frozen)]
struct PyModel {
    built: BuiltModel,
}

#[pymethods]
impl PyModel {
    /// Build the model described by the `[model]` table of a config document.
    #[staticmethod]
    fn from_config(text: &str) -> PyResult<Self> {
        Ok(Self {
            built: parse(text)?.build_model().map_err(err)?,
        })
    }

    #[getter]
    fn lattice_dim(&self) -> usize {
        self.built.working().lattice.dim()
    }

    #[getter]
    fn n_modes(&self) -> usize {
        self.built.working().bath.n_modes()
    }

    fn dfs_scan(&self) -> Vec<PySubspace> {
        cohprod::dfs::scan_dfs(self.built.working())
            .into_iter()
            .map(|r| PySubspace {
                dim: r.dim(),
                is_dfs: r.is_dfs,
                is_complement: r.is_complement,
                mu: r.mu.clone(),
                eigen_residual: r.residuals.0,
                adjoint_residual: r.residuals.1,
            })
            .collect()
    }
}

#[pyclass(name = "RunReport", frozen)]
struct PyRunReport {
    inner: RunReport,
}

#[pymethods]
impl PyRunReport {
    #[getter]
    fn scenario(&self) -> String {
        self.inner.scenario.clone()
    }

    #[getter]
    fn passed(&self) -> bool {
        self.inner.passed()
    }

    #[getter]
    fn outcome(&self) -> String {
        serde_json::to_value(self.inner.outcome).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
    }

    /// (name, passed, value, threshold) per check.
    #[getter]
    fn checks(&self) -> Vec<(String, bool, f64, f64)> {
        self.inner.checks.iter().map(|c| (c.name.clone(), c.passed, c.value, c.threshold)).collect()
    }

    #[getter]
    fn outputs(&self) -> Vec<String> {
        self.inner.outputs.clone()
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }
}

/// Every violation in a config document; empty when it is valid.
#[pyfunction]
fn validate_config(text: &str) -> Vec<String> {
    validate(text).err().unwrap_or_default()
}

#[pyfunction]
fn list_scenarios() -> Vec<&'static str> {
    cohprod::config::SCENARIOS.to_vec()
}

#[pyfunction]
fn run_experiment(py: Python<'_>, text: &str, output_root: PathBuf) -> PyResult<PyRunReport> {
    let cfg = parse(text)?;
    let report = py.detach(|| run(&cfg, &output_root)).map_err(err)?;
    Ok(PyRunReport { inner: report })
}

/// Largest (lattice, phonon) trace distances between the ansatz and the exact oracle.
#[pyfunction]
fn compare_with_oracle(py: Python<'_>, text: &str) -> PyResult<(f64, f64)> {
    let cfg = parse(text)?;
    py.detach(|| {
        let built = cfg.build_model()?;
        let model = built.working();
        let state = initial_state(&cfg, &built)?;
        let mut opts = PropagationOptions::new(cfg.run.dt, cfg.n_steps());
        opts.sample_stride = cfg.run.sample_stride;
        let (_, rec) = state.propagate(model, &opts, true)?;
        let mut ocfg = OracleConfig::new(cfg.run.dt, cfg.n_steps());
        ocfg.sample_stride = cfg.run.sample_stride;
        let oracle = exact_propagate_density(model, &assemble_density(&state)?.full, &ocfg)?;
        let cmp = compare_reduced(&rec, &oracle.record)?;
        Ok((cmp.max_lattice, cmp.max_phonon))
    })
    .map_err(err)
}

#[pyfunction]
fn displacement_closed_form(beta0: C64, omega: f64, mu: C64, t: f64) -> PyResult<C64> {
    cohprod::ansatz::displacement_closed_form(beta0, omega, mu, t).map_err(err)
}

#[pyfunction]
fn energy_shift(mu: Vec<C64>, beta: Vec<C64>) -> PyResult<f64> {
    cohprod::ansatz::energy_shift(&mu, &Displacement(beta)).map_err(err)
}

#[pyfunction]
fn gamma_relaxation(t: f64, lambdas: Vec<C64>, bath: &PyBath) -> PyResult<f64> {
    cohprod::dimer::gamma_relaxation(t, &lambdas, &bath.inner).map_err(err)
}

#[pyfunction]
fn delta_omega(chi: Vec<C64>, lambdas: Vec<C64>, omegas: Vec<f64>) -> PyResult<f64> {
    cohprod::dimer::delta_omega(&chi, &lambdas, &omegas).map_err(err)
}

/// Phonon drive of a single-Q ring pump, one value per mode.
#[pyfunction]
#[pyo3(signature = (n_sites, k, zeta_plus, zeta_minus, chi, epsilon = 1.0, hopping = 0.0, t = 0.0))]
#[allow(clippy::too_many_arguments)]
fn pump_drive(n_sites: usize, k: usize, zeta_plus: C64, zeta_minus: C64, chi: Vec<C64>, epsilon: f64, hopping: f64, t: f64) -> PyResult<Vec<C64>> {
    if chi.len() != n_sites {
        return Err(PyValueError::new_err("one coupling per ring mode is required"));
    }
    let pump = PumpSpec::single_q(n_sites, k, zeta_plus, zeta_minus).map_err(err)?;
    Ok(pump_phonon_drive(&chi, &pump_lattice_displacements(&pump, epsilon, hopping, t)))
}

#[pymodule]
fn cohprod_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBath>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PySubspace>()?;
    m.add_class::<PyRunReport>()?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(list_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(compare_with_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(displacement_closed_form, m)?)?;
    m.add_function(wrap_pyfunction!(energy_shift, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_relaxation, m)?)?;
    m.add_function(wrap_pyfunction!(delta_omega, m)?)?;
    m.add_function(wrap_pyfunction!(pump_drive, m)?)?;
    Ok(())
}
