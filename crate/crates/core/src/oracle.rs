//! Exact reference dynamics on the truncated lattice ⊗ Fock space.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::ansatz::{Source, TrajectoryRecord};
use crate::bath::{coherent_state, BathSpec, Displacement, Mode};
use crate::error::{Error, Result};
use crate::model::{full_hamiltonian, Model};
use crate::operator::{boson_ladder, commutator, expm_apply, kron_vec, matrix_exponential, partial_trace, trace_distance, ComplexMatrix, HermitianPropagator, ProductSpace, StateVector, I, ONE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Exact eigen-stepping for static Hamiltonians, midpoint exponential otherwise.
    ExponentialStep,
    Rk4,
    MidpointExponential,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    /// Per-mode Fock cutoffs overriding the model's bath; `None` keeps them.
    pub n_cut: Option<Vec<usize>>,
    pub dt: f64,
    pub n_steps: usize,
    pub sample_stride: usize,
    pub integrator: Integrator,
    /// Allowed drift of the norm or trace before the run is stopped.
    pub tolerance: f64,
}

impl OracleConfig {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        Self {
            n_cut: None,
            dt,
            n_steps,
            sample_stride: 1,
            integrator: Integrator::ExponentialStep,
            tolerance: 1e-8,
        }
    }

    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        if self.sample_stride == 0 {
            return Err(Error::InvalidArgument("sample stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Final state together with the sampled record.
#[derive(Clone, Debug)]
pub struct OracleRun<S> {
    pub record: TrajectoryRecord,
    pub final_state: S,
}

fn oracle_model(model: &Model, cfg: &OracleConfig) -> Result<Model> {
    match &cfg.n_cut {
        None => Ok(model.clone()),
        Some(cuts) => Model::new(model.kind, model.lattice.clone(), model.bath.with_n_cut(cuts)?, model.couplings.clone()),
    }
}

/// |α⟩ ⊗ |β_0⟩ ⊗ |β_1⟩ ⊗ ... with the given Fock truncation.
pub fn product_state(lattice: &StateVector, beta: &Displacement, bath: &BathSpec) -> Result<StateVector> {
    if beta.len() != bath.n_modes() {
        return Err(Error::DimensionMismatch {
            context: "product state displacements vs modes",
            expected: bath.n_modes(),
            found: beta.len(),
        });
    }
    let mut v = lattice.clone();
    for (q, b) in beta.0.iter().enumerate() {
        v = kron_vec(&v, &coherent_state(*b, bath.modes()[q])?);
    }
    Ok(v)
}

/// ⟨b_q⟩ from a reduced phonon matrix over all modes.
pub fn mode_mean(rho_ph: &ComplexMatrix, bath: &BathSpec, q: usize) -> Result<C64> {
    let space = ProductSpace::new(bath.phonon_dims().into_iter().enumerate().map(|(k, d)| (format!("mode{k}"), d)).collect())?;
    let rho_q = partial_trace(rho_ph, &space, &[q])?;
    let (b, _) = boson_ladder(bath.n_cut(q))?;
    Ok((&rho_q * &b).trace())
}

/// Largest population in the highest retained Fock level over all modes.
pub fn fock_edge_population(rho_ph: &ComplexMatrix, bath: &BathSpec) -> Result<f64> {
    let space = ProductSpace::new(bath.phonon_dims().into_iter().enumerate().map(|(k, d)| (format!("mode{k}"), d)).collect())?;
    let mut m = 0.0_f64;
    for q in 0..bath.n_modes() {
        let rho_q = partial_trace(rho_ph, &space, &[q])?;
        let n = bath.n_cut(q);
        m = m.max(rho_q.get(n - 1, n - 1).re);
    }
    Ok(m)
}

fn record_sample(record: &mut TrajectoryRecord, t: f64, rho_full: &ComplexMatrix, space: &ProductSpace, bath: &BathSpec) -> Result<()> {
    let keep_ph: Vec<usize> = (1..space.n_factors()).collect();
    let lat = partial_trace(rho_full, space, &[0])?;
    let ph = partial_trace(rho_full, space, &keep_ph)?;
    record.times.push(t);
    for i in 0..lat.dim() {
        record.push_observable(&format!("pop{i}"), lat.get(i, i).re);
    }
    if lat.dim() > 1 {
        record.push_complex_observable("coh01", lat.get(0, 1));
    }
    let edge = fock_edge_population(&ph, bath)?;
    if edge > crate::bath::TAIL_WARN {
        log::warn!("Fock edge population {edge:.3e} at t = {t:.4}; raise the cutoff");
    }
    record.push_observable("fock_edge", edge);
    record.reduced_lattice.push(lat);
    record.reduced_phonon.push(ph);
    Ok(())
}

fn hamiltonian_bound(h: &ComplexMatrix) -> f64 {
    h.one_norm()
}

fn rk4_guard(h: &ComplexMatrix, dt: f64) -> Result<()> {
    let bound = dt * hamiltonian_bound(h);
    if bound >= 0.1 {
        return Err(Error::InvalidArgument(format!(
            "RK4 step too large: dt·‖H‖ = {bound:.3} (must stay below 0.1)"
        )));
    }
    Ok(())
}

fn check_pure(psi: &StateVector, dim: usize) -> Result<()> {
    if psi.len() != dim {
        return Err(Error::DimensionMismatch {
            context: "oracle initial vector",
            expected: dim,
            found: psi.len(),
        });
    }
    let n = psi.norm_squared();
    if (n - 1.0).abs() > 1e-10 {
        return Err(Error::BadTrace { trace: n });
    }
    Ok(())
}

/// Hermitian, unit trace and positive semidefinite, all within 1e-10.
pub fn check_density(rho: &ComplexMatrix) -> Result<()> {
    let dev = rho.hermiticity_deviation();
    if dev > 1e-10 {
        return Err(Error::NotHermitian {
            context: "oracle initial density",
            deviation: dev,
        });
    }
    let tr = rho.trace();
    if (tr - ONE).norm() > 1e-10 {
        return Err(Error::BadTrace { trace: tr.re });
    }
    let min = rho.eigvalsh().first().copied().unwrap_or(0.0);
    if min < -1e-10 {
        return Err(Error::NotPositive { min_eigenvalue: min });
    }
    Ok(())
}

/// Schrödinger evolution of a pure lattice-phonon vector.
pub fn exact_propagate_pure(model: &Model, psi0: &StateVector, cfg: &OracleConfig) -> Result<OracleRun<StateVector>> {
    cfg.check()?;
    let model = oracle_model(model, cfg)?;
    let space = model.space();
    check_pure(psi0, space.total_dim())?;
    let static_h = model.couplings.is_static();
    let mut record = TrajectoryRecord::new(Source::Oracle);
    let sample = |rec: &mut TrajectoryRecord, t: f64, psi: &StateVector| record_sample(rec, t, &ComplexMatrix::outer(psi, psi), &space, &model.bath);
    sample(&mut record, 0.0, psi0)?;

    let eigen = match (cfg.integrator, static_h) {
        (Integrator::ExponentialStep, true) => {
            let prop = HermitianPropagator::new(&full_hamiltonian(&model, 0.0)?)?;
            let coef = prop.eigenvectors().ad_mul(psi0);
            Some((prop, coef))
        }
        _ => None,
    };
    let mut psi = psi0.clone();
    for step in 1..=cfg.n_steps {
        let t0 = (step - 1) as f64 * cfg.dt;
        let t1 = step as f64 * cfg.dt;
        psi = match (&eigen, cfg.integrator) {
            (Some((prop, coef)), _) => {
                let rotated = StateVector::from_iterator(
                    coef.len(),
                    coef.iter().zip(prop.eigenvalues()).map(|(c, e)| c * C64::from_polar(1.0, -e * t1)),
                );
                prop.eigenvectors() * rotated
            }
            (None, Integrator::Rk4) => {
                let h = full_hamiltonian(&model, t0)?;
                rk4_guard(&h, cfg.dt)?;
                let hm = full_hamiltonian(&model, t0 + cfg.dt / 2.0)?;
                let h1 = full_hamiltonian(&model, t1)?;
                let f = |h: &ComplexMatrix, v: &StateVector| h.apply(v) * (-I);
                let dt = C64::new(cfg.dt, 0.0);
                let k1 = f(&h, &psi);
                let k2 = f(&hm, &(&psi + &k1 * (dt / 2.0)));
                let k3 = f(&hm, &(&psi + &k2 * (dt / 2.0)));
                let k4 = f(&h1, &(&psi + &k3 * dt));
                &psi + (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * (dt / 6.0)
            }
            (None, _) => expm_apply(&full_hamiltonian(&model, t0 + cfg.dt / 2.0)?, cfg.dt, &psi)?,
        };
        let drift = (psi.norm_squared() - 1.0).abs();
        if drift > cfg.tolerance || !drift.is_finite() {
            return Err(Error::NormDrift {
                drift,
                step,
                limit: cfg.tolerance,
            });
        }
        if step % cfg.sample_stride == 0 || step == cfg.n_steps {
            sample(&mut record, t1, &psi)?;
        }
    }
    Ok(OracleRun { record, final_state: psi })
}

/// Liouville-von Neumann evolution of a full density matrix.
pub fn exact_propagate_density(model: &Model, rho0: &ComplexMatrix, cfg: &OracleConfig) -> Result<OracleRun<ComplexMatrix>> {
    cfg.check()?;
    let model = oracle_model(model, cfg)?;
    let space = model.space();
    if rho0.dim() != space.total_dim() {
        return Err(Error::DimensionMismatch {
            context: "oracle initial density",
            expected: space.total_dim(),
            found: rho0.dim(),
        });
    }
    check_density(rho0)?;
    let static_h = model.couplings.is_static();
    let mut record = TrajectoryRecord::new(Source::Oracle);
    record_sample(&mut record, 0.0, rho0, &space, &model.bath)?;

    let eigen = match (cfg.integrator, static_h) {
        (Integrator::ExponentialStep, true) => {
            let prop = HermitianPropagator::new(&full_hamiltonian(&model, 0.0)?)?;
            let v = prop.eigenvectors();
            let coef = v.adjoint() * rho0.as_dmatrix() * v;
            Some((prop, coef))
        }
        _ => None,
    };
    let mut rho = rho0.clone();
    for step in 1..=cfg.n_steps {
        let t0 = (step - 1) as f64 * cfg.dt;
        let t1 = step as f64 * cfg.dt;
        rho = match (&eigen, cfg.integrator) {
            (Some((prop, coef)), _) => {
                let e = prop.eigenvalues();
                let rotated = nalgebra::DMatrix::from_fn(coef.nrows(), coef.ncols(), |i, j| coef[(i, j)] * C64::from_polar(1.0, -(e[i] - e[j]) * t1));
                let v = prop.eigenvectors();
                ComplexMatrix::from_dmatrix(v * rotated * v.adjoint())?
            }
            (None, Integrator::Rk4) => {
                let h = full_hamiltonian(&model, t0)?;
                rk4_guard(&h, cfg.dt)?;
                let hm = full_hamiltonian(&model, t0 + cfg.dt / 2.0)?;
                let h1 = full_hamiltonian(&model, t1)?;
                let f = |h: &ComplexMatrix, r: &ComplexMatrix| -> Result<ComplexMatrix> { Ok(commutator(h, r)?.scale(-I)) };
                let d = cfg.dt;
                let k1 = f(&h, &rho)?;
                let k2 = f(&hm, &(&rho + &k1.scale_real(d / 2.0)))?;
                let k3 = f(&hm, &(&rho + &k2.scale_real(d / 2.0)))?;
                let k4 = f(&h1, &(&rho + &k3.scale_real(d)))?;
                let sum = &(&(&k1 + &k2.scale_real(2.0)) + &k3.scale_real(2.0)) + &k4;
                &rho + &sum.scale_real(d / 6.0)
            }
            (None, _) => {
                let u = matrix_exponential(&full_hamiltonian(&model, t0 + cfg.dt / 2.0)?.scale(C64::new(0.0, -cfg.dt)))?;
                &(&u * &rho) * &u.adjoint()
            }
        };
        let drift = (rho.trace() - ONE).norm();
        if drift > cfg.tolerance || !drift.is_finite() {
            return Err(Error::NormDrift {
                drift,
                step,
                limit: cfg.tolerance,
            });
        }
        if step % cfg.sample_stride == 0 || step == cfg.n_steps {
            record_sample(&mut record, t1, &rho, &space, &model.bath)?;
        }
    }
    Ok(OracleRun { record, final_state: rho })
}

/// Largest trace distances between two records on the same time grid.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReducedComparison {
    pub lattice: Vec<f64>,
    pub phonon: Vec<f64>,
    pub max_lattice: f64,
    pub max_phonon: f64,
}

pub fn compare_reduced(a: &TrajectoryRecord, b: &TrajectoryRecord) -> Result<ReducedComparison> {
    if a.times.len() != b.times.len() || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-9 * x.abs().max(1.0)) {
        return Err(Error::InvalidArgument("records sampled on different time grids".into()));
    }
    if a.reduced_lattice.len() != a.len() || b.reduced_lattice.len() != b.len() {
        return Err(Error::InvalidArgument("records lack reduced density matrices".into()));
    }
    let lattice = a
        .reduced_lattice
        .iter()
        .zip(&b.reduced_lattice)
        .map(|(x, y)| trace_distance(x, y))
        .collect::<Result<Vec<_>>>()?;
    let phonon = a
        .reduced_phonon
        .iter()
        .zip(&b.reduced_phonon)
        .map(|(x, y)| trace_distance(x, y))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReducedComparison {
        max_lattice: lattice.iter().copied().fold(0.0, f64::max),
        max_phonon: phonon.iter().copied().fold(0.0, f64::max),
        lattice,
        phonon,
    })
}

/// Smallest cutoff with coherent tail below `limit` for the largest
/// displacement expected in a run.
pub fn cutoff_for(beta_max: f64, limit: f64) -> usize {
    (2..400)
        .find(|&n| crate::bath::coherent_tail(C64::new(beta_max, 0.0), n) < limit)
        .unwrap_or(400)
}

/// Mode with a cutoff chosen by [`cutoff_for`].
pub fn mode_for(omega: f64, beta_max: f64, limit: f64) -> Mode {
    Mode {
        omega,
        n_cut: cutoff_for(beta_max, limit),
    }
}
