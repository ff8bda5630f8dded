//! Simultaneous eigenspaces of the coupling family and decoherence-free
//! subspace certification.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CouplingSet, Model};
use crate::operator::{inner, ComplexMatrix, HermitianPropagator, StateVector, I};

/// Relative gap separating eigenvalue clusters.
pub const CLUSTER_GAP: f64 = 1e-9;
/// Singular values below this bound span a subspace intersection.
pub const RANK_TOL: f64 = 1e-10;
/// Residual bound for every DFS criterion.
pub const DFS_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DfsDiagnostics {
    /// max ‖[w_q, w_q†] v‖
    pub normality: f64,
    /// max ‖[H_lat, w_q] v‖
    pub h_commutator: f64,
    /// max ‖[H_lat, w_q†] v‖
    pub h_adjoint_commutator: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenspaceReport {
    pub basis: Vec<StateVector>,
    pub mu: Vec<C64>,
    /// (max ‖w_q v − μ_q v‖, max ‖w_q† v − μ_q* v‖)
    pub residuals: (f64, f64),
    pub is_dfs: bool,
    /// Vectors left over after all simultaneous eigenspaces were removed.
    pub is_complement: bool,
    pub diagnostics: Option<DfsDiagnostics>,
}

#[derive(Serialize)]
struct ReportSummary<'a> {
    dim: usize,
    mu: &'a [C64],
    eigen_residual: f64,
    adjoint_residual: f64,
    is_dfs: bool,
    is_complement: bool,
    diagnostics: &'a Option<DfsDiagnostics>,
    basis: Vec<Vec<C64>>,
}

impl Serialize for EigenspaceReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        ReportSummary {
            dim: self.basis.len(),
            mu: &self.mu,
            eigen_residual: self.residuals.0,
            adjoint_residual: self.residuals.1,
            is_dfs: self.is_dfs,
            is_complement: self.is_complement,
            diagnostics: &self.diagnostics,
            basis: self.basis.iter().map(|v| v.iter().copied().collect()).collect(),
        }
        .serialize(s)
    }
}

impl EigenspaceReport {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn projector(&self) -> ComplexMatrix {
        ComplexMatrix::projector(&self.basis)
    }
}

fn columns(m: &DMatrix<C64>) -> Vec<StateVector> {
    (0..m.ncols()).map(|j| m.column(j).into_owned()).collect()
}

fn stack(vs: &[StateVector], dim: usize) -> DMatrix<C64> {
    DMatrix::from_fn(dim, vs.len(), |i, j| vs[j][i])
}

/// Eigenspaces of a Hermitian matrix, eigenvalues clustered by relative gap.
fn hermitian_eigenspaces(h: &ComplexMatrix) -> Vec<(f64, DMatrix<C64>)> {
    let (vals, vecs) = h.eigh();
    let scale = vals.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let mut out: Vec<(f64, Vec<usize>)> = Vec::new();
    for (k, &v) in vals.iter().enumerate() {
        match out.last_mut() {
            Some((_, idx)) if (v - vals[*idx.last().unwrap()]).abs() <= CLUSTER_GAP * scale => idx.push(k),
            _ => out.push((v, vec![k])),
        }
    }
    out.into_iter()
        .map(|(_, idx)| {
            let mean = idx.iter().map(|&k| vals[k]).sum::<f64>() / idx.len() as f64;
            let cols = DMatrix::from_fn(h.dim(), idx.len(), |i, j| vecs[(i, idx[j])]);
            (mean, cols)
        })
        .collect()
}

/// Orthonormal basis of span(Q) ∩ span(E) for orthonormal column sets Q, E.
fn intersect(q: &DMatrix<C64>, e: &DMatrix<C64>) -> DMatrix<C64> {
    let k = q.ncols();
    if k == 0 || e.ncols() == 0 {
        return DMatrix::zeros(q.nrows(), 0);
    }
    // components of Q outside E
    let resid = q - e * (e.adjoint() * q);
    let svd = resid.svd(false, true);
    let v_t = svd.v_t.expect("requested V^H");
    let null: Vec<usize> = (0..k).filter(|&i| svd.singular_values[i] < RANK_TOL).collect();
    let mut out = DMatrix::zeros(q.nrows(), null.len());
    for (c, &i) in null.iter().enumerate() {
        let y = v_t.row(i).adjoint();
        out.set_column(c, &(q * y));
    }
    orthonormalize(&out)
}

fn orthonormalize(m: &DMatrix<C64>) -> DMatrix<C64> {
    if m.ncols() == 0 {
        return m.clone();
    }
    m.clone().qr().q()
}

fn hermitian_family(couplings: &CouplingSet, t: f64) -> Vec<ComplexMatrix> {
    (0..couplings.n_modes())
        .flat_map(|q| {
            let w = couplings.w_at(q, t);
            [w.hermitian_part(), w.antihermitian_part()]
        })
        .collect()
}

/// Partition the lattice space into maximal simultaneous eigenspaces of all
/// w_q (and w_q†) at time `t`; leftover directions form a complement report.
pub fn common_eigenspaces(couplings: &CouplingSet, t: f64) -> Vec<EigenspaceReport> {
    let dim = couplings.lattice_dim();
    let mut spaces = vec![DMatrix::<C64>::identity(dim, dim)];
    for h in hermitian_family(couplings, t) {
        let eig = hermitian_eigenspaces(&h);
        let mut next = Vec::new();
        for s in &spaces {
            for (_, e) in &eig {
                let part = intersect(s, e);
                if part.ncols() > 0 {
                    next.push(part);
                }
            }
        }
        spaces = next;
    }
    let mut reports: Vec<EigenspaceReport> = spaces
        .iter()
        .map(|s| {
            let basis = columns(s);
            let mu = (0..couplings.n_modes())
                .map(|q| inner(&basis[0], &couplings.apply_w(q, t, &basis[0])))
                .collect();
            let mut r = EigenspaceReport {
                basis,
                mu,
                residuals: (0.0, 0.0),
                is_dfs: false,
                is_complement: false,
                diagnostics: None,
            };
            r.residuals = eigen_residuals(&r.basis, &r.mu, couplings, t);
            r
        })
        .collect();

    let covered: usize = reports.iter().map(|r| r.dim()).sum();
    if covered < dim {
        let all: Vec<StateVector> = reports.iter().flat_map(|r| r.basis.iter().cloned()).collect();
        let p = stack(&all, dim);
        let comp = &DMatrix::<C64>::identity(dim, dim) - &p * p.adjoint();
        let (vals, vecs) = ComplexMatrix::from_dmatrix(comp).expect("square").eigh();
        let basis: Vec<StateVector> = vals
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.5)
            .map(|(k, _)| vecs.column(k).into_owned())
            .collect();
        let mu: Vec<C64> = (0..couplings.n_modes())
            .map(|q| inner(&basis[0], &couplings.apply_w(q, t, &basis[0])))
            .collect();
        let residuals = eigen_residuals(&basis, &mu, couplings, t);
        reports.push(EigenspaceReport {
            basis,
            mu,
            residuals,
            is_dfs: false,
            is_complement: true,
            diagnostics: None,
        });
    }
    reports
}

fn eigen_residuals(basis: &[StateVector], mu: &[C64], couplings: &CouplingSet, t: f64) -> (f64, f64) {
    let mut r = (0.0_f64, 0.0_f64);
    for v in basis {
        for (q, &m) in mu.iter().enumerate() {
            r.0 = r.0.max((couplings.apply_w(q, t, v) - v * m).norm());
            r.1 = r.1.max((couplings.apply_w_adjoint(q, t, v) - v * m.conj()).norm());
        }
    }
    r
}

/// Static DFS criterion: [w_q, w_q†] v = 0 and [H_lat, w_q] v = 0 for every
/// basis vector; on success [H_lat, w_q†] v = 0 is asserted as well.
pub fn check_dfs(mut subspace: EigenspaceReport, h_lat: &ComplexMatrix, couplings: &CouplingSet) -> EigenspaceReport {
    let t = 0.0;
    let mut d = DfsDiagnostics::default();
    for v in &subspace.basis {
        for q in 0..couplings.n_modes() {
            let w = |x: &StateVector| couplings.apply_w(q, t, x);
            let wd = |x: &StateVector| couplings.apply_w_adjoint(q, t, x);
            d.normality = d.normality.max((w(&wd(v)) - wd(&w(v))).norm());
            d.h_commutator = d.h_commutator.max((h_lat.apply(&w(v)) - w(&h_lat.apply(v))).norm());
            d.h_adjoint_commutator = d.h_adjoint_commutator.max((h_lat.apply(&wd(v)) - wd(&h_lat.apply(v))).norm());
        }
    }
    subspace.residuals = eigen_residuals(&subspace.basis, &subspace.mu, couplings, t);
    let primary = !subspace.is_complement
        && subspace.residuals.0 < DFS_TOL
        && subspace.residuals.1 < DFS_TOL
        && d.normality < DFS_TOL
        && d.h_commutator < DFS_TOL;
    subspace.is_dfs = primary && d.h_adjoint_commutator < DFS_TOL;
    subspace.diagnostics = Some(d);
    subspace
}

/// Eigenspace scan followed by certification of every candidate.
pub fn scan_dfs(model: &Model) -> Vec<EigenspaceReport> {
    common_eigenspaces(&model.couplings, 0.0)
        .into_iter()
        .map(|r| check_dfs(r, model.h_lat(), &model.couplings))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimeDependentResidual {
    /// max_q ‖(i[H, w_q] + ∂_t w_q) v − μ̇_q v‖
    pub coupling: f64,
    /// max_q ‖(i[H, w_q†] + ∂_t w_q†) v − μ̇_q* v‖
    pub adjoint: f64,
}

impl TimeDependentResidual {
    pub fn max(&self) -> f64 {
        self.coupling.max(self.adjoint)
    }
}

fn heisenberg_rates(state: &StateVector, h_lat: &ComplexMatrix, couplings: &CouplingSet, t: f64, q: usize) -> (StateVector, StateVector) {
    let w = couplings.w_at(q, t);
    let dw = couplings.dw_dt(q, t);
    let hv = h_lat.apply(state);
    let a = (h_lat.apply(&w.apply(state)) - w.apply(&hv)) * I + dw.apply(state);
    let wd = w.adjoint();
    let b = (h_lat.apply(&wd.apply(state)) - wd.apply(&hv)) * I + dw.adjoint().apply(state);
    (a, b)
}

/// ⟨v|(i[H, w_q] + ∂_t w_q)|v⟩ per mode: the eigenvalue rates of a state that
/// stays in a moving common eigenspace.
pub fn mu_rates(state: &StateVector, h_lat: &ComplexMatrix, couplings: &CouplingSet, t: f64) -> Vec<C64> {
    (0..couplings.n_modes())
        .map(|q| inner(state, &heisenberg_rates(state, h_lat, couplings, t, q).0))
        .collect()
}

/// Time-dependent DFS criterion evaluated at a single instant.
pub fn check_dfs_time_dependent(
    state: &StateVector,
    h_lat: &ComplexMatrix,
    couplings: &CouplingSet,
    t: f64,
    mu_rates: &[C64],
) -> Result<TimeDependentResidual> {
    if mu_rates.len() != couplings.n_modes() {
        return Err(Error::DimensionMismatch {
            context: "mu rates vs coupling modes",
            expected: couplings.n_modes(),
            found: mu_rates.len(),
        });
    }
    let mut r = TimeDependentResidual { coupling: 0.0, adjoint: 0.0 };
    for (q, &rate) in mu_rates.iter().enumerate() {
        let (a, b) = heisenberg_rates(state, h_lat, couplings, t, q);
        r.coupling = r.coupling.max((a - state * rate).norm());
        r.adjoint = r.adjoint.max((b - state * rate.conj()).norm());
    }
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintForm {
    /// Only the coupling term, as for zero-temperature pure states.
    Pure,
    /// Coupling and adjoint-coupling terms.
    Density,
}

/// Integrand of the initial-state constraint at one instant for the state
/// evolved by the unperturbed lattice propagator.
fn lambda_integrand(psi: &StateVector, couplings: &CouplingSet, t: f64, form: ConstraintForm) -> f64 {
    let mut acc = 0.0;
    for q in 0..couplings.n_modes() {
        let wv = couplings.apply_w(q, t, psi);
        let mu = inner(psi, &wv);
        acc += (wv - psi * mu).norm_squared();
        if form == ConstraintForm::Density {
            let wdv = couplings.apply_w_adjoint(q, t, psi);
            acc += (wdv - psi * mu.conj()).norm_squared();
        }
    }
    acc
}

/// Composite-Simpson estimate of ⟨ψ₀|Λ|ψ₀⟩ over [0, horizon].
pub fn lambda_constraint_residual(
    state0: &StateVector,
    model: &Model,
    horizon: f64,
    n_samples: usize,
    form: ConstraintForm,
) -> Result<f64> {
    let norm = state0.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidArgument("constraint residual needs a nonzero state".into()));
    }
    if state0.len() != model.lattice.dim() {
        return Err(Error::DimensionMismatch {
            context: "constraint state vs lattice dimension",
            expected: model.lattice.dim(),
            found: state0.len(),
        });
    }
    if !(horizon >= 0.0) {
        return Err(Error::InvalidArgument("horizon must be nonnegative".into()));
    }
    let n = {
        let n = n_samples.max(64);
        n + n % 2
    };
    let psi0 = state0 / C64::new(norm, 0.0);
    let prop = HermitianPropagator::new(model.h_lat())?;
    let h = horizon / n as f64;
    let mut sum = 0.0;
    for k in 0..=n {
        let t = k as f64 * h;
        let psi = prop.at(t).apply(&psi0);
        let weight = if k == 0 || k == n {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += weight * lambda_integrand(&psi, &model.couplings, t, form);
    }
    Ok(sum * h / 3.0)
}

/// Convenience: the DFS report containing `state`, if any.
pub fn containing_dfs<'a>(reports: &'a [EigenspaceReport], state: &StateVector) -> Option<&'a EigenspaceReport> {
    reports.iter().filter(|r| r.is_dfs).find(|r| {
        let p = r.projector();
        (p.apply(state) - state).norm() < 1e-9 * state.norm().max(1.0)
    })
}
