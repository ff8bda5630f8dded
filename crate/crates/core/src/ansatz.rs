//! Coherent-product state propagation.
//!
//! A state is a sum of branches, each pairing a lattice state (vector or
//! operator) with a displaced thermal phonon operator. Certified branches
//! evolve independently: the lattice by the bare lattice Hamiltonian plus a
//! scalar phase, the displacements as driven oscillators.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::bath::{displaced_thermal_gamma, gaussian_overlap, BathSpec, Displacement};
use crate::error::{Error, Result};
use crate::model::{ring_wavenumber, CouplingSet, Model, PumpSpec};
use crate::operator::{inner, kron, ComplexMatrix, HermitianPropagator, StateVector, I, ONE, ZERO};

/// Residual below which a branch counts as certified at the start of a run.
pub const CERTIFY_TOL: f64 = 1e-9;
/// Residual above which a running propagation is aborted.
pub const ABORT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum LatticeState {
    Pure(StateVector),
    Operator(ComplexMatrix),
}

impl LatticeState {
    pub fn dim(&self) -> usize {
        match self {
            Self::Pure(v) => v.len(),
            Self::Operator(m) => m.dim(),
        }
    }

    /// ⟨α|α⟩ or Tr(α̂†α̂)
    pub fn weight(&self) -> f64 {
        match self {
            Self::Pure(v) => v.norm_squared(),
            Self::Operator(m) => m.hs_inner(m).re,
        }
    }

    fn scaled(&self, s: C64) -> Self {
        match self {
            Self::Pure(v) => Self::Pure(v * s),
            Self::Operator(m) => Self::Operator(m.scale(s)),
        }
    }

    /// Tr(A†X) normalized by the weight; for vectors ⟨α|X|α⟩/⟨α|α⟩.
    fn expectation(&self, x: &ComplexMatrix) -> C64 {
        match self {
            Self::Pure(v) => inner(v, &x.apply(v)) / v.norm_squared(),
            Self::Operator(m) => m.hs_inner(&(x * m)) / m.hs_inner(m).re,
        }
    }

    /// A A'† as a lattice matrix.
    fn outer_with(&self, other: &Self) -> Result<ComplexMatrix> {
        match (self, other) {
            (Self::Pure(a), Self::Pure(b)) => Ok(ComplexMatrix::outer(a, b)),
            (Self::Operator(a), Self::Operator(b)) => Ok(a * &b.adjoint()),
            _ => Err(Error::InvalidArgument("branches mix vector and operator lattice states".into())),
        }
    }

    /// Tr(A'† A); for vectors ⟨α'|α⟩.
    fn overlap_with(&self, other: &Self) -> Result<C64> {
        match (self, other) {
            (Self::Pure(a), Self::Pure(b)) => Ok(inner(b, a)),
            (Self::Operator(a), Self::Operator(b)) => Ok(b.hs_inner(a)),
            _ => Err(Error::InvalidArgument("branches mix vector and operator lattice states".into())),
        }
    }

    /// ‖A'† A‖_F, zero iff the ranges are orthogonal.
    fn range_overlap(&self, other: &Self) -> f64 {
        match (self, other) {
            (Self::Pure(a), Self::Pure(b)) => inner(b, a).norm(),
            (Self::Operator(a), Self::Operator(b)) => (&b.adjoint() * a).frobenius_norm(),
            (Self::Pure(a), Self::Operator(b)) | (Self::Operator(b), Self::Pure(a)) => b.as_dmatrix().ad_mul(a).norm(),
        }
    }
}

impl Serialize for LatticeState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        #[serde(tag = "kind", rename_all = "kebab-case")]
        enum Repr<'a> {
            Pure { amplitudes: Vec<C64> },
            Operator { matrix: &'a ComplexMatrix },
        }
        match self {
            Self::Pure(v) => Repr::Pure {
                amplitudes: v.iter().copied().collect(),
            },
            Self::Operator(m) => Repr::Operator { matrix: m },
        }
        .serialize(s)
    }
}

/// Which eigenvalue conditions a branch must satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualMode {
    /// Zero-temperature pure state: only G_q α = μ_q α.
    Pure,
    /// Operator or finite-temperature form: w_q and w_q† conditions.
    Density,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Branch {
    pub label: String,
    pub lattice: LatticeState,
    pub beta: Displacement,
    pub mu: Vec<C64>,
    pub theta: f64,
    pub omega_shift: f64,
}

impl Branch {
    pub fn pure(label: impl Into<String>, state: StateVector, beta: Displacement) -> Self {
        Self::new(label, LatticeState::Pure(state), beta)
    }

    pub fn operator(label: impl Into<String>, op: ComplexMatrix, beta: Displacement) -> Self {
        Self::new(label, LatticeState::Operator(op), beta)
    }

    fn new(label: impl Into<String>, lattice: LatticeState, beta: Displacement) -> Self {
        let n = beta.len();
        Self {
            label: label.into(),
            lattice,
            beta,
            mu: vec![ZERO; n],
            theta: 0.0,
            omega_shift: 0.0,
        }
    }

    pub fn weight(&self) -> f64 {
        self.lattice.weight()
    }

    /// Lattice state with the accumulated phase e^{iΘ} applied.
    pub fn phased_lattice(&self) -> LatticeState {
        self.lattice.scaled(C64::from_polar(1.0, self.theta))
    }

    /// μ_q = ⟨G_q⟩ over the lattice state, with G_q = w_q + Σ β_q' u_qq'.
    pub fn expectation_mu(&self, couplings: &CouplingSet, t: f64) -> Vec<C64> {
        (0..couplings.n_modes())
            .map(|q| self.lattice.expectation(&couplings.g_operator(q, t, &self.beta.0)))
            .collect()
    }

    /// Singular weights ν_κ and left singular vectors of the lattice state
    /// with ν_κ above a relative threshold.
    pub fn singular_decomposition(&self) -> Vec<(f64, StateVector)> {
        match &self.lattice {
            LatticeState::Pure(v) => {
                let n = v.norm();
                if n == 0.0 {
                    Vec::new()
                } else {
                    vec![(n * n, v / C64::new(n, 0.0))]
                }
            }
            LatticeState::Operator(m) => {
                let svd = m.as_dmatrix().clone().svd(true, false);
                let u = svd.u.expect("requested U");
                let smax = svd.singular_values.iter().fold(0.0_f64, |a, &b| a.max(b));
                (0..svd.singular_values.len())
                    .filter(|&k| svd.singular_values[k] > 1e-7 * smax)
                    .map(|k| (svd.singular_values[k].powi(2), u.column(k).into_owned()))
                    .collect()
            }
        }
    }

    /// η_q = μ_q cosh θ_q and η̄_q = μ_q* sinh θ_q.
    pub fn eta(&self, bath: &BathSpec) -> Vec<(C64, C64)> {
        self.mu
            .iter()
            .enumerate()
            .map(|(q, &m)| {
                let th = bath.theta(q);
                (m * th.cosh(), m.conj() * th.sinh())
            })
            .collect()
    }

    /// Places every mode at its displaced equilibrium β_q = −μ_q/ω_q.
    pub fn with_stationary_bath(mut self, model: &Model) -> Self {
        let mu = self.expectation_mu(&model.couplings, 0.0);
        self.beta = Displacement(
            mu.iter()
                .enumerate()
                .map(|(q, m)| -m / model.bath.omega(q))
                .collect(),
        );
        self.mu = mu;
        self.omega_shift = energy_shift(&self.mu, &self.beta).unwrap_or(0.0);
        self
    }
}

/// Residual mode implied by the lattice state and the temperature.
pub fn residual_mode(branch: &Branch, bath: &BathSpec) -> ResidualMode {
    match (&branch.lattice, bath.temperature() == 0.0) {
        (LatticeState::Pure(_), true) => ResidualMode::Pure,
        _ => ResidualMode::Density,
    }
}

/// (max_q ‖G_q v − μ_q v‖, max_q ‖w_q† v − μ_q* v‖) over the contributing
/// lattice vectors; the second entry is 0 in pure mode.
pub fn self_consistency_residual(
    branch: &Branch,
    couplings: &CouplingSet,
    t: f64,
    mu_candidate: &[C64],
    mode: ResidualMode,
) -> Result<(f64, f64)> {
    if mu_candidate.len() != couplings.n_modes() {
        return Err(Error::DimensionMismatch {
            context: "mu candidate vs coupling modes",
            expected: couplings.n_modes(),
            found: mu_candidate.len(),
        });
    }
    let mut r = (0.0_f64, 0.0_f64);
    for (_, v) in branch.singular_decomposition() {
        for (q, &m) in mu_candidate.iter().enumerate() {
            let g = couplings.g_operator(q, t, &branch.beta.0);
            r.0 = r.0.max((g.apply(&v) - &v * m).norm());
            if mode == ResidualMode::Density {
                r.1 = r.1.max((couplings.apply_w_adjoint(q, t, &v) - &v * m.conj()).norm());
            }
        }
    }
    Ok(r)
}

/// Per-step monitor: for operators the Frobenius form ‖(G − μ)α̂‖/‖α̂‖,
/// which vanishes on the same states as the singular-vector form.
fn monitor_residual(lattice: &LatticeState, couplings: &CouplingSet, t: f64, beta: &[C64], mu: &[C64], mode: ResidualMode) -> f64 {
    let mut r = 0.0_f64;
    for (q, &m) in mu.iter().enumerate() {
        match lattice {
            LatticeState::Pure(v) => {
                let n = v.norm();
                let gv = if couplings.has_bilinear() {
                    couplings.g_operator(q, t, beta).apply(v)
                } else {
                    couplings.apply_w(q, t, v)
                };
                r = r.max((gv - v * m).norm() / n);
                if mode == ResidualMode::Density {
                    r = r.max((couplings.apply_w_adjoint(q, t, v) - v * m.conj()).norm() / n);
                }
            }
            LatticeState::Operator(a) => {
                let n = a.frobenius_norm();
                let g = couplings.g_operator(q, t, beta);
                r = r.max((&(&g * a) - &a.scale(m)).frobenius_norm() / n);
                if mode == ResidualMode::Density {
                    r = r.max((&(&g.adjoint() * a) - &a.scale(m.conj())).frobenius_norm() / n);
                }
            }
        }
    }
    r
}

/// β(t) = (β₀ + μ/ω) e^{−iωt} − μ/ω
pub fn displacement_closed_form(beta0: C64, omega: f64, mu: C64, t: f64) -> Result<C64> {
    if !(omega > 0.0) {
        return Err(Error::InvalidArgument("mode frequency must be positive".into()));
    }
    let shift = mu / omega;
    Ok((beta0 + shift) * C64::from_polar(1.0, -omega * t) - shift)
}

/// ∫₀^τ Ω dt along the closed-form trajectory of a single mode.
fn closed_form_phase(beta0: C64, omega: f64, mu: C64, tau: f64) -> f64 {
    let a = beta0 + mu / omega;
    // Ω(t) = −Re(μ* a e^{−iωt}) + |μ|²/ω
    let integral = a * (ONE - C64::from_polar(1.0, -omega * tau)) / (I * omega);
    -(mu.conj() * integral).re + mu.norm_sqr() / omega * tau
}

/// Classical RK4 on iβ̇ = ωβ + μ(t); returns n_steps + 1 samples.
pub fn integrate_displacement_rk4(beta0: C64, omega: f64, mu: impl Fn(f64) -> C64, dt: f64, n_steps: usize) -> Vec<C64> {
    let f = |t: f64, b: C64| -I * (b * omega + mu(t));
    let mut out = Vec::with_capacity(n_steps + 1);
    let mut b = beta0;
    out.push(b);
    for k in 0..n_steps {
        let t = k as f64 * dt;
        let k1 = f(t, b);
        let k2 = f(t + dt / 2.0, b + k1 * (dt / 2.0));
        let k3 = f(t + dt / 2.0, b + k2 * (dt / 2.0));
        let k4 = f(t + dt, b + k3 * dt);
        b += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        out.push(b);
    }
    out
}

/// Ω = −½ Σ_q (μ_q β_q* + μ_q* β_q)
pub fn energy_shift(mu: &[C64], beta: &Displacement) -> Result<f64> {
    Ok(energy_shift_complex(mu, beta)?.re)
}

/// The shift evaluated in complex arithmetic; its imaginary part is a diagnostic.
pub fn energy_shift_complex(mu: &[C64], beta: &Displacement) -> Result<C64> {
    if mu.len() != beta.len() {
        return Err(Error::DimensionMismatch {
            context: "energy shift mu vs beta",
            expected: beta.len(),
            found: mu.len(),
        });
    }
    Ok(mu
        .iter()
        .zip(&beta.0)
        .map(|(m, b)| -(m * b.conj() + m.conj() * b) * 0.5)
        .sum())
}

/// ζ_n(t) = Σ_q ζ_q(0) e^{inq} e^{−iΩ_q t}, Ω_q = ε − 2J cos q.
pub fn pump_lattice_displacements(pump: &PumpSpec, eps: f64, j: f64, t: f64) -> Vec<C64> {
    let n = pump.n_sites;
    (0..n)
        .map(|site| {
            pump.zeta0_q
                .iter()
                .enumerate()
                .filter(|(_, z)| **z != ZERO)
                .map(|(k, z)| {
                    let q = ring_wavenumber(k, n);
                    let om = eps - 2.0 * j * q.cos();
                    z * C64::from_polar(1.0, site as f64 * q - om * t)
                })
                .sum()
        })
        .collect()
}

/// χ_q Σ_n e^{−iqn} |ζ_n|², one entry per ring mode.
pub fn pump_phonon_drive(chi_q: &[C64], zeta: &[C64]) -> Vec<C64> {
    let n = zeta.len();
    chi_q
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let q = ring_wavenumber(k, n);
            c * zeta
                .iter()
                .enumerate()
                .map(|(s, z)| C64::from_polar(z.norm_sqr(), -(s as f64) * q))
                .sum::<C64>()
        })
        .collect()
}

/// RK4 on iβ̇_q = ω_q [β_q − drive_q(t)] with the drive from the free pump
/// evolution; returns one row of displacements per step.
pub fn integrate_pumped_displacements(
    pump: &PumpSpec,
    eps: f64,
    j: f64,
    chi_q: &[C64],
    omegas: &[f64],
    beta0: &[C64],
    dt: f64,
    n_steps: usize,
) -> Result<Vec<Vec<C64>>> {
    if chi_q.len() != pump.n_sites || omegas.len() != pump.n_sites || beta0.len() != pump.n_sites {
        return Err(Error::DimensionMismatch {
            context: "pumped ring modes",
            expected: pump.n_sites,
            found: chi_q.len().min(omegas.len()).min(beta0.len()),
        });
    }
    let drive = |t: f64| pump_phonon_drive(chi_q, &pump_lattice_displacements(pump, eps, j, t));
    let rate = |d: &[C64], b: &[C64]| -> Vec<C64> {
        b.iter()
            .zip(d)
            .zip(omegas)
            .map(|((b, d), w)| -I * (b - d) * *w)
            .collect()
    };
    let axpy = |b: &[C64], k: &[C64], h: f64| -> Vec<C64> { b.iter().zip(k).map(|(b, k)| b + k * h).collect() };
    let mut b = beta0.to_vec();
    let mut out = vec![b.clone()];
    for s in 0..n_steps {
        let t = s as f64 * dt;
        let d0 = drive(t);
        let dh = drive(t + dt / 2.0);
        let d1 = drive(t + dt);
        let k1 = rate(&d0, &b);
        let k2 = rate(&dh, &axpy(&b, &k1, dt / 2.0));
        let k3 = rate(&dh, &axpy(&b, &k2, dt / 2.0));
        let k4 = rate(&d1, &axpy(&b, &k3, dt));
        for q in 0..b.len() {
            b[q] += (k1[q] + k2[q] * 2.0 + k3[q] * 2.0 + k4[q]) * (dt / 6.0);
        }
        out.push(b.clone());
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Ansatz,
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BranchTrack {
    pub label: String,
    pub beta: Vec<Vec<C64>>,
    pub theta: Vec<f64>,
    pub omega_shift: Vec<f64>,
    pub omega_shift_imag: Vec<f64>,
    pub residual: Vec<f64>,
    pub weight: Vec<f64>,
    #[serde(skip)]
    pub lattice: Vec<LatticeState>,
}

impl BranchTrack {
    fn new(label: &str) -> Self {
        Self {
            label: label.to_string(),
            beta: Vec::new(),
            theta: Vec::new(),
            omega_shift: Vec::new(),
            omega_shift_imag: Vec::new(),
            residual: Vec::new(),
            weight: Vec::new(),
            lattice: Vec::new(),
        }
    }

    fn push(&mut self, b: &Branch, residual: f64, keep_lattice: bool) {
        self.beta.push(b.beta.0.clone());
        self.theta.push(b.theta);
        self.omega_shift.push(b.omega_shift);
        self.omega_shift_imag
            .push(energy_shift_complex(&b.mu, &b.beta).map(|z| z.im).unwrap_or(f64::NAN));
        self.residual.push(residual);
        self.weight.push(b.weight());
        if keep_lattice {
            self.lattice.push(b.lattice.clone());
        }
    }

    /// Branch as recorded at sample k.
    pub fn branch_at(&self, k: usize) -> Option<Branch> {
        Some(Branch {
            label: self.label.clone(),
            lattice: self.lattice.get(k)?.clone(),
            beta: Displacement(self.beta.get(k)?.clone()),
            mu: Vec::new(),
            theta: self.theta[k],
            omega_shift: self.omega_shift[k],
        })
    }
}

/// Time-sampled output of a propagation run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub source: Source,
    pub times: Vec<f64>,
    pub branches: Vec<BranchTrack>,
    pub reduced_lattice: Vec<ComplexMatrix>,
    pub reduced_phonon: Vec<ComplexMatrix>,
    pub observables: BTreeMap<String, Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn new(source: Source) -> Self {
        Self {
            source,
            times: Vec::new(),
            branches: Vec::new(),
            reduced_lattice: Vec::new(),
            reduced_phonon: Vec::new(),
            observables: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn push_observable(&mut self, name: &str, value: f64) {
        self.observables.entry(name.to_string()).or_default().push(value);
    }

    pub fn push_complex_observable(&mut self, name: &str, value: C64) {
        self.push_observable(&format!("{name}_re"), value.re);
        self.push_observable(&format!("{name}_im"), value.im);
    }

    /// Time grid strictly increasing and every column as long as the grid.
    pub fn validate(&self) -> Result<()> {
        if self.times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("record time grid is not increasing".into()));
        }
        let n = self.len();
        let bad_branch = self.branches.iter().any(|b| b.beta.len() != n || b.theta.len() != n || b.omega_shift.len() != n);
        let bad_obs = self.observables.values().any(|v| v.len() != n);
        let bad_rho = (!self.reduced_lattice.is_empty() && self.reduced_lattice.len() != n)
            || (!self.reduced_phonon.is_empty() && self.reduced_phonon.len() != n);
        if bad_branch || bad_obs || bad_rho {
            return Err(Error::InvalidArgument("record columns disagree with the time grid".into()));
        }
        Ok(())
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["time".to_string()];
        for b in &self.branches {
            let n_modes = b.beta.first().map_or(0, Vec::len);
            for q in 0..n_modes {
                h.push(format!("{}_beta{q}_re", b.label));
                h.push(format!("{}_beta{q}_im", b.label));
            }
            h.push(format!("{}_Omega", b.label));
            h.push(format!("{}_Theta", b.label));
        }
        h.extend(self.observables.keys().cloned());
        h
    }

    /// CSV with one row per sample; floats carry 17 significant digits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        self.validate()?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(self.header())?;
        let fmt = |x: f64| format!("{x:.16e}");
        for k in 0..self.len() {
            let mut row = vec![fmt(self.times[k])];
            for b in &self.branches {
                for z in &b.beta[k] {
                    row.push(fmt(z.re));
                    row.push(fmt(z.im));
                }
                row.push(fmt(b.omega_shift[k]));
                row.push(fmt(b.theta[k]));
            }
            row.extend(self.observables.values().map(|v| fmt(v[k])));
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Structured diagnostic of a run stopped by the residual monitor.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropagationAbort {
    pub label: String,
    pub step: usize,
    pub time: f64,
    pub residual: f64,
    pub limit: f64,
    pub record: TrajectoryRecord,
}

impl fmt::Display for PropagationAbort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "branch '{}' left its eigenspace at step {} (t = {:.6}): residual {:.3e} > {:.1e}",
            self.label, self.step, self.time, self.residual, self.limit
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationOptions {
    pub dt: f64,
    pub n_steps: usize,
    pub sample_stride: usize,
    /// Run uncertified branches anyway; the residual monitor still aborts.
    pub force: bool,
    pub certify_tol: f64,
    pub abort_tol: f64,
    /// Keep lattice states at each sample (needed for density assembly).
    pub keep_lattice: bool,
}

impl PropagationOptions {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        Self {
            dt,
            n_steps,
            sample_stride: 1,
            force: false,
            certify_tol: CERTIFY_TOL,
            abort_tol: ABORT_TOL,
            keep_lattice: true,
        }
    }

    /// Default step 10⁻³ / max(ω, ‖H_lat‖).
    pub fn default_dt(model: &Model) -> f64 {
        let wmax = model.bath.modes().iter().fold(0.0_f64, |a, m| a.max(m.omega));
        let hnorm = model.h_lat().eigvalsh().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        1e-3 / wmax.max(hnorm).max(f64::MIN_POSITIVE)
    }

    fn check(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument("dt must be positive".into()));
        }
        if self.sample_stride == 0 {
            return Err(Error::InvalidArgument("sample stride must be at least 1".into()));
        }
        Ok(())
    }
}

/// Bare lattice evolution from the initial state, evaluated afresh at each
/// time in the eigenbasis so that round-off does not accumulate.
struct EigenEvolver {
    prop: HermitianPropagator,
    coef: LatticeState,
}

impl EigenEvolver {
    fn new(h: &ComplexMatrix, initial: &LatticeState) -> Result<Self> {
        let prop = HermitianPropagator::new(h)?;
        let v = prop.eigenvectors();
        let coef = match initial {
            LatticeState::Pure(a) => LatticeState::Pure(v.ad_mul(a)),
            LatticeState::Operator(a) => LatticeState::Operator(ComplexMatrix::from_dmatrix(v.ad_mul(a.as_dmatrix()))?),
        };
        Ok(Self { prop, coef })
    }

    fn at(&self, t: f64) -> LatticeState {
        let v = self.prop.eigenvectors();
        let phases: Vec<C64> = self.prop.eigenvalues().iter().map(|&e| C64::from_polar(1.0, -e * t)).collect();
        match &self.coef {
            LatticeState::Pure(c) => {
                let rotated = StateVector::from_iterator(c.len(), c.iter().zip(&phases).map(|(a, p)| a * p));
                LatticeState::Pure(v * rotated)
            }
            LatticeState::Operator(c) => {
                let mut m = c.as_dmatrix().clone();
                for (i, p) in phases.iter().enumerate() {
                    for x in m.row_mut(i).iter_mut() {
                        *x *= p;
                    }
                }
                LatticeState::Operator(ComplexMatrix::from_dmatrix(v * m).expect("square"))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Route {
    /// Static μ: exact lattice stepping and closed-form displacements.
    Static,
    /// Time-dependent μ(t): exact lattice stepping, RK4 displacements.
    Driven,
    /// Pure-state D1 form with β-dependent G_q: RK4 on (α, β, Θ).
    Coupled,
}

/// Advance one branch for `n_steps` of size `dt`, sampling every `sample_stride` steps.
pub fn propagate_branch(branch: &Branch, model: &Model, opts: &PropagationOptions) -> Result<(Branch, TrajectoryRecord)> {
    opts.check()?;
    let couplings = &model.couplings;
    let bath = &model.bath;
    if branch.beta.len() != bath.n_modes() {
        return Err(Error::DimensionMismatch {
            context: "branch displacements vs bath modes",
            expected: bath.n_modes(),
            found: branch.beta.len(),
        });
    }
    if branch.lattice.dim() != model.lattice.dim() {
        return Err(Error::DimensionMismatch {
            context: "branch lattice state vs lattice dimension",
            expected: model.lattice.dim(),
            found: branch.lattice.dim(),
        });
    }
    if couplings.has_bilinear() {
        if bath.temperature() > 0.0 {
            return Err(Error::FiniteTemperatureBilinear {
                temperature: bath.temperature(),
            });
        }
        if matches!(branch.lattice, LatticeState::Operator(_)) {
            return Err(Error::InvalidArgument("bilinear couplings need a pure lattice state".into()));
        }
    }
    if branch.weight() == 0.0 {
        return Err(Error::InvalidArgument(format!("branch '{}' has zero weight", branch.label)));
    }

    let mode = residual_mode(branch, bath);
    let mut b = branch.clone();
    b.mu = b.expectation_mu(couplings, 0.0);
    let (r1, r2) = self_consistency_residual(&b, couplings, 0.0, &b.mu, mode)?;
    let start_residual = r1.max(r2);
    let full = r1.max(self_consistency_residual(&b, couplings, 0.0, &b.mu, ResidualMode::Density)?.1);
    if start_residual > opts.certify_tol && !opts.force {
        return Err(Error::Uncertified {
            label: b.label.clone(),
            residual: start_residual,
            tolerance: opts.certify_tol,
        });
    }
    let route = if couplings.has_bilinear() || (mode == ResidualMode::Pure && full > opts.certify_tol) {
        Route::Coupled
    } else if couplings.is_static() {
        Route::Static
    } else {
        Route::Driven
    };
    let monitor_mode = if route == Route::Coupled { ResidualMode::Pure } else { ResidualMode::Density };
    b.omega_shift = energy_shift(&b.mu, &b.beta)?;

    let mut record = TrajectoryRecord::new(Source::Ansatz);
    let mut track = BranchTrack::new(&b.label);
    record.times.push(0.0);
    track.push(&b, monitor_residual(&b.lattice, couplings, 0.0, &b.beta.0, &b.mu, monitor_mode), opts.keep_lattice);

    let evolver = EigenEvolver::new(model.h_lat(), &b.lattice)?;
    let omegas: Vec<f64> = (0..bath.n_modes()).map(|q| bath.omega(q)).collect();
    let dt = opts.dt;

    for step in 1..=opts.n_steps {
        let t0 = (step - 1) as f64 * dt;
        let t1 = step as f64 * dt;
        match route {
            Route::Static => {
                let mut dtheta = 0.0;
                for q in 0..omegas.len() {
                    dtheta += closed_form_phase(b.beta.0[q], omegas[q], b.mu[q], dt);
                    b.beta.0[q] = displacement_closed_form(b.beta.0[q], omegas[q], b.mu[q], dt)?;
                }
                b.theta += dtheta;
                b.lattice = evolver.at(t1);
            }
            Route::Driven => {
                let mid = evolver.at(t0 + dt / 2.0);
                let end = evolver.at(t1);
                let mu0 = b.mu.clone();
                let muh = (0..omegas.len()).map(|q| mid.expectation(&couplings.w_at(q, t0 + dt / 2.0))).collect::<Vec<_>>();
                let mu1 = (0..omegas.len()).map(|q| end.expectation(&couplings.w_at(q, t1))).collect::<Vec<_>>();
                let (beta, dtheta) = rk4_displacement_phase(&b.beta.0, &omegas, [&mu0, &muh, &mu1], dt);
                b.beta.0 = beta;
                b.theta += dtheta;
                b.lattice = end;
                b.mu = mu1;
            }
            Route::Coupled => {
                let LatticeState::Pure(alpha) = &b.lattice else {
                    unreachable!("coupled route requires a pure lattice state")
                };
                let (alpha, beta, dtheta) = rk4_coupled(alpha, &b.beta.0, model, &omegas, t0, dt);
                b.lattice = LatticeState::Pure(alpha);
                b.beta.0 = beta;
                b.theta += dtheta;
            }
        }
        // the static route keeps μ from the start; drift shows up in the monitor
        if route == Route::Coupled {
            b.mu = b.expectation_mu(couplings, t1);
        }
        b.omega_shift = energy_shift(&b.mu, &b.beta)?;
        let residual = monitor_residual(&b.lattice, couplings, t1, &b.beta.0, &b.mu, monitor_mode);
        let sample = step % opts.sample_stride == 0 || step == opts.n_steps;
        if residual > opts.abort_tol || !residual.is_finite() {
            record.times.push(t1);
            track.push(&b, residual, opts.keep_lattice);
            record.branches.push(track);
            return Err(Error::Aborted(Box::new(PropagationAbort {
                label: b.label.clone(),
                step,
                time: t1,
                residual,
                limit: opts.abort_tol,
                record,
            })));
        }
        if sample {
            record.times.push(t1);
            track.push(&b, residual, opts.keep_lattice);
        }
    }
    record.branches.push(track);
    Ok((b, record))
}

fn rk4_displacement_phase(beta: &[C64], omegas: &[f64], mu: [&[C64]; 3], dt: f64) -> (Vec<C64>, f64) {
    let n = beta.len();
    let rate = |m: &[C64], b: &[C64]| -> (Vec<C64>, f64) {
        let db = (0..n).map(|q| -I * (b[q] * omegas[q] + m[q])).collect();
        let om = -(0..n).map(|q| (m[q].conj() * b[q]).re).sum::<f64>();
        (db, om)
    };
    let add = |b: &[C64], k: &[C64], h: f64| -> Vec<C64> { b.iter().zip(k).map(|(b, k)| b + k * h).collect() };
    let (k1, o1) = rate(mu[0], beta);
    let (k2, o2) = rate(mu[1], &add(beta, &k1, dt / 2.0));
    let (k3, o3) = rate(mu[1], &add(beta, &k2, dt / 2.0));
    let (k4, o4) = rate(mu[2], &add(beta, &k3, dt));
    let out = (0..n)
        .map(|q| beta[q] + (k1[q] + k2[q] * 2.0 + k3[q] * 2.0 + k4[q]) * (dt / 6.0))
        .collect();
    (out, (o1 + 2.0 * o2 + 2.0 * o3 + o4) * dt / 6.0)
}

/// Right-hand side of the pure-state D1 equations with the phase split off:
/// iα̇ = [H_lat + Σ_q (β_q w_q† + i Im(μ_q β_q*)) + Ω] α, iβ̇ = ωβ + μ, Θ̇ = Ω,
/// with μ_q = ⟨α|G_q|α⟩/⟨α|α⟩.
fn coupled_rate(alpha: &StateVector, beta: &[C64], model: &Model, omegas: &[f64], t: f64) -> (StateVector, Vec<C64>, f64) {
    let c = &model.couplings;
    let norm2 = alpha.norm_squared();
    let mu: Vec<C64> = (0..omegas.len())
        .map(|q| inner(alpha, &c.g_operator(q, t, beta).apply(alpha)) / norm2)
        .collect();
    let omega_shift = -(0..omegas.len()).map(|q| (mu[q].conj() * beta[q]).re).sum::<f64>();
    let mut h_alpha = model.h_lat().apply(alpha);
    let mut scalar = C64::new(omega_shift, 0.0);
    for q in 0..omegas.len() {
        h_alpha += c.apply_w_adjoint(q, t, alpha) * beta[q];
        scalar += I * (mu[q] * beta[q].conj()).im;
    }
    h_alpha += alpha * scalar;
    let d_alpha = h_alpha * (-I);
    let d_beta = (0..omegas.len()).map(|q| -I * (beta[q] * omegas[q] + mu[q])).collect();
    (d_alpha, d_beta, omega_shift)
}

fn rk4_coupled(alpha: &StateVector, beta: &[C64], model: &Model, omegas: &[f64], t: f64, dt: f64) -> (StateVector, Vec<C64>, f64) {
    let add = |b: &[C64], k: &[C64], h: f64| -> Vec<C64> { b.iter().zip(k).map(|(b, k)| b + k * h).collect() };
    let h2 = C64::new(dt / 2.0, 0.0);
    let (a1, b1, o1) = coupled_rate(alpha, beta, model, omegas, t);
    let (a2, b2, o2) = coupled_rate(&(alpha + &a1 * h2), &add(beta, &b1, dt / 2.0), model, omegas, t + dt / 2.0);
    let (a3, b3, o3) = coupled_rate(&(alpha + &a2 * h2), &add(beta, &b2, dt / 2.0), model, omegas, t + dt / 2.0);
    let (a4, b4, o4) = coupled_rate(&(alpha + &a3 * C64::new(dt, 0.0)), &add(beta, &b3, dt), model, omegas, t + dt);
    let sixth = C64::new(dt / 6.0, 0.0);
    let two = C64::new(2.0, 0.0);
    let a = alpha + (a1 + a2 * two + a3 * two + a4) * sixth;
    let b = (0..beta.len())
        .map(|q| beta[q] + (b1[q] + b2[q] * 2.0 + b3[q] * 2.0 + b4[q]) * (dt / 6.0))
        .collect();
    (a, b, (o1 + 2.0 * o2 + 2.0 * o3 + o4) * dt / 6.0)
}

/// Sum of branches with mutually orthogonal lattice states.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoherentProductState {
    pub branches: Vec<Branch>,
    pub bath: BathSpec,
}

impl CoherentProductState {
    pub fn new(branches: Vec<Branch>, bath: BathSpec) -> Result<Self> {
        if branches.is_empty() {
            return Err(Error::InvalidArgument("state needs at least one branch".into()));
        }
        let pure = matches!(branches[0].lattice, LatticeState::Pure(_));
        let dim = branches[0].lattice.dim();
        for b in &branches {
            if matches!(b.lattice, LatticeState::Pure(_)) != pure {
                return Err(Error::InvalidArgument("branches mix vector and operator lattice states".into()));
            }
            if b.lattice.dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "branch lattice dimensions",
                    expected: dim,
                    found: b.lattice.dim(),
                });
            }
            b.beta.check_len(bath.n_modes())?;
        }
        Ok(Self { branches, bath })
    }

    /// Branches α̂_s = P_s √ρ_lat for the given orthogonal projectors, all
    /// sharing the displacement `beta0`; empty branches are dropped.
    pub fn from_lattice_density(rho_lat: &ComplexMatrix, projectors: &[ComplexMatrix], beta0: &Displacement, bath: BathSpec) -> Result<Self> {
        let root = rho_lat.sqrt_psd();
        let branches = projectors
            .iter()
            .enumerate()
            .map(|(s, p)| Branch::operator(format!("b{s}"), p * &root, beta0.clone()))
            .filter(|b| b.weight() > 1e-15)
            .collect();
        Self::new(branches, bath)
    }

    pub fn total_weight(&self) -> f64 {
        self.branches.iter().map(Branch::weight).sum()
    }

    /// Largest ‖A_α'† A_α‖ over distinct branch pairs.
    pub fn orthogonality_defect(&self) -> f64 {
        let mut m = 0.0_f64;
        for (i, a) in self.branches.iter().enumerate() {
            for b in &self.branches[i + 1..] {
                m = m.max(a.lattice.range_overlap(&b.lattice));
            }
        }
        m
    }

    /// Propagate every branch independently and merge the records; reduced
    /// density matrices are assembled at each common sample when requested.
    pub fn propagate(&self, model: &Model, opts: &PropagationOptions, with_density: bool) -> Result<(Self, TrajectoryRecord)> {
        let results: Vec<Result<(Branch, TrajectoryRecord)>> = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .branches
                .iter()
                .map(|b| s.spawn(move || propagate_branch(b, model, opts)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("branch worker panicked")).collect()
        });
        let mut finals = Vec::new();
        let mut record = TrajectoryRecord::new(Source::Ansatz);
        for r in results {
            let (b, rec) = r?;
            if record.times.is_empty() {
                record.times = rec.times.clone();
            }
            record.branches.extend(rec.branches);
            finals.push(b);
        }
        let state = Self::new(finals, self.bath.clone())?;
        if with_density && opts.keep_lattice {
            for k in 0..record.len() {
                let branches = record.branches.iter().map(|t| t.branch_at(k).expect("lattice kept")).collect();
                let snap = Self::new(branches, self.bath.clone())?;
                let (lat, ph) = assemble_reduced(&snap)?;
                for i in 0..lat.dim() {
                    record.push_observable(&format!("pop{i}"), lat.get(i, i).re);
                }
                if lat.dim() > 1 {
                    record.push_complex_observable("coh01", lat.get(0, 1));
                }
                record.reduced_lattice.push(lat);
                record.reduced_phonon.push(ph);
            }
        }
        Ok((state, record))
    }
}

impl Displacement {
    fn check_len(&self, n_modes: usize) -> Result<()> {
        if self.len() != n_modes {
            return Err(Error::DimensionMismatch {
                context: "branch displacements vs bath modes",
                expected: n_modes,
                found: self.len(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityParts {
    pub full: ComplexMatrix,
    pub lattice: ComplexMatrix,
    pub phonon: ComplexMatrix,
}

fn gammas(state: &CoherentProductState) -> Result<Vec<ComplexMatrix>> {
    state
        .branches
        .iter()
        .map(|b| displaced_thermal_gamma(&b.beta, &state.bath))
        .collect()
}

/// Reduced lattice matrix Σ (γ_α'|γ_α) A_α A_α'† from the analytic overlaps,
/// and reduced phonon matrix Σ Tr(A_α'†A_α) γ_α γ_α'†.
pub fn assemble_reduced(state: &CoherentProductState) -> Result<(ComplexMatrix, ComplexMatrix)> {
    let lat_states: Vec<LatticeState> = state.branches.iter().map(Branch::phased_lattice).collect();
    let g = gammas(state)?;
    let dim_l = lat_states[0].dim();
    let dim_p = state.bath.phonon_dim();
    let mut lat = ComplexMatrix::zeros(dim_l);
    let mut ph = ComplexMatrix::zeros(dim_p);
    for (a, ba) in state.branches.iter().enumerate() {
        for (c, bc) in state.branches.iter().enumerate() {
            let ov = gaussian_overlap(&ba.beta, &bc.beta, &state.bath)?;
            lat += &lat_states[a].outer_with(&lat_states[c])?.scale(ov);
            let w = lat_states[a].overlap_with(&lat_states[c])?;
            if w != ZERO {
                ph += &(&g[a] * &g[c].adjoint()).scale(w);
            }
        }
    }
    Ok((lat, ph))
}

/// Full ρ = Σ_{αα'} A_α A_α'† ⊗ γ_α γ_α'† together with both reductions.
pub fn assemble_density(state: &CoherentProductState) -> Result<DensityParts> {
    let lat_states: Vec<LatticeState> = state.branches.iter().map(Branch::phased_lattice).collect();
    let g = gammas(state)?;
    let dim = lat_states[0].dim() * state.bath.phonon_dim();
    let mut full = ComplexMatrix::zeros(dim);
    for a in 0..lat_states.len() {
        for c in 0..lat_states.len() {
            full += &kron(&lat_states[a].outer_with(&lat_states[c])?, &(&g[a] * &g[c].adjoint()));
        }
    }
    let (lattice, phonon) = assemble_reduced(state)?;
    Ok(DensityParts { full, lattice, phonon })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bath::Mode;
    use crate::model::{build_dimer, build_frohlich, build_hopping_coupled, build_number_coupled, davydov_chi, LatticeSpec, Sector};
    use crate::operator::{basis_vector, boson_ladder, embed, partial_trace, trace_distance, testing::*};
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn se(vac: bool) -> Sector {
        Sector::SingleExcitation { include_vacuum: vac }
    }

    #[test]
    fn closed_form_cases() {
        let mu = c(0.3, -0.2);
        let w = 1.7;
        for t in [0.0, 0.4, 11.0] {
            let fixed = displacement_closed_form(-mu / w, w, mu, t).unwrap();
            assert!((fixed + mu / w).norm() < 1e-15);
            let free = displacement_closed_form(c(0.5, 0.1), w, ZERO, t).unwrap();
            assert!((free - c(0.5, 0.1) * C64::from_polar(1.0, -w * t)).norm() < 1e-15);
        }
        assert!(displacement_closed_form(ONE, 0.0, ONE, 1.0).is_err());
    }

    #[test]
    fn closed_form_matches_rk4() {
        let (w, mu, b0) = (1.0, c(0.25, 0.1), c(-0.3, 0.4));
        let dt = 1e-3;
        let traj = integrate_displacement_rk4(b0, w, |_| mu, dt, 50_000);
        let err = traj
            .iter()
            .enumerate()
            .map(|(k, b)| (b - displacement_closed_form(b0, w, mu, k as f64 * dt).unwrap()).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn energy_shift_cases() {
        assert_eq!(energy_shift(&[c(0.3, 0.2)], &Displacement(vec![ZERO])).unwrap(), 0.0);
        assert_abs_diff_eq!(energy_shift(&[c(0.3, 0.0)], &Displacement(vec![c(0.5, 0.0)])).unwrap(), -0.15, epsilon = 1e-16);
        let mu = c(0.3, -0.4);
        let w = 2.0;
        let om = energy_shift(&[mu], &Displacement(vec![-mu / w])).unwrap();
        assert_abs_diff_eq!(om, mu.norm_sqr() / w, epsilon = 1e-15);
        assert!(energy_shift(&[mu], &Displacement(vec![])).is_err());
    }

    #[test]
    fn closed_form_phase_matches_quadrature() {
        let (b0, w, mu) = (c(0.2, -0.1), 1.3, c(0.4, 0.2));
        let tau = 2.7;
        let n = 20_000;
        let h = tau / n as f64;
        let mut s = 0.0;
        for k in 0..=n {
            let b = displacement_closed_form(b0, w, mu, k as f64 * h).unwrap();
            let f = energy_shift(&[mu], &Displacement(vec![b])).unwrap();
            s += f * if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        assert_abs_diff_eq!(closed_form_phase(b0, w, mu, tau), s * h / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn pump_displacements_solve_lattice_equation() {
        let pump = PumpSpec::new(vec![c(0.2, 0.1), c(0.0, -0.3), c(0.1, 0.0), c(0.05, 0.05), ZERO]).unwrap();
        let (eps, j) = (1.1, 0.35);
        let n = pump.n_sites;
        for t in [0.0, 0.7, 3.2] {
            let h = 1e-4;
            let zp = pump_lattice_displacements(&pump, eps, j, t + h);
            let zm = pump_lattice_displacements(&pump, eps, j, t - h);
            let z = pump_lattice_displacements(&pump, eps, j, t);
            for s in 0..n {
                let fd = (zp[s] - zm[s]) / (2.0 * h);
                let rhs = -I * (z[s] * eps - (z[(s + n - 1) % n] + z[(s + 1) % n]) * j);
                assert!((fd - rhs).norm() < 1e-8);
            }
        }
        let frozen = pump_lattice_displacements(&pump, eps, 0.0, 2.0);
        let init = pump_lattice_displacements(&pump, eps, 0.0, 0.0);
        for s in 0..n {
            assert!((frozen[s] - init[s] * C64::from_polar(1.0, -eps * 2.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn single_q_pump_selection_rule() {
        let n = 8;
        let k = 1;
        let (zp, zm) = (c(0.3, 0.1), c(-0.1, 0.2));
        let pump = PumpSpec::single_q(n, k, zp, zm).unwrap();
        let chi = vec![c(0.2, 0.0); n];
        for t in [0.0, 1.3] {
            let zeta = pump_lattice_displacements(&pump, 1.0, 0.3, t);
            let mods: Vec<f64> = zeta.iter().map(|z| z.norm()).collect();
            let z0: Vec<f64> = pump_lattice_displacements(&pump, 1.0, 0.3, 0.0).iter().map(|z| z.norm()).collect();
            for s in 0..n {
                assert!((mods[s] - z0[s]).abs() < 1e-14);
            }
            let d = pump_phonon_drive(&chi, &zeta);
            for (q, v) in d.iter().enumerate() {
                let expected = match q {
                    0 => chi[0] * (zp.norm_sqr() + zm.norm_sqr()) * n as f64,
                    2 => chi[2] * zp * zm.conj() * n as f64,
                    6 => chi[6] * zp.conj() * zm * n as f64,
                    _ => ZERO,
                };
                assert!((v - expected).norm() < 1e-13, "q = {q}");
            }
        }
        assert!(pump_phonon_drive(&chi, &vec![ZERO; n]).iter().all(|z| *z == ZERO));
    }

    fn number_model(t: f64, n_cut: usize) -> Model {
        let lattice = LatticeSpec::ring(2, 0.5, 0.2, se(true)).unwrap();
        let bath = BathSpec::single(1.0, n_cut, t).unwrap();
        build_number_coupled(lattice, bath, vec![c(0.3, 0.0)]).unwrap()
    }

    #[test]
    fn number_sector_trivial_solution() {
        let m = number_model(0.0, 20);
        let v = (basis_vector(3, 1) + basis_vector(3, 2)) / c(2f64.sqrt(), 0.0);
        let b0 = c(0.1, -0.2);
        let branch = Branch::pure("a", v, Displacement(vec![b0]));
        let opts = PropagationOptions::new(0.01, 500);
        let (fin, rec) = propagate_branch(&branch, &m, &opts).unwrap();
        let t = 5.0;
        let expected = displacement_closed_form(b0, 1.0, c(0.3, 0.0), t).unwrap();
        assert!((fin.beta.0[0] - expected).norm() < 1e-12);
        assert!(rec.branches[0].residual.iter().all(|&r| r < 1e-12));
        assert!((fin.weight() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_coupling_gives_bare_evolution() {
        let lattice = LatticeSpec::ring(3, 0.5, 0.2, se(false)).unwrap();
        let m = build_number_coupled(lattice, BathSpec::single(1.0, 10, 0.0).unwrap(), vec![ZERO]).unwrap();
        let mut r = rng(1);
        let v = random_vector(&mut r, 3);
        let b0 = c(0.2, 0.1);
        let (fin, rec) = propagate_branch(&Branch::pure("a", v.clone(), Displacement(vec![b0])), &m, &PropagationOptions::new(0.05, 40)).unwrap();
        let LatticeState::Pure(out) = &fin.lattice else { panic!() };
        let exact = m.h_lat().unitary_propagator(2.0).apply(&v);
        assert!((out - exact).norm() < 1e-12);
        assert!(rec.branches[0].omega_shift.iter().all(|&o| o == 0.0));
        // free rotation of β
        assert!((fin.beta.0[0] - b0 * C64::from_polar(1.0, -2.0)).norm() < 1e-12);
    }

    #[test]
    fn dimer_branch_displacements() {
        let bath = BathSpec::single(1.0, 20, 0.0).unwrap();
        let d = build_dimer(1.0, 0.3, vec![c(0.1, 0.0)], vec![c(0.3, 0.0)], bath).unwrap();
        for j in 0..2 {
            let br = Branch::pure("j", basis_vector(2, j), Displacement(vec![ZERO]));
            let (fin, _) = propagate_branch(&br, &d.normal, &PropagationOptions::new(0.01, 300)).unwrap();
            let chi = d.normal_couplings(j)[0];
            let expected = chi * (C64::from_polar(1.0, -3.0) - ONE);
            assert!((fin.beta.0[0] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn residual_examples() {
        let n = 4;
        let bath = BathSpec::new(vec![Mode { omega: 1.0, n_cut: 3 }; n], 0.0).unwrap();
        let lattice = LatticeSpec::ring(n, 1.0, 0.3, se(false)).unwrap();
        let chi2 = 0.05;
        let m = build_hopping_coupled(lattice, bath, vec![c(0.3, 0.0); n], vec![c(chi2, 0.0); n]).unwrap();
        let br = Branch::pure("a", basis_vector(n, 1), Displacement::zeros(n));
        let mu = br.expectation_mu(&m.couplings, 0.0);
        let (r1, _) = self_consistency_residual(&br, &m.couplings, 0.0, &mu, ResidualMode::Pure).unwrap();
        // w_q v leaks chi2 * ω onto both neighbours
        assert_abs_diff_eq!(r1, chi2 * 2f64.sqrt(), epsilon = 1e-12);

        let lattice = LatticeSpec::ring(2, 1.0, 0.3, Sector::Bosonic { cutoff: 12 }).unwrap();
        let m = build_number_coupled(lattice.clone(), BathSpec::single(1.0, 3, 0.0).unwrap(), vec![c(0.3, 0.0)]).unwrap();
        let coh = lattice.coherent_product(&[c(0.5, 0.0), c(0.2, 0.1)]).unwrap();
        let br = Branch::pure("coh", coh, Displacement::zeros(1));
        let mu = br.expectation_mu(&m.couplings, 0.0);
        let r = self_consistency_residual(&br, &m.couplings, 0.0, &mu, ResidualMode::Density).unwrap();
        assert!(r.0 > 0.05 && r.1 > 0.05);

        let dfs = Branch::pure("n", lattice.coherent_product(&[ZERO, ZERO]).unwrap(), Displacement::zeros(1));
        let r = self_consistency_residual(&dfs, &m.couplings, 0.0, &[ZERO], ResidualMode::Density).unwrap();
        assert!(r.0 < 1e-10 && r.1 < 1e-10);
    }

    #[test]
    fn uncertified_branch_refused() {
        let m = number_model(0.0, 10);
        let v = (basis_vector(3, 0) + basis_vector(3, 1)) / c(2f64.sqrt(), 0.0);
        let rho = ComplexMatrix::outer(&v, &v);
        let br = Branch::operator("mixed", rho, Displacement(vec![ZERO]));
        assert!(matches!(propagate_branch(&br, &m, &PropagationOptions::new(0.01, 10)), Err(Error::Uncertified { .. })));
    }

    #[test]
    fn single_branch_zero_displacement_is_product() {
        let m = number_model(0.5, 25);
        let mut r = rng(4);
        let rho = random_density(&mut r, 3);
        let p1 = &ComplexMatrix::identity(3) - &ComplexMatrix::from_real_diagonal(&[1.0, 0.0, 0.0]);
        let state = CoherentProductState::new(vec![Branch::operator("a", &p1 * &rho.sqrt_psd(), Displacement(vec![ZERO]))], m.bath.clone()).unwrap();
        let parts = assemble_density(&state).unwrap();
        let lat = &(&p1 * &rho) * &p1;
        let th = crate::bath::thermal_density(&m.bath, 0).unwrap();
        assert!((&parts.full - &kron(&lat, &th)).max_abs() < 1e-14);
    }

    #[test]
    fn assembled_reductions_match_partial_trace() {
        for temp in [0.0, 0.7] {
            let bath = BathSpec::single(1.0, 25, temp).unwrap();
            let d = build_dimer(1.0, 0.3, vec![c(0.1, 0.0)], vec![c(0.3, 0.05)], bath.clone()).unwrap();
            let phi = [c(0.6, 0.0), c(0.0, 0.8)];
            let co = [basis_vector(2, 0), (basis_vector(2, 0) + basis_vector(2, 1) * I) / c(2f64.sqrt(), 0.0)];
            let branches = (0..2)
                .map(|j| {
                    let op = ComplexMatrix::outer(&basis_vector(2, j), &co[j]).scale(phi[j]);
                    Branch::operator(format!("b{j}"), op, Displacement(vec![c(0.3 * j as f64, -0.2)]))
                })
                .collect();
            let state = CoherentProductState::new(branches, bath).unwrap();
            let parts = assemble_density(&state).unwrap();
            let space = d.normal.space();
            let lat = partial_trace(&parts.full, &space, &[0]).unwrap();
            let ph = partial_trace(&parts.full, &space, &[1]).unwrap();
            assert!(trace_distance(&lat, &parts.lattice).unwrap() < 1e-9);
            assert!(trace_distance(&ph, &parts.phonon).unwrap() < 1e-9);
            assert!((parts.full.trace() - ONE).norm() < 1e-9);

            // ⟨b⟩ from the full matrix equals the weighted displacement mean
            let (b, _) = boson_ladder(25).unwrap();
            let bfull = embed(&b, 1, &space).unwrap();
            let mean = (&parts.full * &bfull).trace();
            let expected: C64 = state.branches.iter().map(|br| br.beta.0[0] * br.weight()).sum();
            assert!((mean - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn pure_branches_share_co_state_form() {
        let bath = BathSpec::single(1.0, 25, 0.0).unwrap();
        let v0 = basis_vector(2, 0) * c(0.6, 0.0);
        let v1 = basis_vector(2, 1) * c(0.0, 0.8);
        let b = [c(0.2, 0.0), c(-0.3, 0.1)];
        let state = CoherentProductState::new(
            vec![Branch::pure("a", v0.clone(), Displacement(vec![b[0]])), Branch::pure("b", v1.clone(), Displacement(vec![b[1]]))],
            bath,
        )
        .unwrap();
        let parts = assemble_density(&state).unwrap();
        // purity: Tr ρ² = 1
        let purity = (&parts.full * &parts.full).trace().re;
        assert!((purity - 1.0).abs() < 1e-9);
        // an operator pair with different co-states is mixed
        let s = 1.0 / 2f64.sqrt();
        let ops = vec![
            Branch::operator("a", ComplexMatrix::outer(&basis_vector(2, 0), &basis_vector(2, 0)).scale_real(s), Displacement(vec![b[0]])),
            Branch::operator("b", ComplexMatrix::outer(&basis_vector(2, 1), &basis_vector(2, 1)).scale_real(s), Displacement(vec![b[1]])),
        ];
        let mixed = CoherentProductState::new(ops, BathSpec::single(1.0, 25, 0.0).unwrap()).unwrap();
        let p = assemble_density(&mixed).unwrap().full;
        assert!(((&p * &p).trace().re - 0.5).abs() < 1e-9);
    }

    #[test]
    fn stationary_bath_keeps_phonons_fixed() {
        let m = number_model(0.5, 25);
        let mut r = rng(8);
        let rho = random_density(&mut r, 3);
        let projs = [ComplexMatrix::from_real_diagonal(&[1.0, 0.0, 0.0]), ComplexMatrix::from_real_diagonal(&[0.0, 1.0, 1.0])];
        let state = CoherentProductState::from_lattice_density(&rho, &projs, &Displacement(vec![ZERO]), m.bath.clone()).unwrap();
        let branches = state.branches.iter().cloned().map(|b| b.with_stationary_bath(&m)).collect();
        let state = CoherentProductState::new(branches, m.bath.clone()).unwrap();
        let mut opts = PropagationOptions::new(0.05, 200);
        opts.sample_stride = 20;
        let (_, rec) = state.propagate(&m, &opts, true).unwrap();
        let first = &rec.reduced_phonon[0];
        for ph in &rec.reduced_phonon {
            assert!(trace_distance(first, ph).unwrap() < 1e-10);
        }
        let lat0 = &rec.reduced_lattice[0];
        assert!(rec.reduced_lattice.iter().any(|l| trace_distance(lat0, l).unwrap() > 1e-3));
    }

    #[test]
    fn conservation_over_long_runs() {
        let m = number_model(0.0, 10);
        let mut r = rng(12);
        let rho = random_density(&mut r, 3);
        let projs = [ComplexMatrix::from_real_diagonal(&[1.0, 0.0, 0.0]), ComplexMatrix::from_real_diagonal(&[0.0, 1.0, 1.0])];
        let state = CoherentProductState::from_lattice_density(&rho, &projs, &Displacement(vec![c(0.1, 0.0)]), m.bath.clone()).unwrap();
        let mut opts = PropagationOptions::new(0.01, 10_000);
        opts.sample_stride = 1000;
        let (fin, rec) = state.propagate(&m, &opts, false).unwrap();
        for (b0, b1) in state.branches.iter().zip(&fin.branches) {
            assert!((b0.weight() - b1.weight()).abs() < 1e-12);
        }
        assert!(fin.orthogonality_defect() < 1e-10);
        assert!((fin.total_weight() - 1.0).abs() < 1e-12);
        assert!(rec.branches.iter().all(|t| t.omega_shift_imag.iter().all(|x| x.abs() < 1e-14)));
    }

    #[test]
    fn bilinear_zero_temperature_branch_runs() {
        use crate::model::{BilinearCoupling, CouplingSet, ModelKind};
        let lattice = LatticeSpec::diagonal(vec![0.0, 0.4], se(false)).unwrap();
        let n = lattice.number(1);
        let w = vec![n.scale(c(0.2, 0.0)), n.scale(c(0.1, 0.05))];
        let u = vec![
            BilinearCoupling { q: 0, q2: 1, op: n.scale(c(0.05, 0.02)) },
            BilinearCoupling { q: 1, q2: 0, op: n.scale(c(0.05, -0.02)) },
        ];
        let cs = CouplingSet::static_ops(w).unwrap().with_bilinear(u).unwrap();
        let bath = BathSpec::new(vec![Mode { omega: 1.0, n_cut: 10 }, Mode { omega: 1.5, n_cut: 10 }], 0.0).unwrap();
        let m = Model::new(ModelKind::Custom, lattice, bath, cs).unwrap();
        let br = Branch::pure("x", basis_vector(2, 1), Displacement(vec![c(0.1, 0.0), ZERO]));
        let (fin, rec) = propagate_branch(&br, &m, &PropagationOptions::new(0.001, 2000)).unwrap();
        assert!((fin.weight() - 1.0).abs() < 1e-10);
        assert!(rec.branches[0].residual.iter().all(|&r| r < 1e-10));
        assert!(fin.beta.0.iter().all(|b| b.norm() < 1.0));
    }

    #[test]
    fn record_csv_layout() {
        let m = number_model(0.0, 10);
        let br = Branch::pure("a", basis_vector(3, 1), Displacement(vec![ZERO]));
        let mut opts = PropagationOptions::new(0.1, 4);
        opts.sample_stride = 2;
        let (_, rec) = propagate_branch(&br, &m, &opts).unwrap();
        assert_eq!(rec.times, vec![0.0, 0.2, 0.4]);
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "time,a_beta0_re,a_beta0_im,a_Omega,a_Theta");
        assert_eq!(lines.count(), 3);
        assert!(rec.to_json().unwrap().contains("\"source\": \"ansatz\""));
    }

    #[test]
    fn davydov_site_states_propagate() {
        let n = 3;
        let bath = BathSpec::new(vec![Mode { omega: 1.0, n_cut: 10 }; n], 0.0).unwrap();
        let lattice = LatticeSpec::diagonal(vec![0.1, 0.2, 0.3], se(false)).unwrap();
        let m = build_frohlich(lattice, bath, davydov_chi(&vec![c(0.2, 0.0); n], n)).unwrap();
        let br = Branch::pure("s1", basis_vector(n, 1), Displacement::zeros(n));
        let (_, rec) = propagate_branch(&br, &m, &PropagationOptions::new(0.01, 100)).unwrap();
        assert!(rec.branches[0].residual.iter().all(|&r| r < 1e-12));
    }
}
