//! Lattice–phonon model families and their full-space Hamiltonians.
//!
//! Every model is a triple (H_lat, couplings, bath) with interaction
//! W = Σ_q (b_q† w_q + b_q w_q†) + Σ_{qq'} b_q† b_q' u_{qq'}. Translation
//! invariant models live on a ring with lattice constant 1 and wave numbers
//! q_k = 2πk/N.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::bath::BathSpec;
use crate::error::{Error, Result};
use crate::operator::{
    boson_ladder, embed, kron, ComplexMatrix, ProductSpace, StateVector, I, ONE, ZERO,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Sector {
    /// Hard-core single-quantum states |1_n>, optionally preceded by the vacuum.
    SingleExcitation { include_vacuum: bool },
    /// Independent bosonic sites, each truncated to `cutoff` levels.
    Bosonic { cutoff: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatticeSpec {
    n_sites: usize,
    epsilon: Vec<f64>,
    hopping: ComplexMatrix,
    sector: Sector,
}

impl LatticeSpec {
    pub fn new(epsilon: Vec<f64>, hopping: ComplexMatrix, sector: Sector) -> Result<Self> {
        let n_sites = epsilon.len();
        if n_sites == 0 {
            return Err(Error::InvalidArgument("lattice needs at least one site".into()));
        }
        if hopping.dim() != n_sites {
            return Err(Error::DimensionMismatch {
                context: "hopping matrix vs site count",
                expected: n_sites,
                found: hopping.dim(),
            });
        }
        let dev = hopping.hermiticity_deviation();
        if dev > 1e-12 {
            return Err(Error::NotHermitian {
                context: "hopping matrix J_mn",
                deviation: dev,
            });
        }
        if let Sector::Bosonic { cutoff } = sector {
            if cutoff < 2 {
                return Err(Error::InvalidArgument("bosonic site cutoff must be at least 2".into()));
            }
        }
        Ok(Self {
            n_sites,
            epsilon,
            hopping,
            sector,
        })
    }

    /// Sites without hopping.
    pub fn diagonal(epsilon: Vec<f64>, sector: Sector) -> Result<Self> {
        let n = epsilon.len();
        Self::new(epsilon, ComplexMatrix::zeros(n), sector)
    }

    /// Uniform ring with nearest-neighbour hopping −J Σ_n (c_{n+1}† c_n + h.c.).
    pub fn ring(n_sites: usize, epsilon: f64, j: f64, sector: Sector) -> Result<Self> {
        if n_sites < 2 {
            return Err(Error::InvalidArgument("a ring needs at least two sites".into()));
        }
        let mut hop = ComplexMatrix::zeros(n_sites);
        for n in 0..n_sites {
            let m = (n + 1) % n_sites;
            hop.set(m, n, hop.get(m, n) - j);
            hop.set(n, m, hop.get(n, m) - j);
        }
        Self::new(vec![epsilon; n_sites], hop, sector)
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn epsilon(&self) -> &[f64] {
        &self.epsilon
    }

    pub fn hopping(&self) -> &ComplexMatrix {
        &self.hopping
    }

    pub fn sector(&self) -> Sector {
        self.sector
    }

    pub fn dim(&self) -> usize {
        match self.sector {
            Sector::SingleExcitation { include_vacuum } => self.n_sites + usize::from(include_vacuum),
            Sector::Bosonic { cutoff } => cutoff.pow(self.n_sites as u32),
        }
    }

    fn site_space(&self) -> Option<ProductSpace> {
        match self.sector {
            Sector::Bosonic { cutoff } => Some(
                ProductSpace::new((0..self.n_sites).map(|n| (format!("site{n}"), cutoff)).collect())
                    .expect("site labels are unique"),
            ),
            _ => None,
        }
    }

    fn site_offset(&self) -> usize {
        match self.sector {
            Sector::SingleExcitation { include_vacuum } => usize::from(include_vacuum),
            Sector::Bosonic { .. } => 0,
        }
    }

    /// Basis index of |1_n> in the single-excitation sector.
    pub fn site_index(&self, n: usize) -> Option<usize> {
        match self.sector {
            Sector::SingleExcitation { .. } if n < self.n_sites => Some(n + self.site_offset()),
            _ => None,
        }
    }

    /// Lattice vacuum |0>_lat, if the sector contains it.
    pub fn vacuum(&self) -> Option<StateVector> {
        match self.sector {
            Sector::SingleExcitation { include_vacuum: false } => None,
            _ => {
                let mut v = StateVector::zeros(self.dim());
                v[0] = ONE;
                Some(v)
            }
        }
    }

    /// c_m† c_n
    pub fn hop(&self, m: usize, n: usize) -> ComplexMatrix {
        match self.sector {
            Sector::SingleExcitation { .. } => {
                let off = self.site_offset();
                let mut op = ComplexMatrix::zeros(self.dim());
                op.set(m + off, n + off, ONE);
                op
            }
            Sector::Bosonic { .. } => &self.creator(m).expect("bosonic") * &self.annihilator(n).expect("bosonic"),
        }
    }

    pub fn number(&self, n: usize) -> ComplexMatrix {
        self.hop(n, n)
    }

    pub fn total_number(&self) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.dim());
        for n in 0..self.n_sites {
            out += &self.number(n);
        }
        out
    }

    /// c_n; requires a sector containing states with different excitation numbers.
    pub fn annihilator(&self, n: usize) -> Result<ComplexMatrix> {
        match self.sector {
            Sector::SingleExcitation { include_vacuum: true } => {
                let mut op = ComplexMatrix::zeros(self.dim());
                op.set(0, n + 1, ONE);
                Ok(op)
            }
            Sector::SingleExcitation { include_vacuum: false } => Err(Error::InvalidArgument(
                "single-excitation sector without vacuum has no c_n".into(),
            )),
            Sector::Bosonic { cutoff } => {
                let (b, _) = boson_ladder(cutoff)?;
                embed(&b, n, &self.site_space().expect("bosonic"))
            }
        }
    }

    pub fn creator(&self, n: usize) -> Result<ComplexMatrix> {
        Ok(self.annihilator(n)?.adjoint())
    }

    /// H_lat = Σ ε_n n̂_n + Σ_mn J_mn c_m† c_n
    pub fn hamiltonian(&self) -> ComplexMatrix {
        let mut h = ComplexMatrix::zeros(self.dim());
        for n in 0..self.n_sites {
            h += &self.number(n).scale_real(self.epsilon[n]);
        }
        for m in 0..self.n_sites {
            for n in 0..self.n_sites {
                let j = self.hopping.get(m, n);
                if j != ZERO {
                    h += &self.hop(m, n).scale(j);
                }
            }
        }
        h
    }

    /// Product of site coherent states, each with amplitude `z[n]` (c_n |z> = z_n |z>).
    pub fn coherent_product(&self, z: &[C64]) -> Result<StateVector> {
        let Sector::Bosonic { cutoff } = self.sector else {
            return Err(Error::InvalidArgument("coherent lattice states need a bosonic sector".into()));
        };
        let mut out: Option<StateVector> = None;
        for &zn in z {
            let v = crate::bath::coherent_state(zn, crate::bath::Mode { omega: 1.0, n_cut: cutoff })?;
            out = Some(match out {
                None => v,
                Some(acc) => acc.kronecker(&v),
            });
        }
        out.ok_or_else(|| Error::InvalidArgument("empty amplitude list".into()))
    }
}

/// Wave number of ring mode k.
pub fn ring_wavenumber(k: usize, n_sites: usize) -> f64 {
    2.0 * PI * k as f64 / n_sites as f64
}

/// Initial normal-mode amplitudes of an external lattice pump on a ring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PumpSpec {
    pub n_sites: usize,
    /// ζ_q(0) for q = 2πk/N, k = 0..N.
    pub zeta0_q: Vec<C64>,
}

impl PumpSpec {
    pub fn new(zeta0_q: Vec<C64>) -> Result<Self> {
        if zeta0_q.len() < 2 {
            return Err(Error::InvalidArgument("pump needs a ring of at least two sites".into()));
        }
        Ok(Self {
            n_sites: zeta0_q.len(),
            zeta0_q,
        })
    }

    /// ζ_n = (ζ₊ e^{iQn} + ζ₋ e^{−iQn}) e^{−iΩ_Q t} with Q = 2πk/N.
    pub fn single_q(n_sites: usize, k: usize, zeta_plus: C64, zeta_minus: C64) -> Result<Self> {
        let mut z = vec![ZERO; n_sites];
        z[k % n_sites] += zeta_plus;
        z[(n_sites - k % n_sites) % n_sites] += zeta_minus;
        Self::new(z)
    }

    pub fn zero(n_sites: usize) -> Result<Self> {
        Self::new(vec![ZERO; n_sites])
    }
}

/// Pump bound to the lattice parameters that drive its free evolution.
#[derive(Clone, Debug, PartialEq)]
pub struct PumpDrive {
    pub pump: PumpSpec,
    pub epsilon: f64,
    pub j: f64,
}

impl PumpDrive {
    pub fn zeta(&self, t: f64) -> Vec<C64> {
        crate::ansatz::pump_lattice_displacements(&self.pump, self.epsilon, self.j, t)
    }

    /// dζ_n/dt = −i[ε ζ_n − J(ζ_{n−1} + ζ_{n+1})]
    pub fn zeta_rate(&self, t: f64) -> Vec<C64> {
        let z = self.zeta(t);
        let n = z.len();
        (0..n)
            .map(|s| -I * (z[s] * self.epsilon - (z[(s + n - 1) % n] + z[(s + 1) % n]) * self.j))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Modulation {
    Constant,
    /// ζ_site(t), or its conjugate.
    PumpAmplitude { site: usize, conjugate: bool },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingTerm {
    pub op: ComplexMatrix,
    pub modulation: Modulation,
}

/// w_q(t) = Σ_k f_k(t) op_k.
#[derive(Clone, Debug, PartialEq)]
pub struct Coupling {
    pub terms: Vec<CouplingTerm>,
}

impl Coupling {
    pub fn constant(op: ComplexMatrix) -> Self {
        Self {
            terms: vec![CouplingTerm {
                op,
                modulation: Modulation::Constant,
            }],
        }
    }

    pub fn is_static(&self) -> bool {
        self.terms.iter().all(|t| t.modulation == Modulation::Constant)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BilinearCoupling {
    pub q: usize,
    pub q2: usize,
    pub op: ComplexMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingSet {
    w: Vec<Coupling>,
    u: Vec<BilinearCoupling>,
    chi_table: Option<Vec<Vec<C64>>>,
    pump: Option<PumpDrive>,
    lattice_dim: usize,
}

impl CouplingSet {
    pub fn new(lattice_dim: usize, w: Vec<Coupling>) -> Result<Self> {
        for c in &w {
            for t in &c.terms {
                if t.op.dim() != lattice_dim {
                    return Err(Error::DimensionMismatch {
                        context: "coupling operator vs lattice dimension",
                        expected: lattice_dim,
                        found: t.op.dim(),
                    });
                }
            }
        }
        Ok(Self {
            w,
            u: Vec::new(),
            chi_table: None,
            pump: None,
            lattice_dim,
        })
    }

    pub fn static_ops(ops: Vec<ComplexMatrix>) -> Result<Self> {
        let dim = ops.first().map_or(0, |o| o.dim());
        Self::new(dim, ops.into_iter().map(Coupling::constant).collect())
    }

    /// Adds bilinear terms; the set must satisfy u_{q'q}† = u_{qq'}.
    pub fn with_bilinear(mut self, u: Vec<BilinearCoupling>) -> Result<Self> {
        for b in &u {
            if b.q >= self.w.len() || b.q2 >= self.w.len() {
                return Err(Error::InvalidArgument(format!(
                    "bilinear coupling ({}, {}) references a missing mode",
                    b.q, b.q2
                )));
            }
            if b.op.dim() != self.lattice_dim {
                return Err(Error::DimensionMismatch {
                    context: "bilinear coupling vs lattice dimension",
                    expected: self.lattice_dim,
                    found: b.op.dim(),
                });
            }
        }
        let sum = |q: usize, q2: usize| -> ComplexMatrix {
            let mut acc = ComplexMatrix::zeros(self.lattice_dim);
            for b in u.iter().filter(|b| b.q == q && b.q2 == q2) {
                acc += &b.op;
            }
            acc
        };
        for b in &u {
            let dev = (&sum(b.q, b.q2) - &sum(b.q2, b.q).adjoint()).max_abs();
            if dev > 1e-12 {
                return Err(Error::InvalidArgument(format!(
                    "bilinear couplings violate u_(q'q)^† = u_(qq') for ({}, {}): deviation {dev:.2e}",
                    b.q, b.q2
                )));
            }
        }
        self.u = u;
        Ok(self)
    }

    pub fn n_modes(&self) -> usize {
        self.w.len()
    }

    pub fn lattice_dim(&self) -> usize {
        self.lattice_dim
    }

    pub fn couplings(&self) -> &[Coupling] {
        &self.w
    }

    pub fn bilinear(&self) -> &[BilinearCoupling] {
        &self.u
    }

    pub fn has_bilinear(&self) -> bool {
        !self.u.is_empty()
    }

    pub fn chi_table(&self) -> Option<&Vec<Vec<C64>>> {
        self.chi_table.as_ref()
    }

    pub fn pump(&self) -> Option<&PumpDrive> {
        self.pump.as_ref()
    }

    pub fn is_static(&self) -> bool {
        self.w.iter().all(Coupling::is_static)
    }

    fn modulation_value(&self, m: Modulation, t: f64, derivative: bool) -> C64 {
        match m {
            Modulation::Constant => {
                if derivative {
                    ZERO
                } else {
                    ONE
                }
            }
            Modulation::PumpAmplitude { site, conjugate } => {
                let pump = self.pump.as_ref().expect("pump-modulated coupling without pump");
                let z = if derivative { pump.zeta_rate(t)[site] } else { pump.zeta(t)[site] };
                if conjugate {
                    z.conj()
                } else {
                    z
                }
            }
        }
    }

    fn assemble(&self, q: usize, t: f64, derivative: bool) -> ComplexMatrix {
        let mut out = ComplexMatrix::zeros(self.lattice_dim);
        for term in &self.w[q].terms {
            let f = self.modulation_value(term.modulation, t, derivative);
            if f != ZERO {
                out += &term.op.scale(f);
            }
        }
        out
    }

    /// w_q(t)
    pub fn w_at(&self, q: usize, t: f64) -> ComplexMatrix {
        self.assemble(q, t, false)
    }

    /// ∂w_q/∂t
    pub fn dw_dt(&self, q: usize, t: f64) -> ComplexMatrix {
        self.assemble(q, t, true)
    }

    /// w_q(t) v without assembling the matrix.
    pub fn apply_w(&self, q: usize, t: f64, v: &StateVector) -> StateVector {
        let mut out = StateVector::zeros(v.len());
        let zeta = self.pump.as_ref().map(|p| p.zeta(t));
        for term in &self.w[q].terms {
            let f = match (term.modulation, &zeta) {
                (Modulation::Constant, _) => ONE,
                (Modulation::PumpAmplitude { site, conjugate }, Some(z)) => {
                    if conjugate {
                        z[site].conj()
                    } else {
                        z[site]
                    }
                }
                (Modulation::PumpAmplitude { .. }, None) => unreachable!("pump-modulated coupling without pump"),
            };
            if f != ZERO {
                out += term.op.apply(v) * f;
            }
        }
        out
    }

    /// w_q(t)† v
    pub fn apply_w_adjoint(&self, q: usize, t: f64, v: &StateVector) -> StateVector {
        let mut out = StateVector::zeros(v.len());
        let zeta = self.pump.as_ref().map(|p| p.zeta(t));
        for term in &self.w[q].terms {
            let f = match (term.modulation, &zeta) {
                (Modulation::Constant, _) => ONE,
                (Modulation::PumpAmplitude { site, conjugate }, Some(z)) => {
                    if conjugate {
                        z[site].conj()
                    } else {
                        z[site]
                    }
                }
                (Modulation::PumpAmplitude { .. }, None) => unreachable!("pump-modulated coupling without pump"),
            };
            if f != ZERO {
                out += term.op.as_dmatrix().ad_mul(v) * f.conj();
            }
        }
        out
    }

    /// G_q = w_q + Σ_{q'} β_{q'} u_{qq'}
    pub fn g_operator(&self, q: usize, t: f64, beta: &[C64]) -> ComplexMatrix {
        let mut g = self.w_at(q, t);
        for b in self.u.iter().filter(|b| b.q == q) {
            g += &b.op.scale(beta[b.q2]);
        }
        g
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Frohlich,
    NumberCoupled,
    HoppingCoupled,
    PumpedFrohlich,
    Dimer,
    Custom,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub kind: ModelKind,
    pub lattice: LatticeSpec,
    pub bath: BathSpec,
    pub couplings: CouplingSet,
    h_lat: ComplexMatrix,
}

impl Model {
    pub fn new(kind: ModelKind, lattice: LatticeSpec, bath: BathSpec, couplings: CouplingSet) -> Result<Self> {
        if couplings.n_modes() != bath.n_modes() {
            return Err(Error::DimensionMismatch {
                context: "coupling count vs bath modes",
                expected: bath.n_modes(),
                found: couplings.n_modes(),
            });
        }
        if couplings.lattice_dim() != lattice.dim() {
            return Err(Error::DimensionMismatch {
                context: "coupling operators vs lattice dimension",
                expected: lattice.dim(),
                found: couplings.lattice_dim(),
            });
        }
        if couplings.has_bilinear() && bath.temperature() > 0.0 {
            return Err(Error::FiniteTemperatureBilinear {
                temperature: bath.temperature(),
            });
        }
        let h_lat = lattice.hamiltonian();
        Ok(Self {
            kind,
            lattice,
            bath,
            couplings,
            h_lat,
        })
    }

    pub fn h_lat(&self) -> &ComplexMatrix {
        &self.h_lat
    }

    pub fn space(&self) -> ProductSpace {
        let mut f = vec![("lattice".to_string(), self.lattice.dim())];
        f.extend(self.bath.modes().iter().enumerate().map(|(q, m)| (format!("mode{q}"), m.n_cut)));
        ProductSpace::new(f).expect("labels are unique")
    }

    /// The pumped-model drive χ_q Σ_n e^{−iqn} |ζ_n(t)|², one value per mode.
    pub fn pump_drive(&self, t: f64) -> Option<Vec<C64>> {
        let pump = self.couplings.pump()?;
        let chi = self.couplings.chi_table()?;
        let zeta = pump.zeta(t);
        Some(
            chi.iter()
                .map(|row| row.iter().zip(&zeta).map(|(c, z)| c * z.norm_sqr()).sum())
                .collect(),
        )
    }
}

fn lattice_phonon_terms(model: &Model, t: f64) -> Result<ComplexMatrix> {
    let space = model.space();
    let nl = model.lattice.dim();
    let mut h = embed(&model.h_lat, 0, &space)?;
    let mut ladders = Vec::with_capacity(model.bath.n_modes());
    for q in 0..model.bath.n_modes() {
        let n_cut = model.bath.n_cut(q);
        let (b, bd) = boson_ladder(n_cut)?;
        let bq = embed(&b, q + 1, &space)?;
        let n_op = &bd * &b;
        h += &embed(&n_op, q + 1, &space)?.scale_real(model.bath.omega(q));
        ladders.push(bq);
    }
    for (q, bq) in ladders.iter().enumerate() {
        let w = embed(&model.couplings.w_at(q, t), 0, &space)?;
        let term = &bq.adjoint() * &w;
        h += &term;
        h += &term.adjoint();
    }
    for u in model.couplings.bilinear() {
        let op = embed(&u.op, 0, &space)?;
        h += &(&(&ladders[u.q].adjoint() * &ladders[u.q2]) * &op);
    }
    debug_assert_eq!(h.dim(), nl * model.bath.phonon_dim());
    Ok(h)
}

/// H(t) = H_lat + H_ph + W(t) on lattice ⊗ modes.
pub fn full_hamiltonian(model: &Model, t: f64) -> Result<ComplexMatrix> {
    lattice_phonon_terms(model, t)
}

/// General Frohlich model: w_q = ω_q Σ_n χ_{qn} n̂_n, `chi[q][n]`.
pub fn build_frohlich(lattice: LatticeSpec, bath: BathSpec, chi: Vec<Vec<C64>>) -> Result<Model> {
    check_chi_table(&chi, bath.n_modes(), lattice.n_sites())?;
    let w = frohlich_couplings(&lattice, &bath, &chi);
    let mut couplings = CouplingSet::static_ops(w)?;
    couplings.lattice_dim = lattice.dim();
    couplings.chi_table = Some(chi);
    Model::new(ModelKind::Frohlich, lattice, bath, couplings)
}

fn check_chi_table(chi: &[Vec<C64>], n_modes: usize, n_sites: usize) -> Result<()> {
    if chi.len() != n_modes {
        return Err(Error::DimensionMismatch {
            context: "chi table rows vs bath modes",
            expected: n_modes,
            found: chi.len(),
        });
    }
    for row in chi {
        if row.len() != n_sites {
            return Err(Error::DimensionMismatch {
                context: "chi table columns vs lattice sites",
                expected: n_sites,
                found: row.len(),
            });
        }
    }
    Ok(())
}

fn frohlich_couplings(lattice: &LatticeSpec, bath: &BathSpec, chi: &[Vec<C64>]) -> Vec<ComplexMatrix> {
    chi.iter()
        .enumerate()
        .map(|(q, row)| {
            let mut w = ComplexMatrix::zeros(lattice.dim());
            for (n, &c) in row.iter().enumerate() {
                w += &lattice.number(n).scale(c * bath.omega(q));
            }
            w
        })
        .collect()
}

/// Davydov table χ_{qn} = χ_q e^{i n q_k} on a ring of `n_sites`, one row per mode k.
pub fn davydov_chi(chi_q: &[C64], n_sites: usize) -> Vec<Vec<C64>> {
    chi_q
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let q = ring_wavenumber(k, n_sites);
            (0..n_sites).map(|n| c * C64::from_polar(1.0, n as f64 * q)).collect()
        })
        .collect()
}

/// Site-homogeneous coupling w_q = χ_q N̂_lat.
pub fn build_number_coupled(lattice: LatticeSpec, bath: BathSpec, chi_q: Vec<C64>) -> Result<Model> {
    if chi_q.len() != bath.n_modes() {
        return Err(Error::DimensionMismatch {
            context: "chi_q vs bath modes",
            expected: bath.n_modes(),
            found: chi_q.len(),
        });
    }
    let n_op = lattice.total_number();
    let w = chi_q.iter().map(|&c| n_op.scale(c)).collect();
    let couplings = CouplingSet::static_ops(w)?;
    Model::new(ModelKind::NumberCoupled, lattice, bath, couplings)
}

/// Hopping-modulated coupling on a ring:
/// w_q = ω_q Σ_n [χ⁽¹⁾_q n̂_n + χ⁽²⁾_q (c_{n+1}† c_n + c_n† c_{n+1})] e^{i n q}, mode k has q = 2πk/N.
pub fn build_hopping_coupled(
    lattice: LatticeSpec,
    bath: BathSpec,
    chi1: Vec<C64>,
    chi2: Vec<C64>,
) -> Result<Model> {
    let n_modes = bath.n_modes();
    if chi1.len() != n_modes || chi2.len() != n_modes {
        return Err(Error::DimensionMismatch {
            context: "chi1/chi2 vs bath modes",
            expected: n_modes,
            found: chi1.len().min(chi2.len()),
        });
    }
    let ns = lattice.n_sites();
    let w = (0..n_modes)
        .map(|k| {
            let q = ring_wavenumber(k, ns);
            let mut w = ComplexMatrix::zeros(lattice.dim());
            for n in 0..ns {
                let phase = C64::from_polar(bath.omega(k), n as f64 * q);
                let next = (n + 1) % ns;
                w += &lattice.number(n).scale(chi1[k] * phase);
                let hop = &lattice.hop(next, n) + &lattice.hop(n, next);
                w += &hop.scale(chi2[k] * phase);
            }
            w
        })
        .collect();
    let mut couplings = CouplingSet::static_ops(w)?;
    couplings.lattice_dim = lattice.dim();
    Model::new(ModelKind::HoppingCoupled, lattice, bath, couplings)
}

/// Pumped Frohlich chain with acoustic couplings χ_{qn} = χ_q e^{−iqn}:
/// w_q(t) = ω_q Σ_n χ_{qn} [n̂_n + ζ_n(t) c_n† + ζ_n*(t) c_n].
pub fn build_pumped_frohlich(
    lattice: LatticeSpec,
    bath: BathSpec,
    chi_q: Vec<C64>,
    pump: PumpSpec,
) -> Result<Model> {
    let ns = lattice.n_sites();
    if pump.n_sites != ns {
        return Err(Error::DimensionMismatch {
            context: "pump ring vs lattice sites",
            expected: ns,
            found: pump.n_sites,
        });
    }
    if chi_q.len() != bath.n_modes() {
        return Err(Error::DimensionMismatch {
            context: "chi_q vs bath modes",
            expected: bath.n_modes(),
            found: chi_q.len(),
        });
    }
    let eps = lattice.epsilon()[0];
    if lattice.epsilon().iter().any(|&e| e != eps) {
        return Err(Error::InvalidArgument("pumped model needs uniform site energies".into()));
    }
    // nearest-neighbour amplitude from the ring hopping matrix
    let j = -lattice.hopping().get((1) % ns, 0).re / if ns == 2 { 2.0 } else { 1.0 };
    let chi: Vec<Vec<C64>> = chi_q
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let q = ring_wavenumber(k, ns);
            (0..ns).map(|n| c * C64::from_polar(1.0, -(n as f64) * q)).collect()
        })
        .collect();
    let pumped = pump.zeta0_q.iter().any(|z| *z != ZERO);
    let mut w = Vec::with_capacity(chi.len());
    for (q, row) in chi.iter().enumerate() {
        let om = bath.omega(q);
        let mut terms = Vec::new();
        let mut stat = ComplexMatrix::zeros(lattice.dim());
        for (n, &c) in row.iter().enumerate() {
            stat += &lattice.number(n).scale(c * om);
        }
        terms.push(CouplingTerm {
            op: stat,
            modulation: Modulation::Constant,
        });
        if pumped {
            for (n, &c) in row.iter().enumerate() {
                terms.push(CouplingTerm {
                    op: lattice.creator(n)?.scale(c * om),
                    modulation: Modulation::PumpAmplitude { site: n, conjugate: false },
                });
                terms.push(CouplingTerm {
                    op: lattice.annihilator(n)?.scale(c * om),
                    modulation: Modulation::PumpAmplitude { site: n, conjugate: true },
                });
            }
        }
        w.push(Coupling { terms });
    }
    let mut couplings = CouplingSet::new(lattice.dim(), w)?;
    couplings.chi_table = Some(chi);
    couplings.pump = Some(PumpDrive { pump, epsilon: eps, j });
    Model::new(ModelKind::PumpedFrohlich, lattice, bath, couplings)
}

/// Symmetric dimer in both the site and the normal-mode representation.
#[derive(Clone, Debug, PartialEq)]
pub struct DimerModel {
    pub epsilon: f64,
    pub j: f64,
    pub chi: Vec<C64>,
    pub lambda: Vec<C64>,
    /// Site-basis model (phonon-assisted tunnelling).
    pub site: Model,
    /// Normal-mode model with ε̄_{1,2} = ε ∓ J and χ_{q,1,2} = χ_q ∓ λ_q.
    pub normal: Model,
    /// Columns are |1̄>, |2̄> in the site basis.
    pub rotation: ComplexMatrix,
}

impl DimerModel {
    pub fn normal_energies(&self) -> [f64; 2] {
        [self.epsilon - self.j, self.epsilon + self.j]
    }

    /// χ_{q,j} for branch j ∈ {0, 1}.
    pub fn normal_couplings(&self, branch: usize) -> Vec<C64> {
        self.chi
            .iter()
            .zip(&self.lambda)
            .map(|(c, l)| if branch == 0 { c - l } else { c + l })
            .collect()
    }

    /// Full-space rotation U = R ⊗ I_ph with U† H_site U = H_normal.
    pub fn full_rotation(&self) -> ComplexMatrix {
        kron(&self.rotation, &ComplexMatrix::identity(self.site.bath.phonon_dim()))
    }

    /// n̄_j = c̄_j† c̄_j expressed in the site basis, embedded in the full space.
    pub fn normal_number_full(&self, branch: usize) -> Result<ComplexMatrix> {
        let v = self.rotation_column(branch);
        let p = ComplexMatrix::outer(&v, &v);
        embed(&p, 0, &self.site.space())
    }

    pub fn rotation_column(&self, branch: usize) -> StateVector {
        StateVector::from_fn(2, |i, _| self.rotation.get(i, branch))
    }
}

/// Dimer with site-independent Frohlich coupling χ_q and phonon-assisted tunnelling λ_q.
pub fn build_dimer(epsilon: f64, j: f64, chi: Vec<C64>, lambda: Vec<C64>, bath: BathSpec) -> Result<DimerModel> {
    let n_modes = bath.n_modes();
    if chi.len() != n_modes || lambda.len() != n_modes {
        return Err(Error::DimensionMismatch {
            context: "dimer chi/lambda vs bath modes",
            expected: n_modes,
            found: chi.len().min(lambda.len()),
        });
    }
    let sector = Sector::SingleExcitation { include_vacuum: false };
    let site_lattice = LatticeSpec::new(
        vec![epsilon, epsilon],
        ComplexMatrix::from_row_major(&[ZERO, C64::new(-j, 0.0), C64::new(-j, 0.0), ZERO])?,
        sector,
    )?;
    let n_tot = site_lattice.total_number();
    let tunnel = &site_lattice.hop(0, 1) + &site_lattice.hop(1, 0);
    let site_w = chi
        .iter()
        .zip(&lambda)
        .map(|(&c, &l)| &n_tot.scale(c) - &tunnel.scale(l))
        .collect();
    let site = Model::new(
        ModelKind::Dimer,
        site_lattice,
        bath.clone(),
        CouplingSet::static_ops(site_w)?,
    )?;

    let normal_lattice = LatticeSpec::diagonal(vec![epsilon - j, epsilon + j], sector)?;
    let normal_w = chi
        .iter()
        .zip(&lambda)
        .map(|(&c, &l)| ComplexMatrix::from_diagonal(&[c - l, c + l]))
        .collect();
    let normal = Model::new(ModelKind::Dimer, normal_lattice, bath, CouplingSet::static_ops(normal_w)?)?;

    let s = std::f64::consts::FRAC_1_SQRT_2;
    let rotation = ComplexMatrix::from_row_major(&[
        C64::new(s, 0.0),
        C64::new(s, 0.0),
        C64::new(s, 0.0),
        C64::new(-s, 0.0),
    ])?;
    Ok(DimerModel {
        epsilon,
        j,
        chi,
        lambda,
        site,
        normal,
        rotation,
    })
}

/// Independent assembly of [w_q, w_q†] for the hopping-coupled ring:
/// ω_q² {iκ⁽¹⁾ Σ_n (c_n† c_{n+1} − c_{n+1}† c_n) + iκ⁽²⁾ Σ_n (c_{n−1}† c_{n+1} − c_{n+1}† c_{n−1})}.
pub fn hopping_commutator_closed_form(lattice: &LatticeSpec, omega: f64, q: f64, chi1: C64, chi2: C64) -> ComplexMatrix {
    let (k1, k2) = hopping_kappas(q, chi1, chi2);
    let ns = lattice.n_sites();
    let mut out = ComplexMatrix::zeros(lattice.dim());
    for n in 0..ns {
        let next = (n + 1) % ns;
        let prev = (n + ns - 1) % ns;
        out += &(&lattice.hop(n, next) - &lattice.hop(next, n)).scale(I * k1);
        out += &(&lattice.hop(prev, next) - &lattice.hop(next, prev)).scale(I * k2);
    }
    out.scale_real(omega * omega)
}

/// κ⁽¹⁾ = 2 Im[χ⁽¹⁾ χ⁽²⁾* (1 − e^{iq})], κ⁽²⁾ = −2|χ⁽²⁾|² sin q.
pub fn hopping_kappas(q: f64, chi1: C64, chi2: C64) -> (f64, f64) {
    let k1 = 2.0 * (chi1 * chi2.conj() * (ONE - C64::from_polar(1.0, q))).im;
    let k2 = -2.0 * chi2.norm_sqr() * q.sin();
    (k1, k2)
}
