//! Experiment configuration: a TOML document validated field by field.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::bath::{BathSpec, Mode};
use crate::error::{Error, Result};
use crate::model::{
    build_dimer, build_frohlich, build_hopping_coupled, build_number_coupled, build_pumped_frohlich, davydov_chi, BilinearCoupling, DimerModel, LatticeSpec, Model,
    ModelKind, PumpSpec, Sector,
};

pub const SCENARIOS: &[&str] = &["dfs-scan", "d2-vs-oracle", "dimer-dephasing", "pumped-frohlich", "stationary-bath"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingKind {
    NumberCoupled,
    Frohlich,
    Davydov,
    HoppingCoupled,
    PumpedFrohlich,
    Dimer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LatticeShape {
    #[default]
    Ring,
    Diagonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BilinearConfig {
    pub q: usize,
    pub q2: usize,
    /// u_qq' = κ N̂
    pub kappa: C64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PumpConfig {
    pub k: usize,
    pub zeta_plus: C64,
    pub zeta_minus: C64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub coupling: CouplingKind,
    #[serde(default)]
    pub lattice: LatticeShape,
    #[serde(default = "two")]
    pub n_sites: usize,
    #[serde(default = "one")]
    pub epsilon: f64,
    /// Per-site energies for diagonal lattices; defaults to `epsilon` everywhere.
    #[serde(default)]
    pub epsilons: Option<Vec<f64>>,
    #[serde(default)]
    pub hopping: f64,
    #[serde(default = "default_sector")]
    pub sector: Sector,
    #[serde(default)]
    pub temperature: f64,
    pub modes: Vec<Mode>,
    #[serde(default)]
    pub chi: Vec<C64>,
    #[serde(default)]
    pub chi2: Vec<C64>,
    #[serde(default)]
    pub lambda: Vec<C64>,
    /// χ_{qn}, rows per mode.
    #[serde(default)]
    pub chi_table: Option<Vec<Vec<C64>>>,
    #[serde(default)]
    pub bilinear: Vec<BilinearConfig>,
    #[serde(default)]
    pub pump: Option<PumpConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dt: f64,
    pub t_final: f64,
    #[serde(default = "one_usize")]
    pub sample_stride: usize,
    /// Fock cutoffs for the oracle; defaults to the mode cutoffs.
    #[serde(default)]
    pub n_cut: Option<Vec<usize>>,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
    #[serde(default = "default_abort_tol")]
    pub abort_tol: f64,
    #[serde(default = "default_trace_tol")]
    pub trace_distance_tol: f64,
    #[serde(default)]
    pub force: bool,
    #[serde(default)]
    pub oracle: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    /// Single pure branch with the given lattice amplitudes.
    #[default]
    Pure,
    /// Branches P_s √ρ over the detected DFS sectors of a seeded random ρ_lat.
    RandomSectorDensity,
    /// Two dimer branches in the normal-mode basis.
    Dimer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub kind: InitialKind,
    #[serde(default)]
    pub amplitudes: Vec<C64>,
    #[serde(default)]
    pub beta: Vec<C64>,
    /// Start every branch at β = −μ/ω.
    #[serde(default)]
    pub stationary: bool,
    #[serde(default)]
    pub phi1: Option<C64>,
    #[serde(default)]
    pub phi2: Option<C64>,
    #[serde(default)]
    pub overlap_phi: Option<C64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    #[serde(default)]
    pub expected_dfs_count: Option<usize>,
    #[serde(default)]
    pub expect_abort: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<String>,
    pub model: ModelConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
}

fn two() -> usize {
    2
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_sector() -> Sector {
    Sector::SingleExcitation { include_vacuum: false }
}
fn default_residual_tol() -> f64 {
    crate::ansatz::CERTIFY_TOL
}
fn default_abort_tol() -> f64 {
    crate::ansatz::ABORT_TOL
}
fn default_trace_tol() -> f64 {
    1e-8
}

/// Models built from a config; the dimer carries both representations.
pub enum BuiltModel {
    Plain(Model),
    Dimer(Box<DimerModel>),
}

impl BuiltModel {
    /// The representation the ansatz runs in.
    pub fn working(&self) -> &Model {
        match self {
            Self::Plain(m) => m,
            Self::Dimer(d) => &d.normal,
        }
    }
}

impl ExperimentConfig {
    pub fn n_steps(&self) -> usize {
        (self.run.t_final / self.run.dt).round() as usize
    }

    pub fn bath(&self) -> Result<BathSpec> {
        BathSpec::new(self.model.modes.clone(), self.model.temperature)
    }

    pub fn lattice(&self) -> Result<LatticeSpec> {
        let m = &self.model;
        match m.lattice {
            LatticeShape::Ring => LatticeSpec::ring(m.n_sites, m.epsilon, m.hopping, m.sector),
            LatticeShape::Diagonal => {
                let eps = m.epsilons.clone().unwrap_or_else(|| vec![m.epsilon; m.n_sites]);
                LatticeSpec::diagonal(eps, m.sector)
            }
        }
    }

    pub fn build_model(&self) -> Result<BuiltModel> {
        let m = &self.model;
        let bath = self.bath()?;
        let model = match m.coupling {
            CouplingKind::NumberCoupled => {
                let mut model = build_number_coupled(self.lattice()?, bath, m.chi.clone())?;
                if !m.bilinear.is_empty() {
                    let n_op = model.lattice.total_number();
                    let u = m
                        .bilinear
                        .iter()
                        .map(|b| BilinearCoupling {
                            q: b.q,
                            q2: b.q2,
                            op: n_op.scale(b.kappa),
                        })
                        .collect();
                    let couplings = model.couplings.clone().with_bilinear(u)?;
                    model = Model::new(ModelKind::NumberCoupled, model.lattice.clone(), model.bath.clone(), couplings)?;
                }
                model
            }
            CouplingKind::Frohlich => {
                let table = m.chi_table.clone().ok_or_else(|| Error::Config("frohlich coupling needs chi_table".into()))?;
                build_frohlich(self.lattice()?, bath, table)?
            }
            CouplingKind::Davydov => build_frohlich(self.lattice()?, bath, davydov_chi(&m.chi, m.n_sites))?,
            CouplingKind::HoppingCoupled => build_hopping_coupled(self.lattice()?, bath, m.chi.clone(), m.chi2.clone())?,
            CouplingKind::PumpedFrohlich => {
                let p = m.pump.as_ref().ok_or_else(|| Error::Config("pumped-frohlich needs a [model.pump] table".into()))?;
                let pump = PumpSpec::single_q(m.n_sites, p.k, p.zeta_plus, p.zeta_minus)?;
                build_pumped_frohlich(self.lattice()?, bath, m.chi.clone(), pump)?
            }
            CouplingKind::Dimer => return Ok(BuiltModel::Dimer(Box::new(build_dimer(m.epsilon, m.hopping, m.chi.clone(), m.lambda.clone(), bath)?))),
        };
        Ok(BuiltModel::Plain(model))
    }
}

fn finite(c: &C64) -> bool {
    c.re.is_finite() && c.im.is_finite()
}

/// Parse and validate; every violation is reported, not only the first.
pub fn validate_config(raw: &str) -> std::result::Result<ExperimentConfig, Vec<String>> {
    let cfg: ExperimentConfig = toml::from_str(raw).map_err(|e| vec![format!("parse: {}", e.message())])?;
    let errors = validation_errors(&cfg);
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(errors)
    }
}

pub fn validation_errors(cfg: &ExperimentConfig) -> Vec<String> {
    let mut e = Vec::new();
    let m = &cfg.model;
    if !SCENARIOS.contains(&cfg.scenario.as_str()) {
        e.push(format!("scenario: unknown scenario '{}' (expected one of {})", cfg.scenario, SCENARIOS.join(", ")));
    }
    if m.modes.is_empty() {
        e.push("model.modes: at least one mode is required".into());
    }
    for (q, mode) in m.modes.iter().enumerate() {
        if !(mode.omega > 0.0) || !mode.omega.is_finite() {
            e.push(format!("model.modes[{q}].omega: mode frequency must be positive (got {})", mode.omega));
        }
        if mode.n_cut < 2 {
            e.push(format!("model.modes[{q}].n_cut: Fock cutoff must be at least 2 (got {})", mode.n_cut));
        }
    }
    if !(m.temperature >= 0.0) || !m.temperature.is_finite() {
        e.push(format!("model.temperature: temperature must be finite and non-negative (got {})", m.temperature));
    }
    if !m.bilinear.is_empty() && m.temperature > 0.0 {
        e.push(format!(
            "model.bilinear: couplings u_qq' require T = 0; at finite temperature the coherent-product form only admits couplings linear in the phonon operators (T = {})",
            m.temperature
        ));
    }
    for (k, b) in m.bilinear.iter().enumerate() {
        if b.q >= m.modes.len() || b.q2 >= m.modes.len() {
            e.push(format!("model.bilinear[{k}]: mode index out of range"));
        }
        if !finite(&b.kappa) {
            e.push(format!("model.bilinear[{k}].kappa: must be finite"));
        }
    }
    if !m.bilinear.is_empty() && m.coupling != CouplingKind::NumberCoupled {
        e.push("model.bilinear: bilinear terms are only supported with number-coupled models".into());
    }
    if m.n_sites < 1 {
        e.push("model.n_sites: at least one site is required".into());
    }
    if m.lattice == LatticeShape::Ring && m.n_sites < 2 {
        e.push("model.n_sites: a ring needs at least 2 sites".into());
    }
    if let Some(eps) = &m.epsilons {
        if eps.len() != m.n_sites {
            e.push(format!("model.epsilons: {} entries for {} sites", eps.len(), m.n_sites));
        }
    }
    if let Sector::Bosonic { cutoff } = m.sector {
        if cutoff < 2 {
            e.push("model.sector.cutoff: must be at least 2".into());
        }
    }
    for (name, v) in [("chi", &m.chi), ("chi2", &m.chi2), ("lambda", &m.lambda)] {
        if v.iter().any(|c| !finite(c)) {
            e.push(format!("model.{name}: entries must be finite"));
        }
    }
    let n_modes = m.modes.len();
    let per_mode = |e: &mut Vec<String>, name: &str, v: &Vec<C64>| {
        if v.len() != n_modes {
            e.push(format!("model.{name}: {} entries for {} modes", v.len(), n_modes));
        }
    };
    match m.coupling {
        CouplingKind::NumberCoupled => per_mode(&mut e, "chi", &m.chi),
        CouplingKind::Frohlich => match &m.chi_table {
            None => e.push("model.chi_table: required for frohlich coupling".into()),
            Some(t) => {
                if t.len() != n_modes || t.iter().any(|r| r.len() != m.n_sites) {
                    e.push(format!("model.chi_table: expected {n_modes} rows of {} entries", m.n_sites));
                }
            }
        },
        CouplingKind::Davydov => per_mode(&mut e, "chi", &m.chi),
        CouplingKind::HoppingCoupled => {
            per_mode(&mut e, "chi", &m.chi);
            per_mode(&mut e, "chi2", &m.chi2);
            if m.lattice != LatticeShape::Ring {
                e.push("model.lattice: hopping-coupled models live on a ring".into());
            }
        }
        CouplingKind::PumpedFrohlich => {
            per_mode(&mut e, "chi", &m.chi);
            if n_modes != m.n_sites {
                e.push(format!("model.modes: the pumped ring needs one mode per site ({} sites, {n_modes} modes)", m.n_sites));
            }
            match &m.pump {
                None => e.push("model.pump: required for pumped-frohlich".into()),
                Some(p) if p.k >= m.n_sites => e.push(format!("model.pump.k: wavenumber index {} out of range", p.k)),
                _ => {}
            }
        }
        CouplingKind::Dimer => {
            per_mode(&mut e, "chi", &m.chi);
            per_mode(&mut e, "lambda", &m.lambda);
        }
    }
    let r = &cfg.run;
    if !(r.dt > 0.0) || !r.dt.is_finite() {
        e.push(format!("run.dt: must be positive (got {})", r.dt));
    }
    if !(r.t_final > 0.0) || !r.t_final.is_finite() {
        e.push(format!("run.t_final: must be positive (got {})", r.t_final));
    }
    if r.sample_stride == 0 {
        e.push("run.sample_stride: must be at least 1".into());
    }
    if let Some(n) = &r.n_cut {
        if n.len() != n_modes || n.iter().any(|&c| c < 2) {
            e.push(format!("run.n_cut: expected {n_modes} cutoffs of at least 2"));
        }
    }
    for (name, v) in [("residual_tol", r.residual_tol), ("abort_tol", r.abort_tol), ("trace_distance_tol", r.trace_distance_tol)] {
        if !(v > 0.0) {
            e.push(format!("run.{name}: must be positive"));
        }
    }
    let init = &cfg.initial;
    if !init.beta.is_empty() && init.beta.len() != n_modes {
        e.push(format!("initial.beta: {} entries for {n_modes} modes", init.beta.len()));
    }
    match init.kind {
        InitialKind::Pure if cfg.scenario != "dfs-scan" && cfg.scenario != "pumped-frohlich" => {
            if init.amplitudes.is_empty() {
                e.push("initial.amplitudes: required for a pure initial state".into());
            } else if init.amplitudes.iter().all(|c| c.norm() == 0.0) {
                e.push("initial.amplitudes: state vector is zero".into());
            }
        }
        InitialKind::Dimer => {
            if m.coupling != CouplingKind::Dimer {
                e.push("initial.kind: dimer initial states need a dimer model".into());
            }
            let p1 = init.phi1.unwrap_or(C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0));
            let p2 = init.phi2.unwrap_or(C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0));
            if ((p1.norm_sqr() + p2.norm_sqr()) - 1.0).abs() > 1e-12 {
                e.push("initial.phi1/phi2: |phi1|^2 + |phi2|^2 must equal 1".into());
            }
            if init.overlap_phi.is_some_and(|o| o.norm() > 1.0 + 1e-12) {
                e.push("initial.overlap_phi: magnitude must not exceed 1".into());
            }
        }
        _ => {}
    }
    if matches!(cfg.scenario.as_str(), "dimer-dephasing") && m.coupling != CouplingKind::Dimer {
        e.push("model.coupling: dimer-dephasing needs the dimer model".into());
    }
    if cfg.scenario == "pumped-frohlich" && m.coupling != CouplingKind::PumpedFrohlich {
        e.push("model.coupling: pumped-frohlich needs the pumped-frohlich model".into());
    }
    e
}

pub fn load_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let raw = std::fs::read_to_string(path)?;
    validate_config(&raw).map_err(|errs| Error::Config(errs.join("; ")))
}
