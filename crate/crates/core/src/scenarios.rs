//! Named scenarios run from an [`ExperimentConfig`], each writing CSV data
//! and a JSON report into its own run directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::ansatz::{
    assemble_density, displacement_closed_form, integrate_pumped_displacements, pump_lattice_displacements, pump_phonon_drive, Branch, CoherentProductState,
    LatticeState, PropagationAbort, PropagationOptions, TrajectoryRecord,
};
use crate::bath::{thermal_density, Displacement};
use crate::config::{BuiltModel, CouplingKind, ExperimentConfig, InitialKind};
use crate::dfs::scan_dfs;
use crate::dimer::{delta_omega, fit_rotation_frequency, gamma_relaxation, DimerState};
use crate::error::{Error, Result};
use crate::model::{ring_wavenumber, DimerModel, Model, PumpSpec};
use crate::operator::{basis_vector, kron, trace_distance, ComplexMatrix, StateVector, ONE, ZERO};
use crate::oracle::{compare_reduced, exact_propagate_density, exact_propagate_pure, product_state, Integrator, OracleConfig};

pub const OUTPUT_ROOT_ENV: &str = "COHPROD_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outcome {
    Pass,
    Fail,
    Abort,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub outcome: Outcome,
    pub config: ExperimentConfig,
    pub checks: Vec<CheckResult>,
    pub residuals: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
    pub timings: BTreeMap<String, f64>,
    pub abort: Option<PropagationAbort>,
    pub error: Option<String>,
}

impl RunReport {
    fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            scenario: cfg.scenario.clone(),
            outcome: Outcome::Pass,
            config: cfg.clone(),
            checks: Vec::new(),
            residuals: BTreeMap::new(),
            outputs: Vec::new(),
            timings: BTreeMap::new(),
            abort: None,
            error: None,
        }
    }

    /// `value < threshold` passes.
    pub fn check_below(&mut self, name: &str, value: f64, threshold: f64) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            passed: value < threshold,
            value,
            threshold,
        });
    }

    pub fn check_flag(&mut self, name: &str, ok: bool) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            passed: ok,
            value: if ok { 1.0 } else { 0.0 },
            threshold: 1.0,
        });
    }

    pub fn passed(&self) -> bool {
        self.outcome == Outcome::Pass
    }
}

/// Output root: the override variable if set, else `default`.
pub fn output_root(default: &Path) -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| default.to_path_buf())
}

/// Run one configured scenario. The report is written to `report.json`
/// whatever happens; only I/O failures on the run directory surface as errors.
pub fn run_experiment(cfg: &ExperimentConfig, output_root: &Path) -> Result<RunReport> {
    let dir = output_root.join(cfg.output_dir.clone().unwrap_or_else(|| cfg.scenario.clone()));
    std::fs::create_dir_all(&dir)?;
    let mut report = RunReport::new(cfg);
    let start = Instant::now();
    let result = dispatch(cfg, &dir, &mut report);
    report.timings.insert("total_seconds".into(), start.elapsed().as_secs_f64());
    match result {
        Ok(()) => {
            if cfg.checks.expect_abort {
                report.check_flag("expected_abort", false);
            }
            if report.checks.iter().any(|c| !c.passed) {
                report.outcome = Outcome::Fail;
            }
        }
        Err(Error::Aborted(a)) => {
            log::warn!("{a}");
            if cfg.checks.expect_abort {
                report.check_flag("expected_abort", true);
                report.outcome = if report.checks.iter().all(|c| c.passed) { Outcome::Pass } else { Outcome::Fail };
            } else {
                report.outcome = Outcome::Abort;
            }
            let name = "aborted_trajectory.csv";
            a.record.write_csv_file(&dir.join(name))?;
            report.outputs.push(name.into());
            report.abort = Some(*a);
        }
        Err(e) => {
            report.outcome = Outcome::Abort;
            report.error = Some(e.to_string());
        }
    }
    report.outputs.push("report.json".into());
    std::fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

fn dispatch(cfg: &ExperimentConfig, dir: &Path, report: &mut RunReport) -> Result<()> {
    if cfg.scenario == "pumped-frohlich" {
        return pumped_frohlich(cfg, dir, report);
    }
    let built = cfg.build_model()?;
    match cfg.scenario.as_str() {
        "dfs-scan" => dfs_scan(built.working(), dir, cfg, report),
        "d2-vs-oracle" => d2_vs_oracle(cfg, &built, dir, report),
        "dimer-dephasing" => match &built {
            BuiltModel::Dimer(d) => dimer_dephasing(cfg, d, dir, report),
            BuiltModel::Plain(_) => Err(Error::Config("dimer-dephasing needs the dimer model".into())),
        },
        "stationary-bath" => stationary_bath(cfg, &built, dir, report),
        other => Err(Error::Config(format!("unknown scenario '{other}'"))),
    }
}

fn options(cfg: &ExperimentConfig) -> PropagationOptions {
    let mut o = PropagationOptions::new(cfg.run.dt, cfg.n_steps());
    o.sample_stride = cfg.run.sample_stride;
    o.force = cfg.run.force;
    o.certify_tol = cfg.run.residual_tol;
    o.abort_tol = cfg.run.abort_tol;
    o
}

fn oracle_config(cfg: &ExperimentConfig) -> OracleConfig {
    let mut o = OracleConfig::new(cfg.run.dt, cfg.n_steps());
    o.sample_stride = cfg.run.sample_stride;
    o.integrator = Integrator::ExponentialStep;
    o
}

fn seeded_density(seed: u64, dim: usize) -> ComplexMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = ComplexMatrix::from_fn(dim, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let rho = &g * &g.adjoint();
    let tr = rho.trace().re;
    rho.scale_real(1.0 / tr)
}

/// Dimer branches φ_j |j̄⟩⟨φ_j| with ⟨φ₁|φ₂⟩ = overlap.
pub fn dimer_branches(state: &DimerState) -> Vec<Branch> {
    let co1 = basis_vector(2, 0);
    let o = state.overlap_phi;
    let co2 = StateVector::from_vec(vec![o, C64::new((1.0 - o.norm_sqr()).max(0.0).sqrt(), 0.0)]);
    vec![
        Branch::operator("b1", ComplexMatrix::outer(&basis_vector(2, 0), &co1).scale(state.phi1), state.beta1.clone()),
        Branch::operator("b2", ComplexMatrix::outer(&basis_vector(2, 1), &co2).scale(state.phi2), state.beta2.clone()),
    ]
}

fn initial_dimer(cfg: &ExperimentConfig, d: &DimerModel) -> Result<DimerState> {
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let i = &cfg.initial;
    let (p1, p2, o) = (i.phi1.unwrap_or(s), i.phi2.unwrap_or(s), i.overlap_phi.unwrap_or(ONE));
    if i.stationary {
        DimerState::stationary_start(p1, p2, o, d)
    } else {
        DimerState::equilibrium_start(p1, p2, o, d.normal.bath.n_modes())
    }
}

/// Initial coherent-product state described by the `[initial]` table.
pub fn initial_state(cfg: &ExperimentConfig, built: &BuiltModel) -> Result<CoherentProductState> {
    let model = built.working();
    let bath = model.bath.clone();
    let beta0 = if cfg.initial.beta.is_empty() {
        Displacement::zeros(bath.n_modes())
    } else {
        Displacement(cfg.initial.beta.clone())
    };
    let branches = match cfg.initial.kind {
        InitialKind::Pure => {
            let a = &cfg.initial.amplitudes;
            if a.len() != model.lattice.dim() {
                return Err(Error::Config(format!("initial.amplitudes: {} entries for lattice dimension {}", a.len(), model.lattice.dim())));
            }
            let v = StateVector::from_column_slice(a);
            let v = &v / C64::new(v.norm(), 0.0);
            // split across detected DFS sectors when they cover the state
            let pieces: Vec<StateVector> = scan_dfs(model).iter().filter(|r| r.is_dfs).map(|r| r.projector().apply(&v)).collect();
            let covered = (pieces.iter().fold(StateVector::zeros(v.len()), |acc, p| acc + p) - &v).norm() < 1e-12;
            let pieces = if covered { pieces } else { vec![v.clone()] };
            let mut out = Vec::new();
            for (s, p) in pieces.into_iter().enumerate().filter(|(_, p)| p.norm() > 1e-14) {
                let label = if covered { format!("b{s}") } else { "a".to_string() };
                out.push(if bath.temperature() == 0.0 {
                    Branch::pure(&label, p, beta0.clone())
                } else {
                    Branch::operator(&label, ComplexMatrix::outer(&p, &v), beta0.clone())
                });
            }
            out
        }
        InitialKind::RandomSectorDensity => {
            let rho = seeded_density(cfg.seed, model.lattice.dim());
            let projectors: Vec<ComplexMatrix> = scan_dfs(model).iter().map(|r| r.projector()).collect();
            CoherentProductState::from_lattice_density(&rho, &projectors, &beta0, bath.clone())?.branches
        }
        InitialKind::Dimer => match built {
            BuiltModel::Dimer(d) => dimer_branches(&initial_dimer(cfg, d)?),
            BuiltModel::Plain(_) => return Err(Error::Config("dimer initial state needs the dimer model".into())),
        },
    };
    let branches = if cfg.initial.stationary {
        branches.into_iter().map(|b| b.with_stationary_bath(model)).collect()
    } else {
        branches
    };
    CoherentProductState::new(branches, bath)
}

fn write_csv(dir: &Path, name: &str, header: &[String], rows: &[Vec<f64>], report: &mut RunReport) -> Result<()> {
    let mut w = csv::Writer::from_path(dir.join(name))?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|x| format!("{x:.16e}")))?;
    }
    w.flush()?;
    report.outputs.push(name.into());
    Ok(())
}

fn write_record(dir: &Path, name: &str, rec: &TrajectoryRecord, report: &mut RunReport) -> Result<()> {
    rec.write_csv_file(&dir.join(name))?;
    report.outputs.push(name.into());
    Ok(())
}

/// Norm, orthogonality, total weight and Im Ω over every recorded sample.
pub fn conservation_checks(rec: &TrajectoryRecord, bath: &crate::bath::BathSpec, report: &mut RunReport) -> Result<()> {
    let mut norm = 0.0_f64;
    let mut total = 0.0_f64;
    let mut im_omega = 0.0_f64;
    let mut orth = 0.0_f64;
    let w0: f64 = rec.branches.iter().map(|b| b.weight[0]).sum();
    for k in 0..rec.len() {
        let mut w = 0.0;
        for b in &rec.branches {
            norm = norm.max((b.weight[k] - b.weight[0]).abs());
            im_omega = im_omega.max(b.omega_shift_imag[k].abs());
            w += b.weight[k];
        }
        total = total.max((w - w0).abs());
        if rec.branches.iter().all(|b| b.lattice.len() == rec.len()) && rec.branches.len() > 1 {
            let snap = CoherentProductState::new(rec.branches.iter().map(|b| b.branch_at(k).expect("kept")).collect(), bath.clone())?;
            orth = orth.max(snap.orthogonality_defect());
        }
    }
    report.check_below("branch_norm_drift", norm, 1e-10);
    report.check_below("orthogonality_defect", orth, 1e-10);
    report.check_below("total_weight_drift", total, 1e-12);
    report.check_below("imag_energy_shift", im_omega, 1e-14);
    for b in &rec.branches {
        let r = b.residual.iter().copied().fold(0.0, f64::max);
        report.residuals.insert(b.label.clone(), r);
    }
    Ok(())
}

fn dfs_scan(model: &Model, dir: &Path, cfg: &ExperimentConfig, report: &mut RunReport) -> Result<()> {
    let start = Instant::now();
    let reports = scan_dfs(model);
    report.timings.insert("scan_seconds".into(), start.elapsed().as_secs_f64());
    let n_modes = model.couplings.n_modes();
    let mut header: Vec<String> = ["index", "dim", "is_dfs", "is_complement", "eigen_residual", "adjoint_residual", "normality", "h_commutator", "h_adjoint_commutator"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for q in 0..n_modes {
        header.push(format!("mu{q}_re"));
        header.push(format!("mu{q}_im"));
    }
    let mut rows = Vec::new();
    for (i, r) in reports.iter().enumerate() {
        let d = r.diagnostics.clone().unwrap_or(crate::dfs::DfsDiagnostics {
            normality: f64::NAN,
            h_commutator: f64::NAN,
            h_adjoint_commutator: f64::NAN,
        });
        let mut row = vec![
            i as f64,
            r.dim() as f64,
            f64::from(u8::from(r.is_dfs)),
            f64::from(u8::from(r.is_complement)),
            r.residuals.0,
            r.residuals.1,
            d.normality,
            d.h_commutator,
            d.h_adjoint_commutator,
        ];
        for q in 0..n_modes {
            let m = r.mu.get(q).copied().unwrap_or(C64::new(f64::NAN, f64::NAN));
            row.push(m.re);
            row.push(m.im);
        }
        rows.push(row);
    }
    write_csv(dir, "dfs.csv", &header, &rows, report)?;
    std::fs::write(dir.join("dfs.json"), serde_json::to_string_pretty(&reports)?)?;
    report.outputs.push("dfs.json".into());
    let dfs: Vec<_> = reports.iter().filter(|r| r.is_dfs).collect();
    report.residuals.insert(
        "max_dfs_residual".into(),
        dfs.iter().map(|r| r.residuals.0.max(r.residuals.1)).fold(0.0, f64::max),
    );
    if let Some(n) = cfg.checks.expected_dfs_count {
        report.check_flag(&format!("dfs_count_equals_{n}"), dfs.len() == n);
    }
    let worst = dfs
        .iter()
        .map(|r| {
            let d = r.diagnostics.clone().expect("checked");
            r.residuals.0.max(r.residuals.1).max(d.normality).max(d.h_commutator).max(d.h_adjoint_commutator)
        })
        .fold(0.0, f64::max);
    report.check_below("dfs_residuals", worst, crate::dfs::DFS_TOL);
    Ok(())
}

fn d2_vs_oracle(cfg: &ExperimentConfig, built: &BuiltModel, dir: &Path, report: &mut RunReport) -> Result<()> {
    let model = built.working();
    let state = initial_state(cfg, built)?;
    let t0 = Instant::now();
    let (_, rec) = state.propagate(model, &options(cfg), true)?;
    report.timings.insert("ansatz_seconds".into(), t0.elapsed().as_secs_f64());
    write_record(dir, "ansatz.csv", &rec, report)?;
    conservation_checks(&rec, &model.bath, report)?;

    let t1 = Instant::now();
    let ocfg = oracle_config(cfg);
    let single_pure = state.branches.len() == 1 && matches!(state.branches[0].lattice, LatticeState::Pure(_));
    let oracle = if single_pure {
        let LatticeState::Pure(v) = &state.branches[0].lattice else { unreachable!() };
        exact_propagate_pure(model, &product_state(v, &state.branches[0].beta, &model.bath)?, &ocfg)?.record
    } else {
        exact_propagate_density(model, &assemble_density(&state)?.full, &ocfg)?.record
    };
    report.timings.insert("oracle_seconds".into(), t1.elapsed().as_secs_f64());
    write_record(dir, "oracle.csv", &oracle, report)?;

    let cmp = compare_reduced(&rec, &oracle)?;
    let header = ["time", "lattice_trace_distance", "phonon_trace_distance"].map(String::from);
    let rows: Vec<Vec<f64>> = (0..rec.len()).map(|k| vec![rec.times[k], cmp.lattice[k], cmp.phonon[k]]).collect();
    write_csv(dir, "comparison.csv", &header, &rows, report)?;
    report.check_below("lattice_trace_distance", cmp.max_lattice, cfg.run.trace_distance_tol);
    report.check_below("phonon_trace_distance", cmp.max_phonon, cfg.run.trace_distance_tol);
    Ok(())
}

fn dimer_dephasing(cfg: &ExperimentConfig, d: &DimerModel, dir: &Path, report: &mut RunReport) -> Result<()> {
    let bath = &d.normal.bath;
    let init = initial_dimer(cfg, d)?;
    let state = CoherentProductState::new(dimer_branches(&init), bath.clone())?;
    let (_, rec) = state.propagate(&d.normal, &options(cfg), true)?;
    conservation_checks(&rec, bath, report)?;

    let coh: Vec<C64> = rec.reduced_lattice.iter().map(|m| m.get(0, 1)).collect();
    let c0 = coh[0].norm();
    let mut header: Vec<String> = ["time", "Gamma", "coherence_re", "coherence_im", "analytic_re", "analytic_im", "pop1", "pop2"].map(String::from).to_vec();
    let mut rows = Vec::new();
    let mut analytic_err = 0.0_f64;
    let mut gamma_err = 0.0_f64;
    let mut pop_drift = 0.0_f64;
    for (k, &t) in rec.times.iter().enumerate() {
        let s = init.at(t, d)?;
        let a = crate::dimer::dimer_coherence(&s, bath)?;
        let gamma = if cfg.initial.stationary {
            crate::dimer::branch_dephasing(&s, bath)?
        } else {
            gamma_relaxation(t, &d.lambda, bath)?
        };
        analytic_err = analytic_err.max((coh[k] - a).norm());
        if !cfg.initial.stationary && c0 > 0.0 {
            gamma_err = gamma_err.max((-(coh[k].norm() / c0).ln() - gamma).abs());
        }
        let lat = &rec.reduced_lattice[k];
        pop_drift = pop_drift.max((lat.get(0, 0).re - init.phi1.norm_sqr()).abs());
        rows.push(vec![t, gamma, coh[k].re, coh[k].im, a.re, a.im, lat.get(0, 0).re, lat.get(1, 1).re]);
    }
    report.check_below("coherence_vs_closed_form", analytic_err, 1e-9);
    report.check_below("populations_constant", pop_drift, 1e-12);
    if !cfg.initial.stationary && c0 > 0.0 {
        report.check_below("gamma_vs_relaxation_function", gamma_err, 1e-9);
    }

    if cfg.run.oracle {
        let t1 = Instant::now();
        let rho_normal = assemble_density(&state)?.full;
        let u = d.full_rotation();
        let rho_site = &(&u * &rho_normal) * &u.adjoint();
        let run = exact_propagate_density(&d.site, &rho_site, &oracle_config(cfg))?;
        report.timings.insert("oracle_seconds".into(), t1.elapsed().as_secs_f64());
        header.extend(["oracle_re", "oracle_im", "oracle_Gamma"].map(String::from));
        let r = &d.rotation;
        let o0 = (&(&r.adjoint() * &run.record.reduced_lattice[0]) * r).get(0, 1).norm();
        let mut oracle_err = 0.0_f64;
        for (k, row) in rows.iter_mut().enumerate() {
            let c = (&(&r.adjoint() * &run.record.reduced_lattice[k]) * r).get(0, 1);
            let g = -(c.norm() / o0).ln();
            if !cfg.initial.stationary {
                oracle_err = oracle_err.max((g - row[1]).abs());
            }
            row.extend([c.re, c.im, g]);
        }
        if !cfg.initial.stationary {
            report.check_below("oracle_gamma_vs_relaxation_function", oracle_err, 1e-6);
        }
    }
    write_csv(dir, "dimer.csv", &header, &rows, report)?;
    Ok(())
}

fn stationary_bath(cfg: &ExperimentConfig, built: &BuiltModel, dir: &Path, report: &mut RunReport) -> Result<()> {
    let model = built.working();
    let mut cfg = cfg.clone();
    cfg.initial.stationary = true;
    let state = initial_state(&cfg, built)?;
    let (_, rec) = state.propagate(model, &options(&cfg), true)?;
    conservation_checks(&rec, &model.bath, report)?;
    write_record(dir, "trajectory.csv", &rec, report)?;
    let ph0 = &rec.reduced_phonon[0];
    let drift = rec.reduced_phonon.iter().map(|p| trace_distance(ph0, p)).collect::<Result<Vec<_>>>()?;
    let coh: Vec<C64> = rec.reduced_lattice.iter().map(|m| if m.dim() > 1 { m.get(0, 1) } else { ZERO }).collect();
    let header = ["time", "phonon_drift", "coherence_re", "coherence_im"].map(String::from);
    let rows: Vec<Vec<f64>> = (0..rec.len()).map(|k| vec![rec.times[k], drift[k], coh[k].re, coh[k].im]).collect();
    write_csv(dir, "stationary.csv", &header, &rows, report)?;
    report.check_below("phonon_drift", drift.iter().copied().fold(0.0, f64::max), 1e-10);
    if let BuiltModel::Dimer(d) = built {
        let omegas: Vec<f64> = (0..d.normal.bath.n_modes()).map(|q| d.normal.bath.omega(q)).collect();
        let [e1, e2] = d.normal_energies();
        let expected = e1 - e2 + delta_omega(&d.chi, &d.lambda, &omegas)?;
        let fitted = fit_rotation_frequency(&rec.times, &coh)?;
        report.residuals.insert("fitted_frequency".into(), fitted);
        report.residuals.insert("expected_frequency".into(), expected);
        report.check_below("rotation_frequency_relative_error", ((fitted - expected) / expected).abs(), 1e-6);
    }
    Ok(())
}

fn pumped_frohlich(cfg: &ExperimentConfig, dir: &Path, report: &mut RunReport) -> Result<()> {
    let m = &cfg.model;
    if m.coupling != CouplingKind::PumpedFrohlich {
        return Err(Error::Config("pumped-frohlich needs the pumped-frohlich model".into()));
    }
    let p = m.pump.as_ref().ok_or_else(|| Error::Config("missing [model.pump]".into()))?;
    let n = m.n_sites;
    let pump = PumpSpec::single_q(n, p.k, p.zeta_plus, p.zeta_minus)?;
    let omegas: Vec<f64> = m.modes.iter().map(|md| md.omega).collect();
    let zeta0 = pump_lattice_displacements(&pump, m.epsilon, m.hopping, 0.0);
    let drive = pump_phonon_drive(&m.chi, &zeta0);
    let driven = [0, (2 * p.k) % n, (n - (2 * p.k) % n) % n];
    let off = (0..n).filter(|q| !driven.contains(q)).map(|q| drive[q].norm()).fold(0.0, f64::max);
    report.check_below("selection_rule_off_modes", off, 1e-13);
    let expected0 = m.chi[0] * (p.zeta_plus.norm_sqr() + p.zeta_minus.norm_sqr()) * n as f64;
    report.check_below("uniform_drive_linear_in_n", (drive[0] - expected0).norm() / expected0.norm().max(f64::MIN_POSITIVE), 1e-12);

    let header = ["q", "wavenumber", "drive_re", "drive_im", "drive_abs"].map(String::from);
    let rows: Vec<Vec<f64>> = (0..n).map(|q| vec![q as f64, ring_wavenumber(q, n), drive[q].re, drive[q].im, drive[q].norm()]).collect();
    write_csv(dir, "drive.csv", &header, &rows, report)?;

    let beta0 = if cfg.initial.beta.is_empty() { vec![ZERO; n] } else { cfg.initial.beta.clone() };
    let steps = cfg.n_steps();
    let traj = integrate_pumped_displacements(&pump, m.epsilon, m.hopping, &m.chi, &omegas, &beta0, cfg.run.dt, steps)?;
    let mut header = vec!["time".to_string()];
    for q in 0..n {
        header.push(format!("beta{q}_re"));
        header.push(format!("beta{q}_im"));
    }
    let mut rows = Vec::new();
    let mut err = 0.0_f64;
    for (k, b) in traj.iter().enumerate() {
        let t = k as f64 * cfg.run.dt;
        for q in 0..n {
            let exact = displacement_closed_form(beta0[q], omegas[q], -drive[q] * omegas[q], t)?;
            err = err.max((b[q] - exact).norm());
        }
        if k % cfg.run.sample_stride == 0 || k == steps {
            let mut row = vec![t];
            for z in b {
                row.push(z.re);
                row.push(z.im);
            }
            rows.push(row);
        }
    }
    write_csv(dir, "pumped.csv", &header, &rows, report)?;
    report.check_below("rk4_vs_constant_drive_closed_form", err, 1e-9);
    Ok(())
}

/// Tidy long-format table (file, column, time, value) from every CSV in a run directory.
pub fn plot_data(run_dir: &Path) -> Result<PathBuf> {
    let out = run_dir.join("plot_data.csv");
    let mut files: Vec<PathBuf> = std::fs::read_dir(run_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && p.file_name() != Some(std::ffi::OsStr::new("plot_data.csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no CSV files in {}", run_dir.display())));
    }
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(["file", "column", "x", "value"])?;
    for f in files {
        let mut r = csv::Reader::from_path(&f)?;
        let headers = r.headers()?.clone();
        let name = f.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for rec in r.records() {
            let rec = rec?;
            let x = rec.get(0).unwrap_or("");
            for (h, v) in headers.iter().zip(rec.iter()).skip(1) {
                w.write_record([name.as_str(), h, x, v])?;
            }
        }
    }
    w.flush()?;
    Ok(out)
}

/// Thermal lattice-phonon product ρ_lat ⊗ ρ_th over all modes.
pub fn thermal_product(rho_lat: &ComplexMatrix, model: &Model) -> Result<ComplexMatrix> {
    let mut rho = rho_lat.clone();
    for q in 0..model.bath.n_modes() {
        rho = kron(&rho, &thermal_density(&model.bath, q)?);
    }
    Ok(rho)
}
