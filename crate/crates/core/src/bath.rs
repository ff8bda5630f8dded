//! Phonon bath: coherent states, thermal Gaussian state operators, and the
//! finite-temperature overlap between displaced thermal states.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{boson_ladder, kron, matrix_exponential, ComplexMatrix, StateVector, ZERO};

/// Tail mass above which a warning is logged.
pub const TAIL_WARN: f64 = 1e-10;
/// Tail mass above which truncation is rejected.
pub const TAIL_ERROR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub omega: f64,
    pub n_cut: usize,
}

/// Discrete phonon modes at a common temperature (k_B = ħ = 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BathSpec {
    modes: Vec<Mode>,
    temperature: f64,
}

impl BathSpec {
    pub fn new(modes: Vec<Mode>, temperature: f64) -> Result<Self> {
        if !(temperature >= 0.0) || !temperature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature must be finite and nonnegative, got {temperature}"
            )));
        }
        for (q, m) in modes.iter().enumerate() {
            if !(m.omega > 0.0) || !m.omega.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "mode {q}: mode frequency must be positive, got {}",
                    m.omega
                )));
            }
            if m.n_cut < 2 {
                return Err(Error::InvalidArgument(format!("mode {q}: n_cut must be at least 2")));
            }
        }
        let bath = Self { modes, temperature };
        for q in 0..bath.n_modes() {
            let tail = bath.thermal_tail(q);
            if tail > TAIL_ERROR {
                return Err(Error::TailViolation {
                    context: "thermal state",
                    mass: tail,
                    limit: TAIL_ERROR,
                });
            }
            if tail > TAIL_WARN {
                log::warn!("mode {q}: thermal population above n_cut is {tail:.2e}");
            }
        }
        Ok(bath)
    }

    pub fn single(omega: f64, n_cut: usize, temperature: f64) -> Result<Self> {
        Self::new(vec![Mode { omega, n_cut }], temperature)
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn omega(&self, q: usize) -> f64 {
        self.modes[q].omega
    }

    pub fn n_cut(&self, q: usize) -> usize {
        self.modes[q].n_cut
    }

    pub fn phonon_dims(&self) -> Vec<usize> {
        self.modes.iter().map(|m| m.n_cut).collect()
    }

    pub fn phonon_dim(&self) -> usize {
        self.modes.iter().map(|m| m.n_cut).product()
    }

    pub fn with_n_cut(&self, n_cut: &[usize]) -> Result<Self> {
        let modes = self
            .modes
            .iter()
            .zip(n_cut)
            .map(|(m, &n)| Mode { omega: m.omega, n_cut: n })
            .collect();
        Self::new(modes, self.temperature)
    }

    /// Boltzmann ratio e^{-ω/T}; zero at T = 0.
    pub fn boltzmann_ratio(&self, q: usize) -> f64 {
        if self.temperature == 0.0 {
            0.0
        } else {
            (-self.omega(q) / self.temperature).exp()
        }
    }

    /// Thermal angle with tanh θ = exp(−ω/2T); exactly zero at T = 0.
    pub fn theta(&self, q: usize) -> f64 {
        if self.temperature == 0.0 {
            0.0
        } else {
            (-self.omega(q) / (2.0 * self.temperature)).exp().atanh()
        }
    }

    /// coth(ω/2T), replaced by 1 at T = 0.
    pub fn coth(&self, q: usize) -> f64 {
        if self.temperature == 0.0 {
            1.0
        } else {
            1.0 / (self.omega(q) / (2.0 * self.temperature)).tanh()
        }
    }

    /// Bose occupation 1/(e^{ω/T} − 1) of the untruncated mode.
    pub fn occupation(&self, q: usize) -> f64 {
        if self.temperature == 0.0 {
            0.0
        } else {
            1.0 / (self.omega(q) / self.temperature).exp_m1()
        }
    }

    /// Population of levels ≥ n_cut in the untruncated thermal state.
    pub fn thermal_tail(&self, q: usize) -> f64 {
        self.boltzmann_ratio(q).powi(self.n_cut(q) as i32)
    }
}

/// One complex displacement per bath mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Displacement(pub Vec<C64>);

impl Displacement {
    pub fn zeros(n_modes: usize) -> Self {
        Self(vec![ZERO; n_modes])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check(&self, bath: &BathSpec) -> Result<()> {
        if self.len() != bath.n_modes() {
            return Err(Error::DimensionMismatch {
                context: "displacement length vs bath modes",
                expected: bath.n_modes(),
                found: self.len(),
            });
        }
        Ok(())
    }
}

/// Poisson mass of levels ≥ n_cut for a coherent state of amplitude β.
pub fn coherent_tail(beta: C64, n_cut: usize) -> f64 {
    let mean = beta.norm_sqr();
    if mean == 0.0 {
        return 0.0;
    }
    // log p_n = -m + n ln m - ln n!
    let mut log_p = -mean;
    for n in 1..=n_cut {
        log_p += mean.ln() - (n as f64).ln();
    }
    let mut p = log_p.exp();
    let mut tail = 0.0;
    let mut n = n_cut;
    while p > 1e-300 && n < n_cut + 10_000 {
        tail += p;
        n += 1;
        p *= mean / n as f64;
        if n as f64 > mean && p < tail * 1e-18 {
            break;
        }
    }
    tail
}

fn check_coherent_tail(beta: C64, n_cut: usize, context: &'static str) -> Result<()> {
    let tail = coherent_tail(beta, n_cut);
    if tail > TAIL_ERROR {
        return Err(Error::TailViolation {
            context,
            mass: tail,
            limit: TAIL_ERROR,
        });
    }
    if tail > TAIL_WARN {
        log::warn!("{context}: coherent tail mass {tail:.2e} at |β| = {:.3}", beta.norm());
    }
    Ok(())
}

/// Truncated coherent state e^{−|β|²/2} Σ βⁿ/√n! |n⟩, renormalized after truncation.
pub fn coherent_state(beta: C64, mode: Mode) -> Result<StateVector> {
    check_coherent_tail(beta, mode.n_cut, "coherent_state")?;
    let mut amp = C64::new((-beta.norm_sqr() / 2.0).exp(), 0.0);
    let mut v = StateVector::zeros(mode.n_cut);
    for n in 0..mode.n_cut {
        if n > 0 {
            amp *= beta / (n as f64).sqrt();
        }
        v[n] = amp;
    }
    let norm = v.norm();
    Ok(v / C64::new(norm, 0.0))
}

/// Truncated Gibbs state of one mode, renormalized to unit trace.
pub fn thermal_density(bath: &BathSpec, q: usize) -> Result<ComplexMatrix> {
    let p = thermal_populations(bath, q)?;
    Ok(ComplexMatrix::from_real_diagonal(&p))
}

fn thermal_populations(bath: &BathSpec, q: usize) -> Result<Vec<f64>> {
    if q >= bath.n_modes() {
        return Err(Error::InvalidArgument(format!("mode index {q} out of range")));
    }
    let x = bath.boltzmann_ratio(q);
    let mut p: Vec<f64> = (0..bath.n_cut(q)).map(|n| if n == 0 { 1.0 } else { x.powi(n as i32) }).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    Ok(p)
}

/// γ̂_{q,T} = exp(−ω b†b / 2T)/√Z, the square root of the thermal density.
pub fn thermal_gamma(bath: &BathSpec, q: usize) -> Result<ComplexMatrix> {
    let p = thermal_populations(bath, q)?;
    Ok(ComplexMatrix::from_real_diagonal(&p.iter().map(|v| v.sqrt()).collect::<Vec<_>>()))
}

/// D(β) = exp(βb† − β*b) on the truncated mode, by full matrix exponential.
pub fn displacement_operator(beta: C64, n_cut: usize) -> Result<ComplexMatrix> {
    let (b, bd) = boson_ladder(n_cut)?;
    matrix_exponential(&(&bd.scale(beta) - &b.scale(beta.conj())))
}

/// Single-mode γ̂_q = D(β_q) γ̂_{q,T}.
pub fn displaced_thermal_gamma_mode(beta: C64, bath: &BathSpec, q: usize) -> Result<ComplexMatrix> {
    let n_cut = bath.n_cut(q);
    check_coherent_tail(beta, n_cut, "displaced_thermal_gamma")?;
    Ok(&displacement_operator(beta, n_cut)? * &thermal_gamma(bath, q)?)
}

/// γ̂ = Π_q D(β_q) γ̂_{q,T} as a Kronecker product over modes (ascending q).
pub fn displaced_thermal_gamma(beta: &Displacement, bath: &BathSpec) -> Result<ComplexMatrix> {
    beta.check(bath)?;
    let mut out: Option<ComplexMatrix> = None;
    for (q, &b) in beta.0.iter().enumerate() {
        let g = displaced_thermal_gamma_mode(b, bath, q)?;
        out = Some(match out {
            None => g,
            Some(acc) => kron(&acc, &g),
        });
    }
    out.ok_or_else(|| Error::InvalidArgument("bath has no modes".into()))
}

/// Dephasing exponent Γ = ½ Σ_q |β_q1 − β_q2|² coth(ω_q/2T).
pub fn dephasing_exponent(beta1: &Displacement, beta2: &Displacement, bath: &BathSpec) -> Result<f64> {
    beta1.check(bath)?;
    beta2.check(bath)?;
    Ok(0.5
        * beta1
            .0
            .iter()
            .zip(&beta2.0)
            .enumerate()
            .map(|(q, (a, b))| (a - b).norm_sqr() * bath.coth(q))
            .sum::<f64>())
}

/// Overlap phase: arg of (γ̂₂|γ̂₁) is Σ_q Im(β_q1 β_q2*).
pub fn overlap_phase(beta1: &Displacement, beta2: &Displacement) -> f64 {
    beta1.0.iter().zip(&beta2.0).map(|(a, b)| (a * b.conj()).im).sum()
}

/// Hilbert–Schmidt overlap (γ̂₂|γ̂₁) = Tr(γ̂₂† γ̂₁) of two displaced thermal
/// state operators, in closed form: exp(−Γ) · exp(i Σ_q Im β_q1 β_q2*).
pub fn gaussian_overlap(beta1: &Displacement, beta2: &Displacement, bath: &BathSpec) -> Result<C64> {
    let gamma = dephasing_exponent(beta1, beta2, bath)?;
    Ok(C64::from_polar((-gamma).exp(), overlap_phase(beta1, beta2)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{commutator, inner, number_operator};
    use proptest::prelude::*;

    fn amplitude_sum_overlap(b1: C64, b2: C64, n_terms: usize) -> C64 {
        // ⟨b2|b1⟩ by explicit series Σ (b2*)^n b1^n / n!
        let mut term = C64::new(1.0, 0.0);
        let mut sum = term;
        for n in 1..n_terms {
            term *= b2.conj() * b1 / n as f64;
            sum += term;
        }
        sum * (-(b1.norm_sqr() + b2.norm_sqr()) / 2.0).exp()
    }

    #[test]
    fn bath_validation() {
        assert!(BathSpec::single(0.0, 10, 0.1).is_err());
        assert!(BathSpec::single(1.0, 10, -0.1).is_err());
        assert!(BathSpec::single(1.0, 1, 0.0).is_err());
        // ω/T = 1 with n_cut = 5 leaves e^{-5} in the tail
        assert!(matches!(BathSpec::single(1.0, 5, 1.0), Err(Error::TailViolation { .. })));
    }

    #[test]
    fn thermal_angle_properties() {
        let cold = BathSpec::single(1.0, 40, 0.0).unwrap();
        assert_eq!(cold.theta(0), 0.0);
        assert_eq!(cold.coth(0), 1.0);
        let mut last = 0.0;
        for t in [0.05, 0.1, 0.2, 0.3] {
            let b = BathSpec::single(1.0, 200, t).unwrap();
            let th = b.theta(0);
            assert!(th > last);
            assert!(th.tanh() < 1.0);
            assert!((th.tanh() - (-0.5 / t).exp()).abs() < 1e-14);
            last = th;
        }
    }

    #[test]
    fn vacuum_coherent_state() {
        let v = coherent_state(ZERO, Mode { omega: 1.0, n_cut: 5 }).unwrap();
        assert_eq!(v[0], C64::new(1.0, 0.0));
        assert!(v.iter().skip(1).all(|z| *z == ZERO));
    }

    #[test]
    fn coherent_state_mean_amplitude() {
        let mode = Mode { omega: 1.0, n_cut: 20 };
        let v = coherent_state(C64::new(0.5, 0.0), mode).unwrap();
        let (b, _) = boson_ladder(20).unwrap();
        let mean = inner(&v, &(&b * &v));
        assert!((mean - C64::new(0.5, 0.0)).norm() < 1e-10);
        assert!((v.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coherent_state_overlap_formula() {
        let mode = Mode { omega: 1.0, n_cut: 30 };
        let (b1, b2) = (C64::new(0.3, 0.0), C64::new(0.0, 0.2));
        let v1 = coherent_state(b1, mode).unwrap();
        let v2 = coherent_state(b2, mode).unwrap();
        let oracle = amplitude_sum_overlap(b1, b2, 60);
        assert!((inner(&v2, &v1) - oracle).norm() < 1e-10);
        let closed = (-(b1.norm_sqr() + b2.norm_sqr()) / 2.0 + b2.conj() * b1).exp();
        assert!((oracle - closed).norm() < 1e-14);
    }

    #[test]
    fn coherent_state_rejects_heavy_tail() {
        let mode = Mode { omega: 1.0, n_cut: 4 };
        assert!(matches!(coherent_state(C64::new(2.0, 0.0), mode), Err(Error::TailViolation { .. })));
    }

    #[test]
    fn thermal_density_limits() {
        let cold = BathSpec::single(1.0, 6, 0.0).unwrap();
        let rho = thermal_density(&cold, 0).unwrap();
        assert_eq!(rho.diagonal()[0], C64::new(1.0, 0.0));
        assert!(rho.diagonal()[1..].iter().all(|z| *z == ZERO));

        let warm = BathSpec::single(2.0, 40, 1.0).unwrap();
        let rho = thermal_density(&warm, 0).unwrap();
        assert!((rho.trace().re - 1.0).abs() < 1e-15);
        let n_mean = (&number_operator(40) * &rho).trace().re;
        let geometric = 1.0 / (2.0f64.exp() - 1.0);
        assert!((n_mean - geometric).abs() < 1e-10);
    }

    #[test]
    fn undisplaced_gamma_is_root_of_thermal_state() {
        let bath = BathSpec::single(1.0, 30, 1.0).unwrap();
        let g = displaced_thermal_gamma(&Displacement::zeros(1), &bath).unwrap();
        assert!((&g - &thermal_gamma(&bath, 0).unwrap()).max_abs() < 1e-15);
        assert!((&(&g * &g.adjoint()) - &thermal_density(&bath, 0).unwrap()).max_abs() < 1e-15);
    }

    #[test]
    fn displaced_gamma_moments() {
        let n_cut = 40;
        let bath = BathSpec::single(1.0, n_cut, 1.0).unwrap();
        let beta = C64::new(0.4, 0.0);
        let g = displaced_thermal_gamma(&Displacement(vec![beta]), &bath).unwrap();
        let rho = &g * &g.adjoint();
        assert!((rho.trace().re - 1.0).abs() < 1e-12);
        let (b, bd) = boson_ladder(n_cut).unwrap();
        assert!(((&b * &rho).trace() - beta).norm() < 1e-10);
        let shifted = &b - &ComplexMatrix::identity(n_cut).scale(beta);
        let occ = (&(&shifted.adjoint() * &shifted) * &rho).trace().re;
        let _ = bd;
        // thermal occupancy of the truncated Gibbs state ω/T = 1
        let nbar = 1.0 / (1.0f64.exp() - 1.0);
        assert!((occ - nbar).abs() < 1e-9);
    }

    #[test]
    fn displaced_vacuum_relation_for_thermal_operator() {
        // b γ̂ cosh θ − γ̂ b sinh θ = β cosh θ γ̂
        let n_cut = 45;
        let bath = BathSpec::single(1.3, n_cut, 0.9).unwrap();
        let beta = C64::new(0.35, -0.2);
        let g = displaced_thermal_gamma(&Displacement(vec![beta]), &bath).unwrap();
        let (b, _) = boson_ladder(n_cut).unwrap();
        let th = bath.theta(0);
        let lhs = &(&b * &g).scale_real(th.cosh()) - &(&g * &b).scale_real(th.sinh());
        let rhs = g.scale(beta * th.cosh());
        assert!((&lhs - &rhs).max_abs() < 1e-9);
    }

    #[test]
    fn overlap_against_matrix_trace() {
        let bath = BathSpec::new(vec![Mode { omega: 1.5, n_cut: 40 }], 1.0).unwrap();
        for (b1, b2) in [
            (C64::new(0.3, 0.0), C64::new(-0.2, 0.0)),
            (C64::new(0.3, 0.1), C64::new(-0.2, 0.25)),
        ] {
            let d1 = Displacement(vec![b1]);
            let d2 = Displacement(vec![b2]);
            let g1 = displaced_thermal_gamma(&d1, &bath).unwrap();
            let g2 = displaced_thermal_gamma(&d2, &bath).unwrap();
            let oracle = g2.hs_inner(&g1);
            let analytic = gaussian_overlap(&d1, &d2, &bath).unwrap();
            assert!((oracle - analytic).norm() < 1e-8, "{oracle} vs {analytic}");
        }
    }

    #[test]
    fn zero_temperature_overlap_is_coherent_overlap() {
        let bath = BathSpec::single(1.0, 30, 0.0).unwrap();
        let (b1, b2) = (C64::new(0.3, 0.2), C64::new(-0.1, 0.4));
        let ov = gaussian_overlap(&Displacement(vec![b1]), &Displacement(vec![b2]), &bath).unwrap();
        let exact = (-(b1.norm_sqr() + b2.norm_sqr()) / 2.0 + b2.conj() * b1).exp();
        assert!((ov - exact).norm() < 1e-14);
        let gamma = dephasing_exponent(&Displacement(vec![b1]), &Displacement(vec![b2]), &bath).unwrap();
        assert!((gamma - 0.5 * (b1 - b2).norm_sqr()).abs() < 1e-15);
    }

    #[test]
    fn truncated_ladder_sanity() {
        let (b, bd) = boson_ladder(5).unwrap();
        assert!(commutator(&b, &bd).is_ok());
    }

    fn arb_c64() -> impl Strategy<Value = C64> {
        (-1.0f64..1.0, -1.0f64..1.0).prop_map(|(r, i)| C64::new(r, i))
    }

    proptest! {
        #[test]
        fn overlap_magnitude_bounded(b1 in arb_c64(), b2 in arb_c64(), shift in arb_c64(), t in 0.0f64..3.0) {
            let bath = BathSpec::new(vec![Mode { omega: 1.0, n_cut: 2 }], 0.0).unwrap();
            let bath = if t > 0.0 {
                BathSpec::new(vec![Mode { omega: 1.0, n_cut: 200 }], t).unwrap()
            } else { bath };
            let d1 = Displacement(vec![b1]);
            let d2 = Displacement(vec![b2]);
            let ov = gaussian_overlap(&d1, &d2, &bath).unwrap();
            prop_assert!(ov.norm() <= 1.0 + 1e-15);
            prop_assert!((gaussian_overlap(&d1, &d1, &bath).unwrap() - C64::new(1.0, 0.0)).norm() < 1e-15);
            let g12 = dephasing_exponent(&d1, &d2, &bath).unwrap();
            let g21 = dephasing_exponent(&d2, &d1, &bath).unwrap();
            prop_assert!((g12 - g21).abs() < 1e-15);
            let s1 = Displacement(vec![b1 + shift]);
            let s2 = Displacement(vec![b2 + shift]);
            prop_assert!((dephasing_exponent(&s1, &s2, &bath).unwrap() - g12).abs() < 1e-12);
            if (b1 - b2).norm() > 1e-6 {
                prop_assert!(ov.norm() < 1.0);
            }
        }
    }
}
