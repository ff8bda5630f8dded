//! Closed-form dynamics of the symmetric dimer in its normal-mode basis.

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::ansatz::displacement_closed_form;
use crate::bath::{dephasing_exponent, gaussian_overlap, BathSpec, Displacement};
use crate::error::{Error, Result};
use crate::model::DimerModel;
use crate::operator::{ComplexMatrix, ONE};

/// Two-branch dimer state: amplitudes φ_j on |j̄⟩, co-state overlap ⟨φ₁|φ₂⟩
/// and the per-branch displacements.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimerState {
    pub phi1: C64,
    pub phi2: C64,
    pub overlap_phi: C64,
    pub beta1: Displacement,
    pub beta2: Displacement,
}

impl DimerState {
    pub fn new(phi1: C64, phi2: C64, overlap_phi: C64, beta1: Displacement, beta2: Displacement) -> Result<Self> {
        let w = phi1.norm_sqr() + phi2.norm_sqr();
        if (w - 1.0).abs() > 1e-12 {
            return Err(Error::BadTrace { trace: w });
        }
        if overlap_phi.norm() > 1.0 + 1e-12 {
            return Err(Error::InvalidArgument(format!("co-state overlap {overlap_phi} exceeds 1 in magnitude")));
        }
        if beta1.len() != beta2.len() {
            return Err(Error::DimensionMismatch {
                context: "dimer branch displacements",
                expected: beta1.len(),
                found: beta2.len(),
            });
        }
        Ok(Self {
            phi1,
            phi2,
            overlap_phi,
            beta1,
            beta2,
        })
    }

    /// Bath in thermal equilibrium with no displacement.
    pub fn equilibrium_start(phi1: C64, phi2: C64, overlap_phi: C64, n_modes: usize) -> Result<Self> {
        Self::new(phi1, phi2, overlap_phi, Displacement::zeros(n_modes), Displacement::zeros(n_modes))
    }

    /// Both branches at their displaced equilibria β_{qj} = −χ_{q,j}/ω_q.
    pub fn stationary_start(phi1: C64, phi2: C64, overlap_phi: C64, model: &DimerModel) -> Result<Self> {
        let fixed = |j: usize| {
            Displacement(
                model
                    .normal_couplings(j)
                    .iter()
                    .enumerate()
                    .map(|(q, c)| -c / model.normal.bath.omega(q))
                    .collect(),
            )
        };
        Self::new(phi1, phi2, overlap_phi, fixed(0), fixed(1))
    }

    /// Analytic state at time t from this initial state: closed-form
    /// displacements and φ_j(t) = φ_j(0) exp[−i ε̄_j t + i ∫Ω_j].
    pub fn at(&self, t: f64, model: &DimerModel) -> Result<Self> {
        let bath = &model.normal.bath;
        let eps = model.normal_energies();
        let mut out = self.clone();
        for j in 0..2 {
            let chi = model.normal_couplings(j);
            let beta0 = if j == 0 { &self.beta1 } else { &self.beta2 };
            let mut theta = 0.0;
            let mut beta = Vec::with_capacity(chi.len());
            for (q, &c) in chi.iter().enumerate() {
                let w = bath.omega(q);
                let a = beta0.0[q] + c / w;
                let integral = a * (ONE - C64::from_polar(1.0, -w * t)) / (C64::new(0.0, w));
                theta += -(c.conj() * integral).re + c.norm_sqr() / w * t;
                beta.push(displacement_closed_form(beta0.0[q], w, c, t)?);
            }
            let phase = C64::from_polar(1.0, -eps[j] * t + theta);
            if j == 0 {
                out.phi1 = self.phi1 * phase;
                out.beta1 = Displacement(beta);
            } else {
                out.phi2 = self.phi2 * phase;
                out.beta2 = Displacement(beta);
            }
        }
        Ok(out)
    }
}

/// Γ⁰(t) = 4 Σ_q |λ_q|² coth(ω_q/2T) (1 − cos ω_q t)/ω_q², the dephasing
/// exponent between the two branches after an equilibrium start.
pub fn gamma_relaxation(t: f64, lambda: &[C64], bath: &BathSpec) -> Result<f64> {
    if lambda.len() != bath.n_modes() {
        return Err(Error::DimensionMismatch {
            context: "lambda vs bath modes",
            expected: bath.n_modes(),
            found: lambda.len(),
        });
    }
    Ok(lambda
        .iter()
        .enumerate()
        .map(|(q, l)| {
            let w = bath.omega(q);
            4.0 * l.norm_sqr() * bath.coth(q) * (1.0 - (w * t).cos()) / (w * w)
        })
        .sum())
}

/// (ρ_dimer)_{1̄2̄} = φ₁φ₂* ⟨φ₁|φ₂⟩ (γ₂|γ₁)
pub fn dimer_coherence(state: &DimerState, bath: &BathSpec) -> Result<C64> {
    Ok(state.phi1 * state.phi2.conj() * state.overlap_phi * gaussian_overlap(&state.beta1, &state.beta2, bath)?)
}

/// Γ between the two branches for arbitrary displacements.
pub fn branch_dephasing(state: &DimerState, bath: &BathSpec) -> Result<f64> {
    dephasing_exponent(&state.beta1, &state.beta2, bath)
}

/// Reduced dimer matrix in the {|1̄⟩, |2̄⟩} basis.
pub fn normal_density(state: &DimerState, bath: &BathSpec) -> Result<ComplexMatrix> {
    let c = dimer_coherence(state, bath)?;
    ComplexMatrix::from_row_major(&[C64::new(state.phi1.norm_sqr(), 0.0), c, c.conj(), C64::new(state.phi2.norm_sqr(), 0.0)])
}

/// Ω₂ − Ω₁ at the stationary fixed points: 2 Σ_q (χ_q λ_q* + χ_q* λ_q)/ω_q.
pub fn delta_omega(chi: &[C64], lambda: &[C64], omega: &[f64]) -> Result<f64> {
    if chi.len() != lambda.len() || chi.len() != omega.len() {
        return Err(Error::DimensionMismatch {
            context: "delta omega inputs",
            expected: chi.len(),
            found: lambda.len().min(omega.len()),
        });
    }
    Ok(chi
        .iter()
        .zip(lambda)
        .zip(omega)
        .map(|((c, l), w)| 2.0 * (c * l.conj() + c.conj() * l).re / w)
        .sum())
}

/// |1̄⟩ = (|1⟩ + |2⟩)/√2 and |2̄⟩ = (|1⟩ − |2⟩)/√2 as columns.
pub fn normal_to_site_rotation() -> ComplexMatrix {
    let s = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    ComplexMatrix::from_row_major(&[s, s, s, -s]).expect("2x2")
}

/// Conjugate a normal-basis 2×2 matrix into the localized site basis.
pub fn site_basis_density(rho_normal: &ComplexMatrix) -> Result<ComplexMatrix> {
    if rho_normal.dim() != 2 {
        return Err(Error::DimensionMismatch {
            context: "dimer density",
            expected: 2,
            found: rho_normal.dim(),
        });
    }
    let r = normal_to_site_rotation();
    Ok(&(&r * rho_normal) * &r.adjoint())
}

/// Angular frequency ν of a signal z(t) ∝ e^{−iνt}, from a least-squares
/// line through the unwrapped phase.
pub fn fit_rotation_frequency(times: &[f64], values: &[C64]) -> Result<f64> {
    if times.len() != values.len() || times.len() < 2 {
        return Err(Error::InvalidArgument("phase fit needs at least two matching samples".into()));
    }
    let mut phase = Vec::with_capacity(values.len());
    let mut prev = values[0].arg();
    let mut offset = 0.0;
    for z in values {
        let a = z.arg();
        let d = a - prev;
        if d > std::f64::consts::PI {
            offset -= 2.0 * std::f64::consts::PI;
        } else if d < -std::f64::consts::PI {
            offset += 2.0 * std::f64::consts::PI;
        }
        prev = a;
        phase.push(a + offset);
    }
    let n = times.len() as f64;
    let tm = times.iter().sum::<f64>() / n;
    let pm = phase.iter().sum::<f64>() / n;
    let sxy: f64 = times.iter().zip(&phase).map(|(t, p)| (t - tm) * (p - pm)).sum();
    let sxx: f64 = times.iter().map(|t| (t - tm).powi(2)).sum();
    Ok(-sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ansatz::energy_shift;
    use crate::model::build_dimer;
    use crate::operator::ZERO;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn dimer(t: f64, j: f64) -> DimerModel {
        build_dimer(1.0, j, vec![c(0.1, 0.0)], vec![c(0.3, 0.0)], BathSpec::single(1.0, 20, t).unwrap()).unwrap()
    }

    #[test]
    fn gamma_trivial_cases() {
        let bath = BathSpec::single(1.0, 25, 1.0).unwrap();
        assert_eq!(gamma_relaxation(0.0, &[c(0.3, 0.0)], &bath).unwrap(), 0.0);
        for t in [0.5, 3.0, 17.0] {
            assert_eq!(gamma_relaxation(t, &[ZERO], &bath).unwrap(), 0.0);
        }
    }

    #[test]
    fn gamma_equals_overlap_exponent() {
        for temp in [0.0, 1.0] {
            let d = dimer(temp, 0.2);
            let s0 = DimerState::equilibrium_start(c(0.6, 0.0), c(0.8, 0.0), ONE, 1).unwrap();
            for t in [0.3, 1.0, 2.5, 7.0, 19.0] {
                let s = s0.at(t, &d).unwrap();
                let g = branch_dephasing(&s, &d.normal.bath).unwrap();
                assert_abs_diff_eq!(g, gamma_relaxation(t, &d.lambda, &d.normal.bath).unwrap(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gamma_is_periodic_and_nonnegative() {
        let bath = BathSpec::single(1.3, 10, 0.4).unwrap();
        let l = [c(0.2, 0.1)];
        let period = 2.0 * std::f64::consts::PI / 1.3;
        for k in 0..50 {
            let t = k as f64 * 0.37;
            let g = gamma_relaxation(t, &l, &bath).unwrap();
            assert!(g >= 0.0);
            assert_abs_diff_eq!(g, gamma_relaxation(t + period, &l, &bath).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn coherence_cases() {
        let d = dimer(0.5, 0.2);
        let bath = &d.normal.bath;
        let orth = DimerState::equilibrium_start(c(0.6, 0.0), c(0.8, 0.0), ZERO, 1).unwrap();
        assert_eq!(dimer_coherence(&orth.at(3.0, &d).unwrap(), bath).unwrap(), ZERO);

        let s0 = DimerState::equilibrium_start(c(0.6, 0.0), c(0.0, 0.8), c(0.9, 0.1), 1).unwrap();
        let c0 = dimer_coherence(&s0, bath).unwrap().norm();
        for t in [0.0, 1.0, 4.0, 9.0] {
            let got = dimer_coherence(&s0.at(t, &d).unwrap(), bath).unwrap().norm();
            let expected = c0 * (-gamma_relaxation(t, &d.lambda, bath).unwrap()).exp();
            assert_abs_diff_eq!(got, expected, epsilon = 1e-14);
            assert!(got <= c0 + 1e-15);
        }
    }

    #[test]
    fn stationary_coherence_rotates_at_delta_omega() {
        let d = dimer(0.0, 0.0);
        let s0 = DimerState::stationary_start(c(0.6, 0.0), c(0.8, 0.0), ONE, &d).unwrap();
        let bath = &d.normal.bath;
        let c0 = dimer_coherence(&s0, bath).unwrap();
        let dw = delta_omega(&d.chi, &d.lambda, &[1.0]).unwrap();
        for t in [0.5, 2.0, 11.0] {
            let ct = dimer_coherence(&s0.at(t, &d).unwrap(), bath).unwrap();
            assert!((ct - c0 * C64::from_polar(1.0, -dw * t)).norm() < 1e-13);
        }
    }

    #[test]
    fn delta_omega_is_shift_difference() {
        assert_eq!(delta_omega(&[c(0.2, 0.0)], &[ZERO], &[1.0]).unwrap(), 0.0);
        let (chi, lam, w) = ([c(0.2, 0.05)], [c(0.1, -0.03)], [1.4]);
        let shift = |x: C64| energy_shift(&[x], &Displacement(vec![-x / w[0]])).unwrap();
        let expected = shift(chi[0] + lam[0]) - shift(chi[0] - lam[0]);
        assert_abs_diff_eq!(delta_omega(&chi, &lam, &w).unwrap(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(delta_omega(&[c(0.2, 0.0)], &[c(0.1, 0.0)], &[1.0]).unwrap(), 0.08, epsilon = 1e-15);
    }

    #[test]
    fn site_basis_cases() {
        let half = ComplexMatrix::from_real_diagonal(&[0.5, 0.5]);
        let site = site_basis_density(&half).unwrap();
        assert!((&site - &half).max_abs() < 1e-15);

        let rho = ComplexMatrix::from_row_major(&[c(0.3, 0.0), c(0.2, -0.1), c(0.2, 0.1), c(0.7, 0.0)]).unwrap();
        let site = site_basis_density(&rho).unwrap();
        assert_abs_diff_eq!(site.get(0, 0).re, 0.5 + 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(site.get(1, 1).re, 0.5 - 0.2, epsilon = 1e-15);
        assert!((site.get(0, 1) - c(0.5 * (0.3 - 0.7), 0.1)).norm() < 1e-15);

        let equal = ComplexMatrix::from_row_major(&[c(0.5, 0.0), c(0.3, 0.0), c(0.3, 0.0), c(0.5, 0.0)]).unwrap();
        assert!(site_basis_density(&equal).unwrap().get(0, 1).norm() < 1e-15);
    }

    #[test]
    fn site_basis_matches_model_rotation() {
        let d = dimer(0.0, 0.3);
        let rho = ComplexMatrix::from_row_major(&[c(0.3, 0.0), c(0.2, -0.1), c(0.2, 0.1), c(0.7, 0.0)]).unwrap();
        let via_model = &(&d.rotation * &rho) * &d.rotation.adjoint();
        assert!((&site_basis_density(&rho).unwrap() - &via_model).max_abs() < 1e-13);
    }

    #[test]
    fn phase_fit_recovers_frequency() {
        let times: Vec<f64> = (0..400).map(|k| k as f64 * 0.05).collect();
        for nu in [0.08, -1.3, 4.0] {
            let z: Vec<C64> = times.iter().map(|t| C64::from_polar(0.4, 0.2 - nu * t)).collect();
            assert_abs_diff_eq!(fit_rotation_frequency(&times, &z).unwrap(), nu, epsilon = 1e-12);
        }
    }

    #[test]
    fn invalid_states_rejected() {
        assert!(DimerState::equilibrium_start(c(0.6, 0.0), c(0.6, 0.0), ONE, 1).is_err());
        assert!(DimerState::equilibrium_start(c(0.6, 0.0), c(0.8, 0.0), c(1.1, 0.0), 1).is_err());
    }
}
