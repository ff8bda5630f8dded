use thiserror::Error;

use crate::ansatz::PropagationAbort;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix exponential did not converge after {terms} terms (scaled norm {scaled_norm:.3e}, input norm {norm:.3e})")]
    NonConvergence {
        norm: f64,
        scaled_norm: f64,
        terms: usize,
    },

    #[error("{context}: matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { context: &'static str, deviation: f64 },

    #[error("{context}: truncated Fock tail mass {mass:.3e} exceeds {limit:.1e}; raise n_cut")]
    TailViolation {
        context: &'static str,
        mass: f64,
        limit: f64,
    },

    #[error("density matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositive { min_eigenvalue: f64 },

    #[error("density matrix trace is {trace:.15} instead of 1")]
    BadTrace { trace: f64 },

    #[error("norm drift {drift:.3e} at step {step} exceeds {limit:.1e}")]
    NormDrift { drift: f64, step: usize, limit: f64 },

    #[error("branch '{label}' is not certified decoherence-free (residual {residual:.3e} > {tolerance:.1e})")]
    Uncertified {
        label: String,
        residual: f64,
        tolerance: f64,
    },

    #[error("bilinear couplings u_qq' are only admissible at zero temperature (T = {temperature})")]
    FiniteTemperatureBilinear { temperature: f64 },

    #[error("propagation aborted: {0}")]
    Aborted(Box<PropagationAbort>),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
