//! Coherent-product state propagation for lattice excitations coupled to
//! harmonic baths, with decoherence-free subspace detection and exact
//! truncated-Fock reference dynamics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments, clippy::large_enum_variant)]

pub mod ansatz;
pub mod bath;
pub mod config;
pub mod dfs;
pub mod dimer;
pub mod error;
pub mod model;
pub mod operator;
pub mod oracle;
pub mod scenarios;

pub use error::{Error, Result};
pub use ansatz::{propagate_branch, Branch, CoherentProductState, PropagationOptions, TrajectoryRecord};
pub use bath::{BathSpec, Displacement, Mode};
pub use config::{validate_config, ExperimentConfig};
pub use dfs::scan_dfs;
pub use model::{LatticeSpec, Model, Sector};
pub use oracle::{compare_reduced, exact_propagate_density, exact_propagate_pure, OracleConfig};
pub use scenarios::{run_experiment, RunReport};
