//! Truncated number-basis reference integrator for a single mode.
//!
//! Used to validate the Gaussian moment equations: states are dense
//! `(n_max + 1)²` matrices and every step is checked for trace drift and
//! population leaking into the highest levels.

mod integrator;
mod measure;
mod operators;
mod state;

pub use integrator::{NoiseScheme, OracleConfig, OracleSystem, OracleTrajectory};
pub use measure::{
    hermite_functions, number_projectors, past_probability, past_quadrature_density, quadrature_distribution,
    quadrature_vector,
};
pub use operators::{annihilation, build_mode_operators, CMatrix, ModeOperators, Sparse};
pub use state::{extract_moments, FockOperator, Role};
