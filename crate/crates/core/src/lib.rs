//! Prediction and retrodiction for continuously monitored Gaussian systems.
//!
//! The forward pass filters the state moments through a measurement record,
//! the backward pass propagates the effect-operator moments from a final
//! condition, and [`retrodiction`] combines the two into past quadrature
//! distributions. [`fock`] is a number-basis reference integrator used to
//! check the moment equations.

pub mod backward;
pub mod ensemble;
pub mod error;
pub mod fock;
pub mod forward;
mod linalg;
pub mod model;
pub mod parallel;
pub mod phase;
pub mod record;
pub mod retrodiction;
pub mod scenarios;

pub use backward::{integrate_backward, BackwardTrajectory, FinalCondition};
pub use error::{Error, Result};
pub use forward::{filter_record, simulate_record, ForwardTrajectory};
pub use model::{DerivedMatrices, ModelSpec};
pub use phase::{EffectMoments, GaussianMoments, QuadratureLayout};
pub use record::{MeasurementRecord, TimeGrid};
pub use retrodiction::{past_quadrature, PastDistribution};
