//! Monte-Carlo averages over independently seeded trajectories.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::forward::{integrate_covariance, means_from_noise, DriftScheme, ForwardStepper};
use crate::model::ModelSpec;
use crate::parallel::{map_indices, Execution};
use crate::phase::GaussianMoments;
use crate::record::{wiener_increments, TimeGrid};

#[derive(Debug, Clone)]
pub struct EnsembleMean {
    pub grid: TimeGrid,
    /// Sample mean of the conditioned first moments at each grid point.
    pub mean: Vec<DVector<f64>>,
    pub trajectories: usize,
}

/// Averages the conditioned mean over `count` trajectories seeded with
/// `base_seed + i`. The covariance path is shared; summation runs in seed
/// order, so the result does not depend on `exec`.
pub fn ensemble_mean(
    spec: &ModelSpec,
    initial: &GaussianMoments,
    grid: &TimeGrid,
    base_seed: u64,
    count: usize,
    exec: Execution,
) -> Result<EnsembleMean> {
    if count == 0 {
        return Err(Error::input("ensemble needs at least one trajectory"));
    }
    if initial.dim() != spec.dim() {
        return Err(Error::shape("initial state does not match the model"));
    }
    let covs = integrate_covariance(spec, initial.cov(), grid)?;
    let stepper = ForwardStepper::new(spec, grid.dt(), DriftScheme::default());
    let paths = map_indices(count, exec, |i| {
        let noise = wiener_increments(base_seed.wrapping_add(i as u64), spec.n_channels(), grid.steps(), grid.dt());
        means_from_noise(&stepper, initial.mean(), &covs, &noise).0
    });
    let mut mean = vec![DVector::zeros(spec.dim()); grid.len()];
    for path in &paths {
        for (acc, m) in mean.iter_mut().zip(path) {
            *acc += m;
        }
    }
    for acc in &mut mean {
        *acc /= count as f64;
    }
    Ok(EnsembleMean { grid: *grid, mean, trajectories: count })
}
