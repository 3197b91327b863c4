//! Conditioned forward evolution of the density-matrix moments.
//!
//! The covariance obeys a deterministic Riccati equation and is advanced with
//! classical RK4 steps; the mean is an Itô SDE advanced on the same grid with
//! the covariance taken at the start of each step.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::linalg::{diag, rk4_matrix, rk4_propagator, symmetrize};
use crate::model::{DerivedMatrices, ModelSpec};
use crate::phase::{uncertainty_min_eigenvalue, GaussianMoments, PHYSICAL_FLOOR};
use crate::record::{wiener_increments, MeasurementRecord, TimeGrid};

/// How the deterministic part of a mean step is advanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftScheme {
    /// `mean + A mean dt`.
    Euler,
    /// Fourth-order propagator of the linear drift (one RK4 step).
    #[default]
    Rk4,
}

fn check_cov_shape(cov: &DMatrix<f64>, derived: &DerivedMatrices, eta: &DVector<f64>) -> Result<()> {
    let d = derived.dim();
    if cov.shape() != (d, d) {
        return Err(Error::shape(format!("covariance is {:?}, expected ({d}, {d})", cov.shape())));
    }
    if eta.len() != derived.n_channels() {
        return Err(Error::shape(format!(
            "{} efficiencies for {} channels",
            eta.len(),
            derived.n_channels()
        )));
    }
    Ok(())
}

/// `cov B^T - N^T` (d x m).
pub(crate) fn forward_response(cov: &DMatrix<f64>, derived: &DerivedMatrices) -> DMatrix<f64> {
    cov * derived.backaction.transpose() - derived.offset.transpose()
}

/// `dcov/dt = A cov + cov A^T + D - 2 (cov B^T - N^T) eta (cov B^T - N^T)^T`.
pub fn riccati_rhs(
    cov: &DMatrix<f64>,
    derived: &DerivedMatrices,
    eta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_cov_shape(cov, derived, eta)?;
    Ok(riccati_rhs_unchecked(cov, derived, &diag(eta)))
}

pub(crate) fn riccati_rhs_unchecked(
    cov: &DMatrix<f64>,
    derived: &DerivedMatrices,
    eta: &DMatrix<f64>,
) -> DMatrix<f64> {
    let a = &derived.drift;
    let v = forward_response(cov, derived);
    let rhs = a * cov + cov * a.transpose() + &derived.diffusion - 2.0 * &v * eta * v.transpose();
    symmetrize(&rhs)
}

/// Covariance at every grid point, starting from `cov0` at `grid.t0()`.
pub fn integrate_covariance(
    spec: &ModelSpec,
    cov0: &DMatrix<f64>,
    grid: &TimeGrid,
) -> Result<Vec<DMatrix<f64>>> {
    let derived = spec.derive();
    check_cov_shape(cov0, &derived, spec.efficiencies())?;
    let start = uncertainty_min_eigenvalue(cov0);
    if start < PHYSICAL_FLOOR {
        return Err(Error::input(format!(
            "initial covariance violates the uncertainty relation (min eigenvalue {start:.3e})"
        )));
    }
    let eta = diag(spec.efficiencies());
    let mut path = Vec::with_capacity(grid.len());
    path.push(symmetrize(cov0));
    for k in 0..grid.steps() {
        let prev = &path[k];
        let next = symmetrize(&rk4_matrix(prev, grid.dt(), |c| riccati_rhs_unchecked(c, &derived, &eta)));
        let min_eig = uncertainty_min_eigenvalue(&next);
        if min_eig < PHYSICAL_FLOOR || next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Instability {
                t: grid.time(k + 1),
                reason: format!("covariance left the physical set (min eigenvalue {min_eig:.3e})"),
            });
        }
        path.push(next);
    }
    Ok(path)
}

/// `dW_h = dY_h - 2 sqrt(eta_h) (B mean)_h dt`.
pub fn innovation(
    mean: &DVector<f64>,
    derived: &DerivedMatrices,
    eta: &DVector<f64>,
    dy: DVectorView<'_, f64>,
    dt: f64,
) -> DVector<f64> {
    let expect = &derived.backaction * mean;
    DVector::from_fn(dy.len(), |h, _| dy[h] - 2.0 * eta[h].sqrt() * expect[h] * dt)
}

/// Single Euler-Maruyama step of the conditioned mean driven by the record
/// increment `dy`.
pub fn step_mean(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    derived: &DerivedMatrices,
    eta: &DVector<f64>,
    dy: DVectorView<'_, f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    check_cov_shape(cov, derived, eta)?;
    if !(dt > 0.0) {
        return Err(Error::input("dt must be positive"));
    }
    if mean.len() != derived.dim() || dy.len() != derived.n_channels() {
        return Err(Error::shape("mean or record slice has the wrong length"));
    }
    let dw = innovation(mean, derived, eta, dy, dt);
    let gain = forward_response(cov, derived) * diag(&eta.map(f64::sqrt));
    Ok(mean + &derived.drift * mean * dt + gain * dw)
}

/// Reusable mean stepper with the drift propagator cached.
#[derive(Debug, Clone)]
pub struct ForwardStepper {
    derived: DerivedMatrices,
    eta: DVector<f64>,
    sqrt_eta: DMatrix<f64>,
    propagator: DMatrix<f64>,
    dt: f64,
}

impl ForwardStepper {
    pub fn new(spec: &ModelSpec, dt: f64, scheme: DriftScheme) -> Self {
        let derived = spec.derive();
        let d = derived.dim();
        let propagator = match scheme {
            DriftScheme::Euler => DMatrix::identity(d, d) + &derived.drift * dt,
            DriftScheme::Rk4 => rk4_propagator(&derived.drift, dt),
        };
        Self {
            sqrt_eta: diag(&spec.efficiencies().map(f64::sqrt)),
            eta: spec.efficiencies().clone(),
            derived,
            propagator,
            dt,
        }
    }

    pub fn derived(&self) -> &DerivedMatrices {
        &self.derived
    }

    /// Advance with a known Wiener (innovation) increment.
    pub fn step_with_noise(&self, mean: &DVector<f64>, cov: &DMatrix<f64>, dw: &DVector<f64>) -> DVector<f64> {
        &self.propagator * mean + forward_response(cov, &self.derived) * &self.sqrt_eta * dw
    }

    /// Advance with a record increment; returns the new mean and the
    /// innovation that was used.
    pub fn step(&self, mean: &DVector<f64>, cov: &DMatrix<f64>, dy: DVectorView<'_, f64>) -> (DVector<f64>, DVector<f64>) {
        let dw = innovation(mean, &self.derived, &self.eta, dy, self.dt);
        (self.step_with_noise(mean, cov, &dw), dw)
    }

    /// Expected record increment `2 sqrt(eta) B mean dt`.
    pub fn expected_increment(&self, mean: &DVector<f64>) -> DVector<f64> {
        &self.sqrt_eta * (&self.derived.backaction * mean) * (2.0 * self.dt)
    }
}

/// Conditioned forward moments on a grid.
#[derive(Debug, Clone)]
pub struct ForwardTrajectory {
    grid: TimeGrid,
    states: Vec<GaussianMoments>,
    spec: ModelSpec,
    seed: Option<u64>,
}

impl ForwardTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    pub fn states(&self) -> &[GaussianMoments] {
        &self.states
    }

    pub fn state(&self, k: usize) -> &GaussianMoments {
        &self.states[k]
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }
}

fn assemble(
    spec: &ModelSpec,
    grid: TimeGrid,
    means: Vec<DVector<f64>>,
    covs: Vec<DMatrix<f64>>,
    seed: Option<u64>,
) -> ForwardTrajectory {
    let states = means
        .into_iter()
        .zip(covs)
        .map(|(m, c)| GaussianMoments::from_parts_unchecked(m, c))
        .collect();
    ForwardTrajectory { grid, states, spec: spec.clone(), seed }
}

fn check_initial(spec: &ModelSpec, initial: &GaussianMoments) -> Result<()> {
    if initial.dim() != spec.dim() {
        return Err(Error::shape(format!(
            "initial state has dimension {}, model has {}",
            initial.dim(),
            spec.dim()
        )));
    }
    let p = initial.check_physical();
    if !p.physical {
        return Err(Error::input(format!(
            "initial state is unphysical (min eigenvalue {:.3e})",
            p.min_eigenvalue
        )));
    }
    Ok(())
}

/// Filters a given record, using the default RK4 drift for the mean.
pub fn filter_record(
    spec: &ModelSpec,
    initial: &GaussianMoments,
    record: &MeasurementRecord,
) -> Result<ForwardTrajectory> {
    filter_record_with(spec, initial, record, DriftScheme::default())
}

pub fn filter_record_with(
    spec: &ModelSpec,
    initial: &GaussianMoments,
    record: &MeasurementRecord,
    scheme: DriftScheme,
) -> Result<ForwardTrajectory> {
    check_initial(spec, initial)?;
    if record.channels() != spec.n_channels() {
        return Err(Error::shape(format!(
            "record has {} channels, model has {}",
            record.channels(),
            spec.n_channels()
        )));
    }
    let grid = *record.grid();
    let covs = integrate_covariance(spec, initial.cov(), &grid)?;
    let stepper = ForwardStepper::new(spec, grid.dt(), scheme);
    let mut means = Vec::with_capacity(grid.len());
    means.push(initial.mean().clone());
    for k in 0..grid.steps() {
        let (next, _) = stepper.step(&means[k], &covs[k], record.increment(k));
        means.push(next);
    }
    Ok(assemble(spec, grid, means, covs, None))
}

/// Means driven by a given innovation stream over a precomputed covariance path.
pub(crate) fn means_from_noise(
    stepper: &ForwardStepper,
    mean0: &DVector<f64>,
    covs: &[DMatrix<f64>],
    noise: &DMatrix<f64>,
) -> (Vec<DVector<f64>>, DMatrix<f64>) {
    let steps = noise.ncols();
    let mut means = Vec::with_capacity(steps + 1);
    let mut record = DMatrix::zeros(noise.nrows(), steps);
    means.push(mean0.clone());
    for k in 0..steps {
        let dw: DVector<f64> = noise.column(k).into_owned();
        let dy = stepper.expected_increment(&means[k]) + &dw;
        record.set_column(k, &dy);
        let next = stepper.step_with_noise(&means[k], &covs[k], &dw);
        means.push(next);
    }
    (means, record)
}

/// Draws a synthetic record from the conditioned dynamics of `true_initial`.
///
/// `dW` comes from [`wiener_increments`] with the same seed, so the noise
/// realisation can be regenerated independently.
pub fn simulate_record(
    spec: &ModelSpec,
    true_initial: &GaussianMoments,
    grid: &TimeGrid,
    seed: u64,
) -> Result<(MeasurementRecord, ForwardTrajectory)> {
    check_initial(spec, true_initial)?;
    let covs = integrate_covariance(spec, true_initial.cov(), grid)?;
    let stepper = ForwardStepper::new(spec, grid.dt(), DriftScheme::default());
    let noise = wiener_increments(seed, spec.n_channels(), grid.steps(), grid.dt());
    let (means, increments) = means_from_noise(&stepper, true_initial.mean(), &covs, &noise);
    let record = MeasurementRecord::new(*grid, increments)?;
    Ok((record, assemble(spec, *grid, means, covs, Some(seed))))
}

/// Unconditional mean `exp(A t) mean0`.
pub fn unconditional_mean(derived: &DerivedMatrices, mean0: &DVector<f64>, t: f64) -> DVector<f64> {
    (&derived.drift * t).exp() * mean0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{damping_channel, dispersive_channel};
    use crate::phase::QuadratureLayout;

    fn one() -> QuadratureLayout {
        QuadratureLayout::single_mode()
    }

    fn decay(gamma: f64, eta: f64) -> ModelSpec {
        ModelSpec::builder(one())
            .channel(damping_channel(one(), 0, gamma).unwrap(), eta)
            .build()
            .unwrap()
    }

    fn dispersive(kappa: f64, eta: f64) -> ModelSpec {
        ModelSpec::builder(one())
            .channel(dispersive_channel(one(), 0, kappa).unwrap(), eta)
            .build()
            .unwrap()
    }

    #[test]
    fn unmonitored_decay_rhs() {
        let g = 1.3;
        let spec = decay(g, 0.0);
        let s0 = DMatrix::from_row_slice(2, 2, &[3.0, 0.4, 0.4, 2.0]);
        let rhs = riccati_rhs(&s0, &spec.derive(), spec.efficiencies()).unwrap();
        let expected = (DMatrix::identity(2, 2) - &s0) * g;
        assert!((rhs - expected).abs().max() < 1e-14);
    }

    #[test]
    fn coherent_state_is_riccati_fixed_point() {
        let spec = decay(0.8, 1.0);
        let rhs = riccati_rhs(&DMatrix::identity(2, 2), &spec.derive(), spec.efficiencies()).unwrap();
        assert!(rhs.abs().max() < 1e-15);
    }

    #[test]
    fn dispersive_probe_rhs_at_vacuum() {
        let kappa = 0.6;
        let spec = dispersive(kappa, 1.0);
        let rhs = riccati_rhs(&DMatrix::identity(2, 2), &spec.derive(), spec.efficiencies()).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[-4.0 * kappa, 0.0, 0.0, 4.0 * kappa]);
        assert!((rhs - expected).abs().max() < 1e-14);
    }

    #[test]
    fn riccati_shape_errors() {
        let spec = decay(1.0, 0.5);
        let dm = spec.derive();
        assert!(riccati_rhs(&DMatrix::identity(3, 3), &dm, spec.efficiencies()).is_err());
        assert!(riccati_rhs(&DMatrix::identity(2, 2), &dm, &DVector::zeros(2)).is_err());
    }

    #[test]
    fn unmonitored_decay_covariance_path() {
        let g = 1.0;
        let spec = decay(g, 0.0);
        let grid = TimeGrid::from_interval(0.0, 2.0, 1e-3).unwrap();
        let path = integrate_covariance(&spec, &(DMatrix::identity(2, 2) * 10.0), &grid).unwrap();
        for (k, c) in path.iter().enumerate() {
            let expected = 1.0 + 9.0 * (-g * grid.time(k)).exp();
            assert!((c[(0, 0)] - expected).abs() < 1e-10 * expected);
            assert!((c[(1, 1)] - expected).abs() < 1e-10 * expected);
            assert_eq!(c[(0, 1)], 0.0);
        }
    }

    #[test]
    fn monitored_coherent_state_stays_coherent() {
        let spec = decay(1.0, 1.0);
        let grid = TimeGrid::from_interval(0.0, 1.0, 1e-2).unwrap();
        let path = integrate_covariance(&spec, &DMatrix::identity(2, 2), &grid).unwrap();
        for c in path {
            assert!((c - DMatrix::identity(2, 2)).abs().max() < 1e-15);
        }
    }

    #[test]
    fn unphysical_start_is_rejected() {
        let spec = decay(1.0, 1.0);
        let grid = TimeGrid::from_interval(0.0, 1.0, 1e-2).unwrap();
        assert!(integrate_covariance(&spec, &(DMatrix::identity(2, 2) * 0.3), &grid).is_err());
    }

    #[test]
    fn huge_step_reports_instability() {
        let spec = dispersive(50.0, 1.0);
        let grid = TimeGrid::from_interval(0.0, 10.0, 0.5).unwrap();
        let err = integrate_covariance(&spec, &(DMatrix::identity(2, 2) * 5.0), &grid).unwrap_err();
        assert!(matches!(err, Error::Instability { .. }), "{err}");
    }

    #[test]
    fn unmonitored_mean_is_pure_drift() {
        let spec = ModelSpec::builder(one())
            .oscillator(0, 2.0)
            .channel(damping_channel(one(), 0, 1.0).unwrap(), 0.0)
            .build()
            .unwrap();
        let dm = spec.derive();
        let mean = DVector::from_vec(vec![1.0, -0.5]);
        let dy = DVector::from_vec(vec![0.37]);
        let next = step_mean(&mean, &DMatrix::identity(2, 2), &dm, spec.efficiencies(), dy.column(0), 0.01).unwrap();
        let expected = &mean + &dm.drift * &mean * 0.01;
        assert!((next - expected).abs().max() < 1e-15);
    }

    #[test]
    fn dispersive_single_euler_step() {
        let kappa = 0.5;
        let spec = dispersive(kappa, 1.0);
        let dm = spec.derive();
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let dy = DVector::from_vec(vec![0.1]);
        let next = step_mean(&DVector::zeros(2), &cov, &dm, spec.efficiencies(), dy.column(0), 1e-3).unwrap();
        // cov B^T with B = sqrt(2 kappa) (1, 0)
        let s = (2.0 * kappa).sqrt();
        let expected = DVector::from_vec(vec![2.0 * s * 0.1, 0.3 * s * 0.1]);
        assert!((next - expected).abs().max() < 1e-15);
    }

    #[test]
    fn coherent_mean_decays_deterministically() {
        let g = 1.0;
        let spec = decay(g, 1.0);
        let grid = TimeGrid::from_interval(0.0, 2.0, 1e-3).unwrap();
        let start = GaussianMoments::coherent(num_complex::Complex64::new(1.5, -0.5));
        for seed in [1, 2] {
            let (_, traj) = simulate_record(&spec, &start, &grid, seed).unwrap();
            for (k, s) in traj.states().iter().enumerate() {
                let f = (-g * grid.time(k) / 2.0).exp();
                assert!((s.mean() - start.mean() * f).abs().max() < 1e-12);
            }
        }
    }

    #[test]
    fn filtering_the_simulated_record_reproduces_it() {
        let spec = ModelSpec::builder(one())
            .oscillator(0, 6.0)
            .channel(damping_channel(one(), 0, 1.0).unwrap(), 0.5)
            .build()
            .unwrap();
        let grid = TimeGrid::from_interval(0.0, 1.0, 1e-3).unwrap();
        let start = GaussianMoments::thermal(4.5, [5.0, 0.0]).unwrap();
        let (record, sim) = simulate_record(&spec, &start, &grid, 9).unwrap();
        let filt = filter_record(&spec, &start, &record).unwrap();
        for (a, b) in sim.states().iter().zip(filt.states()) {
            assert_eq!(a.cov(), b.cov());
            assert!((a.mean() - b.mean()).abs().max() < 1e-10);
        }
    }

    #[test]
    fn dispersive_information_gain_is_monotone() {
        let spec = dispersive(0.8, 1.0);
        let grid = TimeGrid::from_interval(0.0, 3.0, 1e-3).unwrap();
        let path = integrate_covariance(&spec, &(DMatrix::identity(2, 2) * 4.0), &grid).unwrap();
        for w in path.windows(2) {
            assert!(w[1][(0, 0)] <= w[0][(0, 0)] + 1e-15);
        }
    }
}
