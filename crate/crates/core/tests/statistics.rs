//! Statistical and structural properties of the forward filter.

use nalgebra::{DMatrix, DVector};

use gaussian_retro::ensemble::ensemble_mean;
use gaussian_retro::forward::{innovation, integrate_covariance, unconditional_mean};
use gaussian_retro::model::{damping_channel, dispersive_channel};
use gaussian_retro::parallel::Execution;
use gaussian_retro::record::wiener_increments;
use gaussian_retro::{filter_record, simulate_record, GaussianMoments, ModelSpec, QuadratureLayout, TimeGrid};

fn fig4_model(eta: f64) -> ModelSpec {
    let one = QuadratureLayout::single_mode();
    ModelSpec::builder(one)
        .oscillator(0, 6.0)
        .channel(damping_channel(one, 0, 1.0).unwrap(), eta)
        .build()
        .unwrap()
}

fn fig4_initial() -> GaussianMoments {
    GaussianMoments::new(DVector::from_vec(vec![5.0, 0.0]), DMatrix::identity(2, 2) * 10.0).unwrap()
}

#[test]
fn ensemble_average_follows_unconditional_mean() {
    let spec = fig4_model(0.5);
    let init = fig4_initial();
    let grid = TimeGrid::from_interval(0.0, 1.0, 1e-3).unwrap();
    let ens = ensemble_mean(&spec, &init, &grid, 1000, 1000, Execution::default()).unwrap();
    let derived = spec.derive();
    let scale = init.mean().norm();
    for k in (0..grid.len()).step_by(100) {
        let exact = unconditional_mean(&derived, init.mean(), grid.time(k));
        let dev = (&ens.mean[k] - exact).norm();
        assert!(dev < 0.05 * scale, "t = {}: deviation {dev}", grid.time(k));
    }
}

#[test]
fn innovations_have_variance_dt() {
    let spec = fig4_model(0.5);
    let grid = TimeGrid::new(0.0, 1e-3, 10_000).unwrap();
    let (record, fwd) = simulate_record(&spec, &fig4_initial(), &grid, 4).unwrap();
    let derived = spec.derive();
    let dws: Vec<f64> = (0..grid.steps())
        .map(|k| innovation(fwd.state(k).mean(), &derived, spec.efficiencies(), record.increment(k), grid.dt())[0])
        .collect();
    let n = dws.len() as f64;
    let mean = dws.iter().sum::<f64>() / n;
    let var = dws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!((var / grid.dt() - 1.0).abs() < 0.1, "variance / dt = {}", var / grid.dt());
}

#[test]
fn unmonitored_record_is_pure_noise() {
    let spec = fig4_model(0.0);
    let grid = TimeGrid::from_interval(0.0, 0.5, 1e-3).unwrap();
    let (record, _) = simulate_record(&spec, &fig4_initial(), &grid, 21).unwrap();
    assert_eq!(record.increments(), &wiener_increments(21, 1, grid.steps(), grid.dt()));
}

#[test]
fn covariance_path_ignores_the_record() {
    let spec = fig4_model(0.5);
    let init = fig4_initial();
    let grid = TimeGrid::from_interval(0.0, 1.0, 1e-3).unwrap();
    let (rec_a, _) = simulate_record(&spec, &init, &grid, 1).unwrap();
    let (rec_b, _) = simulate_record(&spec, &init, &grid, 2).unwrap();
    let a = filter_record(&spec, &init, &rec_a).unwrap();
    let b = filter_record(&spec, &init, &rec_b).unwrap();
    assert_ne!(a.state(500).mean(), b.state(500).mean());
    for k in 0..grid.len() {
        assert_eq!(a.state(k).cov(), b.state(k).cov());
    }
}

#[test]
fn unmonitored_steady_state_solves_lyapunov_equation() {
    let one = QuadratureLayout::single_mode();
    let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
    let spec = ModelSpec::builder(one)
        .hamiltonian(h)
        .channel(damping_channel(one, 0, 1.0).unwrap(), 0.0)
        .channel(dispersive_channel(one, 0, 0.3).unwrap(), 0.0)
        .build()
        .unwrap();
    let derived = spec.derive();
    // (I ⊗ A + A ⊗ I) vec σ = -vec D, column-major vec.
    let a = &derived.drift;
    let i2 = DMatrix::<f64>::identity(2, 2);
    let lhs = i2.kronecker(a) + a.kronecker(&i2);
    let rhs = -DVector::from_column_slice(derived.diffusion.as_slice());
    let vec_sigma = lhs.lu().solve(&rhs).unwrap();
    let expected = DMatrix::from_column_slice(2, 2, vec_sigma.as_slice());

    let grid = TimeGrid::from_interval(0.0, 40.0, 1e-2).unwrap();
    let covs = integrate_covariance(&spec, &DMatrix::identity(2, 2), &grid).unwrap();
    let last = covs.last().unwrap();
    assert!((last - &expected).amax() < 1e-8, "{last} vs {expected}");
}
