//! Backward evolution of the effect-matrix moments.
//!
//! Time runs from the final grid point down to `t0`. A finite final
//! covariance is propagated as `(r̄, γ)`; the identity effect, which has no
//! finite covariance, is propagated in information form `(Λ, ξ) = (γ⁻¹, γ⁻¹ r̄)`
//! starting from exact zeros.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::forward::DriftScheme;
use crate::linalg::{checked_symmetric_inverse, diag, rk4_propagator, symmetric_eigen_range, symmetrize};
use crate::model::{DerivedMatrices, ModelSpec};
use crate::phase::{uncertainty_min_eigenvalue, EffectMoments, GaussianMoments, PHYSICAL_FLOOR};
use crate::record::{MeasurementRecord, TimeGrid};

/// Largest condition number accepted when switching between forms.
pub const MAX_CONDITION: f64 = 1e12;

/// The flat effect `E(T) = 1`: zero precision and zero information.
pub fn final_condition_identity(layout: crate::phase::QuadratureLayout) -> EffectMoments {
    let d = layout.dim();
    EffectMoments::Information { precision: DMatrix::zeros(d, d), info: DVector::zeros(d) }
}

/// Projection onto a Gaussian state at the final time.
pub fn final_condition_projection(target: &GaussianMoments) -> Result<EffectMoments> {
    let p = target.check_physical();
    if !p.physical {
        return Err(Error::input(format!(
            "projection target is unphysical (min eigenvalue {:.3e})",
            p.min_eigenvalue
        )));
    }
    Ok(EffectMoments::Covariance(target.clone()))
}

pub fn to_information_form(e: &EffectMoments) -> Result<EffectMoments> {
    match e {
        EffectMoments::Information { .. } => Ok(e.clone()),
        EffectMoments::Covariance(m) => {
            let precision = checked_symmetric_inverse(m.cov(), MAX_CONDITION).ok_or_else(|| {
                Error::Singular("effect covariance cannot be inverted".into())
            })?;
            let info = &precision * m.mean();
            Ok(EffectMoments::Information { precision, info })
        }
    }
}

pub fn to_covariance_form(e: &EffectMoments) -> Result<EffectMoments> {
    match e {
        EffectMoments::Covariance(_) => Ok(e.clone()),
        EffectMoments::Information { precision, info } => {
            let cov = checked_symmetric_inverse(precision, MAX_CONDITION).ok_or_else(|| {
                Error::Singular("effect precision is singular (flat or partly flat effect)".into())
            })?;
            let mean = &cov * info;
            Ok(EffectMoments::Covariance(GaussianMoments::from_parts_unchecked(mean, cov)))
        }
    }
}

fn check_shape(m: &DMatrix<f64>, derived: &DerivedMatrices, eta: &DVector<f64>) -> Result<()> {
    let d = derived.dim();
    if m.shape() != (d, d) {
        return Err(Error::shape(format!("matrix is {:?}, expected ({d}, {d})", m.shape())));
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

/// `γ B^T + N^T` (d x m).
fn backward_response(gamma: &DMatrix<f64>, derived: &DerivedMatrices) -> DMatrix<f64> {
    gamma * derived.backaction.transpose() + derived.offset.transpose()
}

/// `(γ(t - dt) - γ(t)) / dt = -A γ - γ A^T + D - 2 (γ B^T + N^T) η (γ B^T + N^T)^T`.
pub fn backward_riccati_rhs(
    gamma: &DMatrix<f64>,
    derived: &DerivedMatrices,
    eta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_shape(gamma, derived, eta)?;
    Ok(backward_rhs_unchecked(gamma, derived, &diag(eta)))
}

fn backward_rhs_unchecked(gamma: &DMatrix<f64>, derived: &DerivedMatrices, eta: &DMatrix<f64>) -> DMatrix<f64> {
    let a = &derived.drift;
    let v = backward_response(gamma, derived);
    let rhs = -(a * gamma) - gamma * a.transpose() + &derived.diffusion - 2.0 * &v * eta * v.transpose();
    symmetrize(&rhs)
}

/// `B^T + Λ N^T` (d x m), equal to `Λ (γ B^T + N^T)`.
fn information_response(lambda: &DMatrix<f64>, derived: &DerivedMatrices) -> DMatrix<f64> {
    derived.backaction.transpose() + lambda * derived.offset.transpose()
}

/// Backward-time derivative of the precision,
/// `dΛ/dτ = Λ A + A^T Λ - Λ D Λ + 2 (B^T + Λ N^T) η (B^T + Λ N^T)^T`, `τ = T - t`.
pub fn information_riccati_rhs(
    lambda: &DMatrix<f64>,
    derived: &DerivedMatrices,
    eta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    check_shape(lambda, derived, eta)?;
    Ok(information_rhs_unchecked(lambda, derived, &diag(eta)))
}

fn information_rhs_unchecked(lambda: &DMatrix<f64>, derived: &DerivedMatrices, eta: &DMatrix<f64>) -> DMatrix<f64> {
    let a = &derived.drift;
    let m = information_response(lambda, derived);
    let rhs = lambda * a + a.transpose() * lambda - lambda * &derived.diffusion * lambda
        + 2.0 * &m * eta * m.transpose();
    symmetrize(&rhs)
}

/// Deterministic part of `dξ/dτ`: `(A^T - Λ D + 2 (B^T + Λ N^T) η N) ξ`.
fn information_drift(
    lambda: &DMatrix<f64>,
    xi: &DVector<f64>,
    derived: &DerivedMatrices,
    eta: &DMatrix<f64>,
) -> DVector<f64> {
    let m = information_response(lambda, derived);
    (derived.drift.transpose() - lambda * &derived.diffusion + 2.0 * m * eta * &derived.offset) * xi
}

/// Which parameterisation the backward pass carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackwardForm {
    Covariance,
    Information,
}

/// Final condition at `T`.
#[derive(Debug, Clone, PartialEq)]
pub enum FinalCondition {
    Identity,
    Projection(GaussianMoments),
}

impl FinalCondition {
    pub fn effect(&self, layout: crate::phase::QuadratureLayout) -> Result<EffectMoments> {
        match self {
            FinalCondition::Identity => Ok(final_condition_identity(layout)),
            FinalCondition::Projection(target) => final_condition_projection(target),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackwardTrajectory {
    grid: TimeGrid,
    effects: Vec<EffectMoments>,
    form: BackwardForm,
    spec: ModelSpec,
    record: MeasurementRecord,
}

impl BackwardTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn times(&self) -> Vec<f64> {
        self.grid.times()
    }

    /// Effect moments indexed like the grid (`effects()[k]` is at `t_k`).
    pub fn effects(&self) -> &[EffectMoments] {
        &self.effects
    }

    pub fn effect(&self, k: usize) -> &EffectMoments {
        &self.effects[k]
    }

    pub fn form(&self) -> BackwardForm {
        self.form
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn record(&self) -> &MeasurementRecord {
        &self.record
    }
}

/// Integrates from `final_effect` at the last grid point down to `t0`,
/// in information form for the identity effect and covariance form
/// otherwise.
pub fn integrate_backward(
    spec: &ModelSpec,
    record: &MeasurementRecord,
    final_effect: &EffectMoments,
) -> Result<BackwardTrajectory> {
    let form = match final_effect {
        EffectMoments::Covariance(_) => BackwardForm::Covariance,
        EffectMoments::Information { .. } => BackwardForm::Information,
    };
    integrate_backward_with(spec, record, final_effect, form, DriftScheme::default())
}

pub fn integrate_backward_with(
    spec: &ModelSpec,
    record: &MeasurementRecord,
    final_effect: &EffectMoments,
    form: BackwardForm,
    scheme: DriftScheme,
) -> Result<BackwardTrajectory> {
    if record.channels() != spec.n_channels() {
        return Err(Error::shape(format!(
            "record has {} channels, model has {}",
            record.channels(),
            spec.n_channels()
        )));
    }
    if final_effect.dim() != spec.dim() {
        return Err(Error::shape(format!(
            "final effect has dimension {}, model has {}",
            final_effect.dim(),
            spec.dim()
        )));
    }
    let start = match form {
        BackwardForm::Covariance => to_covariance_form(final_effect)?,
        BackwardForm::Information => to_information_form(final_effect)?,
    };
    let derived = spec.derive();
    let grid = *record.grid();
    let stepper = BackwardStepper::new(&derived, spec.efficiencies(), grid.dt(), scheme);
    let mut effects = vec![start; 1];
    for k in (0..grid.steps()).rev() {
        let later = effects.last().expect("non-empty");
        let earlier = match later {
            EffectMoments::Covariance(m) => {
                let (mean, gamma) = stepper.covariance_step(m.mean(), m.cov(), record.increment(k));
                let min_eig = uncertainty_min_eigenvalue(&gamma);
                if min_eig < PHYSICAL_FLOOR || gamma.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Instability {
                        t: grid.time(k),
                        reason: format!("effect covariance left the physical set (min eigenvalue {min_eig:.3e})"),
                    });
                }
                EffectMoments::Covariance(GaussianMoments::from_parts_unchecked(mean, gamma))
            }
            EffectMoments::Information { precision, info } => {
                let (lambda, xi) = stepper.information_step(precision, info, record.increment(k));
                let min_eig = if lambda.nrows() == 0 { 0.0 } else { symmetric_eigen_range(&lambda).0 };
                let scale = lambda.iter().fold(1.0f64, |a, v| a.max(v.abs()));
                if min_eig < -1e-10 * scale || lambda.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Instability {
                        t: grid.time(k),
                        reason: format!("effect precision lost positivity (min eigenvalue {min_eig:.3e})"),
                    });
                }
                EffectMoments::Information { precision: lambda, info: xi }
            }
        };
        effects.push(earlier);
    }
    effects.reverse();
    Ok(BackwardTrajectory { grid, effects, form, spec: spec.clone(), record: record.clone() })
}

struct BackwardStepper<'a> {
    derived: &'a DerivedMatrices,
    eta: DMatrix<f64>,
    sqrt_eta: DMatrix<f64>,
    propagator: DMatrix<f64>,
    scheme: DriftScheme,
    dt: f64,
}

impl<'a> BackwardStepper<'a> {
    fn new(derived: &'a DerivedMatrices, eta: &DVector<f64>, dt: f64, scheme: DriftScheme) -> Self {
        let d = derived.dim();
        let minus_a = -&derived.drift;
        let propagator = match scheme {
            DriftScheme::Euler => DMatrix::identity(d, d) + &minus_a * dt,
            DriftScheme::Rk4 => rk4_propagator(&minus_a, dt),
        };
        Self {
            derived,
            eta: diag(eta),
            sqrt_eta: diag(&eta.map(f64::sqrt)),
            propagator,
            scheme,
            dt,
        }
    }

    /// `ds = dY - 2 sqrt(η) B r̄ dt`, with the later-time `r̄`.
    fn innovation(&self, mean: &DVector<f64>, dy: DVectorView<'_, f64>) -> DVector<f64> {
        dy - &self.sqrt_eta * (&self.derived.backaction * mean) * (2.0 * self.dt)
    }

    fn covariance_step(
        &self,
        mean: &DVector<f64>,
        gamma: &DMatrix<f64>,
        dy: DVectorView<'_, f64>,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let ds = self.innovation(mean, dy);
        let gain = backward_response(gamma, self.derived) * &self.sqrt_eta;
        let mean = &self.propagator * mean + gain * ds;
        let gamma = symmetrize(&crate::linalg::rk4_matrix(gamma, self.dt, |g| {
            backward_rhs_unchecked(g, self.derived, &self.eta)
        }));
        (mean, gamma)
    }

    fn information_step(
        &self,
        lambda: &DMatrix<f64>,
        xi: &DVector<f64>,
        dy: DVectorView<'_, f64>,
    ) -> (DMatrix<f64>, DVector<f64>) {
        let h = self.dt;
        let f = |l: &DMatrix<f64>, x: &DVector<f64>| {
            (information_rhs_unchecked(l, self.derived, &self.eta), information_drift(l, x, self.derived, &self.eta))
        };
        let (l_next, x_drift) = match self.scheme {
            DriftScheme::Euler => {
                let (dl, dx) = f(lambda, xi);
                (lambda + dl * h, xi + dx * h)
            }
            DriftScheme::Rk4 => {
                let (l1, x1) = f(lambda, xi);
                let (l2, x2) = f(&(lambda + &l1 * (h / 2.0)), &(xi + &x1 * (h / 2.0)));
                let (l3, x3) = f(&(lambda + &l2 * (h / 2.0)), &(xi + &x2 * (h / 2.0)));
                let (l4, x4) = f(&(lambda + &l3 * h), &(xi + &x3 * h));
                (
                    lambda + (l1 + l2 * 2.0 + l3 * 2.0 + l4) * (h / 6.0),
                    xi + (x1 + x2 * 2.0 + x3 * 2.0 + x4) * (h / 6.0),
                )
            }
        };
        let noise = information_response(lambda, self.derived) * &self.sqrt_eta * dy;
        (symmetrize(&l_next), x_drift + noise)
    }
}
