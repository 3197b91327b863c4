//! Past quadrature distributions from a forward state and a backward effect.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::backward::BackwardTrajectory;
use crate::error::{Error, Result};
use crate::forward::ForwardTrajectory;
use crate::linalg::symmetrize;
use crate::phase::{marginal_variance, quadrature_mean, quadrature_spread, EffectMoments, GaussianMoments};
use crate::record::fmt_f64;

/// Retrodicted Gaussian distribution of `x_θ = q cos θ + p sin θ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PastDistribution {
    pub theta: f64,
    pub mean: f64,
    /// `Δ / 2`.
    pub variance: f64,
}

impl PastDistribution {
    /// The covariance-convention spread `Δ = 2 Var`.
    pub fn delta(&self) -> f64 {
        2.0 * self.variance
    }

    pub fn std(&self) -> f64 {
        self.variance.sqrt()
    }

    pub fn density(&self, x: f64) -> f64 {
        gaussian_density(self.mean, self.variance, x)
    }
}

/// Normal density with the given mean and variance.
pub fn gaussian_density(mean: f64, variance: f64, x: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * variance)).exp() / (2.0 * PI * variance).sqrt()
}

/// Marginal of a single-mode effect along `θ`: mean and spread `γ_θ` for a
/// finite covariance, otherwise precision and information `(λ_θ, ξ_θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EffectMarginal {
    Covariance { mean: f64, spread: f64 },
    Information { precision: f64, info: f64 },
}

impl EffectMarginal {
    /// Standard deviation of the effect's quadrature distribution
    /// (infinite where the effect is flat along `θ`).
    pub fn std(&self) -> f64 {
        match *self {
            EffectMarginal::Covariance { spread, .. } => (spread / 2.0).sqrt(),
            EffectMarginal::Information { precision, .. } => {
                if precision > 0.0 {
                    (0.5 / precision).sqrt()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            EffectMarginal::Covariance { mean, .. } => mean,
            EffectMarginal::Information { precision, info } => {
                if precision > 0.0 {
                    info / precision
                } else {
                    f64::NAN
                }
            }
        }
    }
}

fn require_single_mode(d: usize, what: &str) -> Result<()> {
    if d != 2 {
        return Err(Error::Unsupported(format!(
            "{what} has dimension {d}; select a single mode first"
        )));
    }
    Ok(())
}

pub fn effect_marginal(eff: &EffectMoments, theta: f64) -> Result<EffectMarginal> {
    require_single_mode(eff.dim(), "effect")?;
    match eff {
        EffectMoments::Covariance(m) => Ok(EffectMarginal::Covariance {
            mean: quadrature_mean(m.mean(), theta),
            spread: quadrature_spread(m.cov(), theta),
        }),
        EffectMoments::Information { precision, info } => {
            // rotate to (x_θ, x_θ+π/2) and integrate out the second coordinate
            let (s, c) = theta.sin_cos();
            let rot = DMatrix::from_row_slice(2, 2, &[c, s, -s, c]);
            let lam = symmetrize(&(&rot * precision * rot.transpose()));
            let xi: DVector<f64> = &rot * info;
            let (l, x) = crate::phase::schur_marginal(&lam, &xi, &[0], &[1]);
            Ok(EffectMarginal::Information { precision: l[(0, 0)], info: x[0] })
        }
    }
}

/// Past distribution of the quadrature `x_θ` for single-mode `ρ` and `E`.
///
/// A flat effect returns the forward marginal unchanged.
pub fn past_quadrature(rho: &GaussianMoments, eff: &EffectMoments, theta: f64) -> Result<PastDistribution> {
    require_single_mode(rho.dim(), "state")?;
    if eff.is_flat() {
        let m = marginal_variance(rho, theta)?;
        return Ok(PastDistribution { theta, mean: m.mean, variance: m.variance });
    }
    let m_rho = quadrature_mean(rho.mean(), theta);
    let s = quadrature_spread(rho.cov(), theta);
    match effect_marginal(eff, theta)? {
        EffectMarginal::Covariance { mean: m_e, spread: g } => {
            let total = s + g;
            if !(total > 0.0) {
                return Err(Error::Degenerate(format!(
                    "forward and effect spreads both vanish at θ = {theta}"
                )));
            }
            Ok(PastDistribution {
                theta,
                mean: (m_rho * g + m_e * s) / total,
                variance: s * g / total / 2.0,
            })
        }
        EffectMarginal::Information { precision, info } => {
            if !(s > 0.0) {
                return Ok(PastDistribution { theta, mean: m_rho, variance: 0.0 });
            }
            let p = 1.0 / s + precision;
            let q = m_rho / s + info;
            Ok(PastDistribution { theta, mean: q / p, variance: 0.5 / p })
        }
    }
}

/// Past distribution for one mode of multi-mode moments.
pub fn past_quadrature_mode(
    rho: &GaussianMoments,
    eff: &EffectMoments,
    mode: usize,
    theta: f64,
) -> Result<PastDistribution> {
    past_quadrature(&rho.select_mode(mode)?, &eff.select_mode(mode)?, theta)
}

/// One row of a polar uncertainty sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub theta: f64,
    pub std_forward: f64,
    pub std_backward: f64,
    pub std_past: f64,
}

/// `n` equally spaced angles on `[0, 2π)`.
pub fn theta_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| 2.0 * PI * i as f64 / n as f64).collect()
}

pub fn uncertainty_sweep(rho: &GaussianMoments, eff: &EffectMoments, thetas: &[f64]) -> Result<Vec<SweepPoint>> {
    if thetas.is_empty() {
        return Err(Error::input("angle grid is empty"));
    }
    thetas
        .iter()
        .map(|&theta| {
            let past = past_quadrature(rho, eff, theta)?;
            Ok(SweepPoint {
                theta,
                std_forward: (quadrature_spread(rho.cov(), theta) / 2.0).sqrt(),
                std_backward: effect_marginal(eff, theta)?.std(),
                std_past: past.std(),
            })
        })
        .collect()
}

pub fn sweep_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("theta,std_forward,std_backward,std_past\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(p.theta),
            fmt_f64(p.std_forward),
            fmt_f64(p.std_backward),
            fmt_f64(p.std_past)
        );
    }
    out
}

/// Past distributions along a pair of trajectories sharing one grid.
pub fn retrodict_path(
    forward: &ForwardTrajectory,
    backward: &BackwardTrajectory,
    mode: usize,
    theta: f64,
) -> Result<Vec<PastDistribution>> {
    if forward.grid() != backward.grid() {
        return Err(Error::shape("forward and backward trajectories use different grids"));
    }
    let single = forward.spec().layout().n_modes() == 1;
    forward
        .states()
        .iter()
        .zip(backward.effects())
        .map(|(rho, eff)| {
            if single {
                past_quadrature(rho, eff, theta)
            } else {
                past_quadrature_mode(rho, eff, mode, theta)
            }
        })
        .collect()
}

/// `Tr(ρ_a ρ_b)` for two Gaussian states.
pub fn gaussian_overlap(a: &GaussianMoments, b: &GaussianMoments) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("dimensions {} and {} differ", a.dim(), b.dim())));
    }
    let sum = a.cov() + b.cov();
    let half = &sum * 0.5;
    let det = half.determinant();
    let inv = sum.clone().try_inverse().filter(|_| det > 0.0 && det.is_finite());
    let Some(inv) = inv else {
        return Err(Error::Singular("sum of covariances is singular".into()));
    };
    let delta = a.mean() - b.mean();
    let quad = (delta.transpose() * inv * &delta)[(0, 0)];
    Ok(det.powf(-0.5) * (-quad).exp())
}
