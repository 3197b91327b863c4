//! Phase-space primitives: quadrature layout, symplectic form and Gaussian
//! moment containers.
//!
//! Quadratures are ordered `(q1, p1, ..., qn, pn)` and covariances use the
//! anticommutator convention `cov_jk = <{r_j, r_k}> - 2 <r_j><r_k>`, so the
//! vacuum has `cov = I` and a single quadrature has variance `cov_jj / 2`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::max_asymmetry;

/// Entry-wise tolerance for treating a covariance as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Smallest admissible eigenvalue of `cov + i*Omega` for a physical state.
pub const PHYSICAL_FLOOR: f64 = -1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QuadratureLayout {
    n_modes: usize,
}

impl QuadratureLayout {
    pub fn new(n_modes: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(Error::input("a quadrature layout needs at least one mode"));
        }
        Ok(Self { n_modes })
    }

    pub fn single_mode() -> Self {
        Self { n_modes: 1 }
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    /// Phase-space dimension `2 * n_modes`.
    pub fn dim(&self) -> usize {
        2 * self.n_modes
    }

    pub fn q_index(&self, mode: usize) -> usize {
        2 * mode
    }

    pub fn p_index(&self, mode: usize) -> usize {
        2 * mode + 1
    }

    pub(crate) fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.n_modes {
            return Err(Error::input(format!(
                "mode {mode} out of range for {} mode(s)",
                self.n_modes
            )));
        }
        Ok(())
    }
}

/// The matrix `Omega` with `i Omega_jk = [r_j, r_k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymplecticForm(DMatrix<f64>);

impl SymplecticForm {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }
}

/// Block-diagonal symplectic form with `[[0, 1], [-1, 0]]` per mode.
pub fn build_symplectic(layout: QuadratureLayout) -> SymplecticForm {
    let d = layout.dim();
    let mut omega = DMatrix::zeros(d, d);
    for mode in 0..layout.n_modes() {
        let (q, p) = (layout.q_index(mode), layout.p_index(mode));
        omega[(q, p)] = 1.0;
        omega[(p, q)] = -1.0;
    }
    SymplecticForm(omega)
}

/// Mean vector and covariance matrix of a Gaussian phase-space distribution.
///
/// Used for density matrices and, in covariance form, for effect matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    layout: QuadratureLayout,
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianMoments {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if d == 0 || d % 2 != 0 {
            return Err(Error::shape(format!(
                "phase-space dimension must be even and positive, got {d}"
            )));
        }
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::shape(format!(
                "covariance is {}x{}, expected {d}x{d}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("moments must be finite"));
        }
        let asym = max_asymmetry(&cov);
        if asym > SYMMETRY_TOL {
            return Err(Error::input(format!(
                "covariance is not symmetric (max |c_ij - c_ji| = {asym:.3e})"
            )));
        }
        let layout = QuadratureLayout::new(d / 2)?;
        Ok(Self { layout, mean, cov })
    }

    pub(crate) fn from_parts_unchecked(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        let layout = QuadratureLayout { n_modes: mean.len() / 2 };
        Self { layout, mean, cov }
    }

    pub fn vacuum(layout: QuadratureLayout) -> Self {
        let d = layout.dim();
        Self { layout, mean: DVector::zeros(d), cov: DMatrix::identity(d, d) }
    }

    /// Single-mode coherent state `|alpha>`: mean `sqrt(2) (Re alpha, Im alpha)`.
    pub fn coherent(alpha: Complex64) -> Self {
        let s = std::f64::consts::SQRT_2;
        Self {
            layout: QuadratureLayout::single_mode(),
            mean: DVector::from_vec(vec![s * alpha.re, s * alpha.im]),
            cov: DMatrix::identity(2, 2),
        }
    }

    /// Single-mode thermal state with mean occupation `nbar`, displaced to `mean`.
    pub fn thermal(nbar: f64, mean: [f64; 2]) -> Result<Self> {
        if !(nbar >= 0.0) {
            return Err(Error::input(format!("thermal occupation must be >= 0, got {nbar}")));
        }
        Self::new(
            DVector::from_vec(mean.to_vec()),
            DMatrix::identity(2, 2) * (2.0 * nbar + 1.0),
        )
    }

    /// Pure single-mode squeezed state: the quadrature `x_angle` has
    /// covariance `exp(-2 r)` and its conjugate `exp(2 r)`.
    pub fn squeezed(r: f64, angle: f64, mean: [f64; 2]) -> Result<Self> {
        if !r.is_finite() || !angle.is_finite() {
            return Err(Error::input("squeezing parameters must be finite"));
        }
        let (s, c) = angle.sin_cos();
        let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let base = DMatrix::from_diagonal(&DVector::from_vec(vec![(-2.0 * r).exp(), (2.0 * r).exp()]));
        let cov = crate::linalg::symmetrize(&(&rot * base * rot.transpose()));
        Self::new(DVector::from_vec(mean.to_vec()), cov)
    }

    pub fn layout(&self) -> QuadratureLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    /// Reduced moments of one mode.
    pub fn select_mode(&self, mode: usize) -> Result<GaussianMoments> {
        self.layout.check_mode(mode)?;
        let (q, p) = (self.layout.q_index(mode), self.layout.p_index(mode));
        let mean = DVector::from_vec(vec![self.mean[q], self.mean[p]]);
        let cov = DMatrix::from_row_slice(
            2,
            2,
            &[self.cov[(q, q)], self.cov[(q, p)], self.cov[(p, q)], self.cov[(p, p)]],
        );
        Ok(Self::from_parts_unchecked(mean, cov))
    }

    pub fn check_physical(&self) -> Physicality {
        check_physical(self)
    }

    pub fn marginal(&self, theta: f64) -> Result<QuadratureMarginal> {
        marginal_variance(self, theta)
    }
}

/// Result of the uncertainty-relation test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Physicality {
    pub physical: bool,
    /// Smallest eigenvalue of the Hermitian matrix `cov + i Omega`.
    pub min_eigenvalue: f64,
}

/// Smallest eigenvalue of `cov + i Omega` for a symmetric covariance.
pub fn uncertainty_min_eigenvalue(cov: &DMatrix<f64>) -> f64 {
    let d = cov.nrows();
    let omega = build_symplectic(QuadratureLayout { n_modes: d / 2 }).into_matrix();
    let h = DMatrix::from_fn(d, d, |i, j| Complex64::new(cov[(i, j)], omega[(i, j)]));
    h.symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

pub fn check_physical(m: &GaussianMoments) -> Physicality {
    let min_eigenvalue = uncertainty_min_eigenvalue(&m.cov);
    Physicality { physical: min_eigenvalue >= PHYSICAL_FLOOR, min_eigenvalue }
}

/// Validates raw matrices before running the physicality test.
pub fn check_physical_cov(cov: &DMatrix<f64>) -> Result<Physicality> {
    if cov.nrows() != cov.ncols() || cov.nrows() % 2 != 0 || cov.nrows() == 0 {
        return Err(Error::shape(format!(
            "covariance must be square with even size, got {}x{}",
            cov.nrows(),
            cov.ncols()
        )));
    }
    let asym = max_asymmetry(cov);
    if asym > SYMMETRY_TOL {
        return Err(Error::input(format!("covariance is not symmetric ({asym:.3e})")));
    }
    let min_eigenvalue = uncertainty_min_eigenvalue(cov);
    Ok(Physicality { physical: min_eigenvalue >= PHYSICAL_FLOOR, min_eigenvalue })
}

/// Distribution of `x_theta = q cos(theta) + p sin(theta)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureMarginal {
    pub mean: f64,
    pub variance: f64,
}

/// `u^T cov u` with `u = (cos theta, sin theta)`: twice the quadrature variance.
pub fn quadrature_spread(cov: &DMatrix<f64>, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    c * c * cov[(0, 0)] + s * c * (cov[(0, 1)] + cov[(1, 0)]) + s * s * cov[(1, 1)]
}

pub fn quadrature_mean(mean: &DVector<f64>, theta: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    mean[0] * c + mean[1] * s
}

pub fn marginal_variance(m: &GaussianMoments, theta: f64) -> Result<QuadratureMarginal> {
    if m.dim() != 2 {
        return Err(Error::Unsupported(format!(
            "quadrature marginals need single-mode moments (got dimension {}); select a mode first",
            m.dim()
        )));
    }
    Ok(QuadratureMarginal {
        mean: quadrature_mean(&m.mean, theta),
        variance: quadrature_spread(&m.cov, theta) / 2.0,
    })
}

/// Gaussian effect-matrix moments.
///
/// The identity effect has no finite covariance, so it lives in information
/// form with zero precision.
#[derive(Debug, Clone, PartialEq)]
pub enum EffectMoments {
    Covariance(GaussianMoments),
    /// `precision = gamma^-1`, `info = precision * mean`.
    Information { precision: DMatrix<f64>, info: DVector<f64> },
}

impl EffectMoments {
    pub fn dim(&self) -> usize {
        match self {
            EffectMoments::Covariance(m) => m.dim(),
            EffectMoments::Information { info, .. } => info.len(),
        }
    }

    /// True for the exactly flat (identity) effect.
    pub fn is_flat(&self) -> bool {
        match self {
            EffectMoments::Covariance(_) => false,
            EffectMoments::Information { precision, info } => {
                precision.iter().all(|v| *v == 0.0) && info.iter().all(|v| *v == 0.0)
            }
        }
    }

    /// Restricts to one mode. In information form this marginalises the
    /// other modes via a Schur complement.
    pub fn select_mode(&self, mode: usize) -> Result<EffectMoments> {
        match self {
            EffectMoments::Covariance(m) => Ok(EffectMoments::Covariance(m.select_mode(mode)?)),
            EffectMoments::Information { precision, info } => {
                let d = info.len();
                QuadratureLayout::new(d / 2)?.check_mode(mode)?;
                let keep = [2 * mode, 2 * mode + 1];
                let rest: Vec<usize> = (0..d).filter(|i| !keep.contains(i)).collect();
                let (lam, xi) = schur_marginal(precision, info, &keep, &rest);
                Ok(EffectMoments::Information { precision: lam, info: xi })
            }
        }
    }
}

/// Marginal precision/information of the `keep` coordinates after
/// integrating out `rest`. Directions of `rest` with zero precision are flat
/// and drop out (pseudo-inverse).
pub(crate) fn schur_marginal(
    precision: &DMatrix<f64>,
    info: &DVector<f64>,
    keep: &[usize],
    rest: &[usize],
) -> (DMatrix<f64>, DVector<f64>) {
    let k = keep.len();
    let r = rest.len();
    let lkk = DMatrix::from_fn(k, k, |i, j| precision[(keep[i], keep[j])]);
    let xk = DVector::from_fn(k, |i, _| info[keep[i]]);
    if r == 0 {
        return (lkk, xk);
    }
    let lkr = DMatrix::from_fn(k, r, |i, j| precision[(keep[i], rest[j])]);
    let lrr = DMatrix::from_fn(r, r, |i, j| precision[(rest[i], rest[j])]);
    let xr = DVector::from_fn(r, |i, _| info[rest[i]]);
    let scale = lrr.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return (lkk, xk);
    }
    let pinv = lrr
        .clone()
        .pseudo_inverse(scale * 1e-12)
        .unwrap_or_else(|_| DMatrix::zeros(r, r));
    let lam = &lkk - &lkr * &pinv * lkr.transpose();
    let xi = &xk - &lkr * &pinv * xr;
    (crate::linalg::symmetrize(&lam), xi)
}
