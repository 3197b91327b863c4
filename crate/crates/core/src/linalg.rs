//! Small dense helpers shared by the Gaussian integrators.

use nalgebra::{DMatrix, DVector};

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// One classical fourth-order step for an autonomous matrix ODE.
pub(crate) fn rk4_matrix<F>(y: &DMatrix<f64>, h: f64, f: F) -> DMatrix<f64>
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let k1 = f(y);
    let k2 = f(&(y + &k1 * (h / 2.0)));
    let k3 = f(&(y + &k2 * (h / 2.0)));
    let k4 = f(&(y + &k3 * h));
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

/// Fourth-order Taylor propagator `I + hA + (hA)^2/2 + (hA)^3/6 + (hA)^4/24`,
/// which is exactly what one RK4 step does to a linear autonomous ODE.
pub(crate) fn rk4_propagator(a: &DMatrix<f64>, h: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let ha = a * h;
    let mut term = DMatrix::<f64>::identity(n, n);
    let mut acc = term.clone();
    for k in 1..=4 {
        term = &term * &ha / (k as f64);
        acc += &term;
    }
    acc
}

/// Diagonal matrix from a vector.
pub(crate) fn diag(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(v)
}

/// Eigenvalue spread of a symmetric matrix, `(min, max)`.
pub(crate) fn symmetric_eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = m.clone().symmetric_eigenvalues();
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Inverse of a symmetric matrix, refusing anything with condition number
/// above `max_condition`.
pub(crate) fn checked_symmetric_inverse(
    m: &DMatrix<f64>,
    max_condition: f64,
) -> Option<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Some(m.clone());
    }
    let eig = m.clone().symmetric_eigen();
    let abs: Vec<f64> = eig.eigenvalues.iter().map(|v| v.abs()).collect();
    let lo = abs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = abs.iter().cloned().fold(0.0f64, f64::max);
    if !(lo > 0.0) || !lo.is_finite() || hi / lo >= max_condition {
        return None;
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    let v = &eig.eigenvectors;
    Some(symmetrize(&(v * inv_diag * v.transpose())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn propagator_matches_rk4_on_linear_ode() {
        let a = DMatrix::from_row_slice(2, 2, &[-0.5, 6.0, -6.0, -0.5]);
        let y = DMatrix::from_row_slice(2, 1, &[5.0, 0.0]);
        let by_rk4 = rk4_matrix(&y, 1e-2, |x| &a * x);
        let by_prop = rk4_propagator(&a, 1e-2) * &y;
        assert!((by_rk4 - by_prop).abs().max() < 1e-14);
    }

    #[test]
    fn refuses_singular_inverse() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert!(checked_symmetric_inverse(&m, 1e12).is_none());
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let inv = checked_symmetric_inverse(&m, 1e12).unwrap();
        assert!((&m * inv - DMatrix::identity(2, 2)).abs().max() < 1e-12);
    }
}
