//! Dense operators on the truncated number basis.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::operators::{annihilation, build_mode_operators, CMatrix};
use crate::error::{Error, Result};
use crate::phase::GaussianMoments;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Density,
    Effect,
    Generic,
}

/// A single-mode operator on levels `0..=n_max`.
#[derive(Debug, Clone)]
pub struct FockOperator {
    matrix: CMatrix,
    role: Role,
}

impl FockOperator {
    pub fn new(matrix: CMatrix, role: Role) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() < 2 {
            return Err(Error::shape(format!("operator is {:?}", matrix.shape())));
        }
        Ok(Self { matrix, role })
    }

    pub(crate) fn from_matrix_unchecked(matrix: CMatrix, role: Role) -> Self {
        Self { matrix, role }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.role = role;
        self
    }

    pub fn n_max(&self) -> usize {
        self.matrix.nrows() - 1
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    /// Diagonal in the number basis divided by the trace.
    pub fn populations(&self) -> Vec<f64> {
        let tr = self.trace().re;
        (0..self.matrix.nrows()).map(|n| self.matrix[(n, n)].re / tr).collect()
    }

    /// Normalised population of the two highest levels.
    pub fn top_population(&self) -> f64 {
        let pops = self.populations();
        pops[pops.len() - 2..].iter().sum()
    }

    /// Hermiticity, trace and positivity checks for the tagged role.
    pub fn validate(&self) -> Result<()> {
        let herm = (&self.matrix - self.matrix.adjoint()).norm();
        if herm > 1e-8 {
            return Err(Error::input(format!("operator is not Hermitian (deviation {herm:.2e})")));
        }
        if self.role == Role::Generic {
            return Ok(());
        }
        if self.role == Role::Density && (self.trace() - 1.0).norm() > 1e-8 {
            return Err(Error::input(format!("density trace is {}", self.trace())));
        }
        let eig = self.matrix.clone().symmetric_eigenvalues();
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-8 {
            return Err(Error::input(format!("operator is not positive (min eigenvalue {min:.2e})")));
        }
        Ok(())
    }

    pub fn number_state(n: usize, n_max: usize) -> Result<Self> {
        if n > n_max {
            return Err(Error::input(format!("level {n} above truncation {n_max}")));
        }
        let mut m = CMatrix::zeros(n_max + 1, n_max + 1);
        m[(n, n)] = Complex64::new(1.0, 0.0);
        Ok(Self { matrix: m, role: Role::Density })
    }

    /// `|α⟩⟨α|` from its number-basis expansion (not renormalised).
    pub fn coherent(alpha: Complex64, n_max: usize) -> Self {
        let mut amp = vec![Complex64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0)];
        for n in 1..=n_max {
            let prev = amp[n - 1];
            amp.push(prev * alpha / (n as f64).sqrt());
        }
        let v = DVector::from_vec(amp);
        Self { matrix: &v * v.adjoint(), role: Role::Density }
    }

    /// Thermal state with mean occupation `nbar` (not renormalised).
    pub fn thermal(nbar: f64, n_max: usize) -> Self {
        let ratio = nbar / (nbar + 1.0);
        let diag = DVector::from_fn(n_max + 1, |n, _| Complex64::new(ratio.powi(n as i32) / (nbar + 1.0), 0.0));
        Self { matrix: CMatrix::from_diagonal(&diag), role: Role::Density }
    }

    /// Effect `E ∝ 1` on the truncated space, trace one.
    pub fn identity_effect(n_max: usize) -> Self {
        let n = n_max + 1;
        Self { matrix: CMatrix::identity(n, n) / Complex64::new(n as f64, 0.0), role: Role::Effect }
    }

    /// Single-mode Gaussian state in the number basis.
    ///
    /// Built as displacement · squeeze/rotation · thermal on a padded space,
    /// then cropped and renormalised.
    pub fn from_gaussian(m: &GaussianMoments, n_max: usize) -> Result<Self> {
        if m.dim() != 2 {
            return Err(Error::Unsupported("number-basis states are single-mode".into()));
        }
        let cov = m.cov();
        let nu = cov.determinant().sqrt();
        if !(nu >= 1.0 - 1e-10) {
            return Err(Error::input(format!("covariance is unphysical (symplectic eigenvalue {nu})")));
        }
        let nu = nu.max(1.0);
        let pad = n_max + 1 + (n_max / 2).max(40);
        let padded_max = pad - 1;
        let ops = build_mode_operators(padded_max);

        let mut rho = Self::thermal((nu - 1.0) / 2.0, padded_max).matrix;

        // U r U† = S r with S = (σ/ν)^{1/2}; generator ½ rᵀ K r, K = -Ω log S.
        let eig = (cov / nu).symmetric_eigen();
        let log_s = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 0.5 * v.ln()))
            * eig.eigenvectors.transpose();
        let omega = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let k = -(&omega * log_s);
        let r = [&ops.q, &ops.p];
        let mut gen = CMatrix::zeros(pad, pad);
        for i in 0..2 {
            for j in 0..2 {
                if k[(i, j)] != 0.0 {
                    gen += r[i] * r[j] * Complex64::new(0.5 * k[(i, j)], 0.0);
                }
            }
        }
        if gen.norm() > 0.0 {
            let u = unitary_from_generator(&gen);
            rho = &u * rho * u.adjoint();
        }

        let alpha = Complex64::new(m.mean()[0], m.mean()[1]) / 2f64.sqrt();
        if alpha.norm() > 0.0 {
            let a = annihilation(padded_max);
            let g = (a.adjoint() * alpha - &a * alpha.conj()) * Complex64::new(0.0, 1.0);
            let d = unitary_from_generator(&g);
            rho = &d * rho * d.adjoint();
        }

        let n = n_max + 1;
        let mut cropped = rho.view((0, 0), (n, n)).into_owned();
        cropped = (&cropped + cropped.adjoint()) * Complex64::new(0.5, 0.0);
        let tr = cropped.trace().re;
        cropped /= Complex64::new(tr, 0.0);
        Ok(Self { matrix: cropped, role: Role::Density })
    }
}

/// `exp(-i G)` for Hermitian `G`.
fn unitary_from_generator(g: &CMatrix) -> CMatrix {
    let herm = (g + g.adjoint()) * Complex64::new(0.5, 0.0);
    let eig = herm.symmetric_eigen();
    let phases = eig.eigenvalues.map(|l| Complex64::new(0.0, -l).exp());
    &eig.eigenvectors * CMatrix::from_diagonal(&phases) * eig.eigenvectors.adjoint()
}

/// Trace-normalised quadrature moments in the `vacuum = I` convention,
/// evaluated with the untruncated commutation relation.
pub fn extract_moments(x: &FockOperator) -> Result<GaussianMoments> {
    let m = x.matrix();
    let tr = m.trace();
    if tr.norm() == 0.0 {
        return Err(Error::input("operator has zero trace"));
    }
    let n = m.nrows();
    let mut a1 = Complex64::new(0.0, 0.0);
    let mut a2 = Complex64::new(0.0, 0.0);
    let mut num = Complex64::new(0.0, 0.0);
    for k in 0..n {
        num += m[(k, k)] * k as f64;
        if k + 1 < n {
            a1 += m[(k + 1, k)] * ((k + 1) as f64).sqrt();
        }
        if k + 2 < n {
            a2 += m[(k + 2, k)] * (((k + 1) * (k + 2)) as f64).sqrt();
        }
    }
    let (a1, a2, num) = (a1 / tr, a2 / tr, (num / tr).re);
    let mq = 2f64.sqrt() * a1.re;
    let mp = 2f64.sqrt() * a1.im;
    let qq = 2.0 * (a2.re + num + 0.5) - 2.0 * mq * mq;
    let pp = 2.0 * (-a2.re + num + 0.5) - 2.0 * mp * mp;
    let qp = 2.0 * a2.im - 2.0 * mq * mp;
    Ok(GaussianMoments::from_parts_unchecked(
        DVector::from_vec(vec![mq, mp]),
        DMatrix::from_row_slice(2, 2, &[qq, qp, qp, pp]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::QuadratureLayout;

    fn close(a: &GaussianMoments, b: &GaussianMoments, tol: f64) -> bool {
        (a.mean() - b.mean()).abs().max() < tol && (a.cov() - b.cov()).abs().max() < tol
    }

    #[test]
    fn coherent_expectation_of_a() {
        let alpha = Complex64::new(0.5, 0.0);
        let st = FockOperator::coherent(alpha, 40);
        let a = annihilation(40);
        assert!(((&a * st.matrix()).trace() - alpha).norm() < 1e-10);
    }

    #[test]
    fn moment_examples() {
        let vac = FockOperator::number_state(0, 20).unwrap();
        assert!(close(&extract_moments(&vac).unwrap(), &GaussianMoments::vacuum(QuadratureLayout::single_mode()), 1e-15));
        let coh = FockOperator::coherent(Complex64::new(1.0, 0.0), 40);
        let m = extract_moments(&coh).unwrap();
        assert!(close(&m, &GaussianMoments::coherent(Complex64::new(1.0, 0.0)), 1e-10));
        let th = FockOperator::thermal(2.0, 200);
        let m = extract_moments(&th).unwrap();
        assert!((m.cov() - DMatrix::identity(2, 2) * 5.0).abs().max() < 1e-10);
    }

    #[test]
    fn zero_trace_rejected() {
        let z = FockOperator::from_matrix_unchecked(CMatrix::zeros(4, 4), Role::Generic);
        assert!(extract_moments(&z).is_err());
    }

    #[test]
    fn gaussian_round_trip() {
        let cases = [
            GaussianMoments::vacuum(QuadratureLayout::single_mode()),
            GaussianMoments::coherent(Complex64::new(1.2, -0.7)),
            GaussianMoments::thermal(1.5, [0.8, 0.3]).unwrap(),
            GaussianMoments::squeezed(0.4, 0.6, [-0.5, 1.0]).unwrap(),
            GaussianMoments::new(
                DVector::from_vec(vec![0.4, -0.2]),
                DMatrix::from_row_slice(2, 2, &[3.0, 0.7, 0.7, 1.8]),
            )
            .unwrap(),
        ];
        for g in cases {
            let st = FockOperator::from_gaussian(&g, 60).unwrap();
            st.validate().unwrap();
            let back = extract_moments(&st).unwrap();
            assert!(close(&back, &g, 1e-8), "{g:?} vs {back:?}");
        }
    }

    #[test]
    fn thermal_from_gaussian_matches_diagonal() {
        let g = GaussianMoments::thermal(2.0, [0.0, 0.0]).unwrap();
        let st = FockOperator::from_gaussian(&g, 80).unwrap();
        let direct = FockOperator::thermal(2.0, 80);
        for n in 0..20 {
            assert!((st.matrix()[(n, n)] - direct.matrix()[(n, n)]).norm() < 1e-10);
        }
    }

    #[test]
    fn top_population_of_truncated_thermal() {
        let st = FockOperator::thermal(1.0, 10);
        let tail = st.top_population();
        let tr: f64 = (0..=10).map(|n| 0.5f64.powi(n + 1)).sum();
        assert!((tail - (0.5f64.powi(10) + 0.5f64.powi(11)) / tr).abs() < 1e-15);
    }
}
