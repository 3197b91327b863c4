//! Past-probability evaluation in the number basis.

use nalgebra::DVector;
use num_complex::Complex64;

use super::operators::CMatrix;
use super::state::FockOperator;
use crate::error::{Error, Result};

/// Harmonic-oscillator eigenfunctions `ψ_0(x) .. ψ_{n_max}(x)`.
pub fn hermite_functions(n_max: usize, x: f64) -> Vec<f64> {
    let mut psi = Vec::with_capacity(n_max + 1);
    psi.push(std::f64::consts::PI.powf(-0.25) * (-x * x / 2.0).exp());
    if n_max >= 1 {
        psi.push(2f64.sqrt() * x * psi[0]);
    }
    for n in 1..n_max {
        let next = (2.0 / (n + 1) as f64).sqrt() * x * psi[n] - (n as f64 / (n + 1) as f64).sqrt() * psi[n - 1];
        psi.push(next);
    }
    psi
}

/// `⟨n|x, θ⟩ = e^{iθn} ψ_n(x)` for the eigenstate of `q cos θ + p sin θ`.
pub fn quadrature_vector(n_max: usize, theta: f64, x: f64) -> DVector<Complex64> {
    let psi = hermite_functions(n_max, x);
    DVector::from_fn(n_max + 1, |n, _| Complex64::from_polar(psi[n], theta * n as f64))
}

fn expectation(v: &DVector<Complex64>, m: &CMatrix) -> f64 {
    (v.adjoint() * m * v)[(0, 0)].re
}

/// `⟨x,θ| X |x,θ⟩ / Tr X` on the given points.
pub fn quadrature_distribution(x: &FockOperator, theta: f64, xs: &[f64]) -> Vec<f64> {
    let tr = x.trace().re;
    xs.iter()
        .map(|&p| expectation(&quadrature_vector(x.n_max(), theta, p), x.matrix()) / tr)
        .collect()
}

/// Past density `∝ ⟨x|ρ|x⟩⟨x|E|x⟩` on a uniform grid, normalised so that its
/// Riemann sum over the grid is one.
pub fn past_quadrature_density(rho: &FockOperator, effect: &FockOperator, theta: f64, xs: &[f64]) -> Result<Vec<f64>> {
    if rho.n_max() != effect.n_max() {
        return Err(Error::shape("state and effect truncations differ"));
    }
    if xs.len() < 2 {
        return Err(Error::input("need at least two grid points"));
    }
    let h = xs[1] - xs[0];
    let raw: Vec<f64> = xs
        .iter()
        .map(|&p| {
            let v = quadrature_vector(rho.n_max(), theta, p);
            expectation(&v, rho.matrix()) * expectation(&v, effect.matrix())
        })
        .collect();
    let z: f64 = raw.iter().sum::<f64>() * h;
    if !(z > 0.0) {
        return Err(Error::Degenerate("past density vanishes on the grid".into()));
    }
    Ok(raw.into_iter().map(|v| v / z).collect())
}

/// `Pr(m) ∝ Tr(M_m ρ M_m† E)`, normalised over the supplied operators.
pub fn past_probability(rho: &FockOperator, effect: &FockOperator, operators: &[CMatrix]) -> Result<Vec<f64>> {
    let raw: Vec<f64> = operators
        .iter()
        .map(|m| (m * rho.matrix() * m.adjoint() * effect.matrix()).trace().re)
        .collect();
    let z: f64 = raw.iter().sum();
    if !(z > 0.0) {
        return Err(Error::Degenerate("every outcome has zero past probability".into()));
    }
    Ok(raw.into_iter().map(|v| v / z).collect())
}

/// Projectors `|n⟩⟨n|` onto each number state.
pub fn number_projectors(n_max: usize) -> Vec<CMatrix> {
    (0..=n_max)
        .map(|n| {
            let mut m = CMatrix::zeros(n_max + 1, n_max + 1);
            m[(n, n)] = Complex64::new(1.0, 0.0);
            m
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::GaussianMoments;
    use crate::retrodiction::gaussian_density;

    #[test]
    fn hermite_functions_are_orthonormal() {
        let n_max = 30;
        let h = 0.01;
        let xs: Vec<f64> = (0..2001).map(|i| -10.0 + i as f64 * h).collect();
        let table: Vec<Vec<f64>> = xs.iter().map(|&x| hermite_functions(n_max, x)).collect();
        for m in [0, 3, 17, 30] {
            for n in [0, 3, 17, 30] {
                let s: f64 = table.iter().map(|row| row[m] * row[n]).sum::<f64>() * h;
                let expected = if m == n { 1.0 } else { 0.0 };
                assert!((s - expected).abs() < 1e-10, "({m}, {n}): {s}");
            }
        }
    }

    #[test]
    fn rotated_quadrature_of_squeezed_state() {
        let g = GaussianMoments::squeezed(0.3, 0.5, [0.4, -0.6]).unwrap();
        let st = FockOperator::from_gaussian(&g, 50).unwrap();
        for theta in [0.0, 0.5, 1.9] {
            let m = g.marginal(theta).unwrap();
            let xs: Vec<f64> = (0..41).map(|i| -4.0 + 0.2 * i as f64).collect();
            let got = quadrature_distribution(&st, theta, &xs);
            for (x, p) in xs.iter().zip(got) {
                assert!((p - gaussian_density(m.mean, m.variance, *x)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn flat_effect_gives_born_rule() {
        let rho = FockOperator::thermal(0.7, 12);
        let flat = FockOperator::identity_effect(12);
        let pr = past_probability(&rho, &flat, &number_projectors(12)).unwrap();
        for (n, p) in pr.iter().enumerate() {
            assert!((p - rho.populations()[n]).abs() < 1e-14);
        }
    }

    #[test]
    fn orthogonal_pre_and_post_selection() {
        let rho = FockOperator::number_state(0, 6).unwrap();
        let eff = FockOperator::number_state(1, 6).unwrap();
        assert!(past_probability(&rho, &eff, &number_projectors(6)).is_err());
        let mix = FockOperator::thermal(1.0, 6);
        let pr = past_probability(&mix, &eff, &number_projectors(6)).unwrap();
        assert!((pr[1] - 1.0).abs() < 1e-15);
        assert_eq!(pr[0], 0.0);
    }
}
