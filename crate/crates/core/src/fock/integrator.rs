//! Stochastic master-equation integration in the number basis.
//!
//! The deterministic generator is advanced with RK4 and the measurement
//! term with either Euler-Maruyama or the Milstein correction. Each grid step
//! can be split into substeps whose increments are filled in with a
//! Brownian bridge, so the sum over a grid step reproduces the given
//! increment exactly.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::operators::{build_mode_operators, CMatrix, Sparse};
use super::state::{extract_moments, FockOperator, Role};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::phase::GaussianMoments;
use crate::record::{MeasurementRecord, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseScheme {
    EulerMaruyama,
    Milstein,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub n_max: usize,
    pub renormalize: bool,
    /// Substeps per grid step.
    pub substeps: usize,
    pub noise: NoiseScheme,
    /// Limit on the normalised population of the two highest levels.
    pub leak_tol: f64,
    /// Largest trace deviation tolerated in a single step.
    pub trace_tol: f64,
    /// Seed for the Brownian-bridge fill-in between grid points.
    pub bridge_seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_max: 60,
            renormalize: true,
            substeps: 1,
            noise: NoiseScheme::Milstein,
            leak_tol: 1e-6,
            trace_tol: 1e-4,
            bridge_seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct Channel {
    c: Sparse,
    cdag: Sparse,
    /// `c c† - c† c`, for the backward trace correction.
    commutator: Sparse,
    sqrt_eta: f64,
}

/// A single-mode model rendered as truncated operators.
#[derive(Debug, Clone)]
pub struct OracleSystem {
    config: OracleConfig,
    /// `-iH - ½ Σ c†c` and its adjoint.
    k_fwd: Sparse,
    k_fwd_dag: Sparse,
    /// `iH - ½ Σ c†c` and its adjoint.
    k_bwd: Sparse,
    k_bwd_dag: Sparse,
    channels: Vec<Channel>,
}

fn axpy(y: &mut CMatrix, a: f64, x: &CMatrix) {
    for (yv, xv) in y.iter_mut().zip(x.iter()) {
        *yv += xv * a;
    }
}

fn hermitize(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

fn rk4<F: Fn(&CMatrix) -> CMatrix>(y: &CMatrix, h: f64, f: F) -> CMatrix {
    let k1 = f(y);
    let mut tmp = y.clone();
    axpy(&mut tmp, h / 2.0, &k1);
    let k2 = f(&tmp);
    tmp.copy_from(y);
    axpy(&mut tmp, h / 2.0, &k2);
    let k3 = f(&tmp);
    tmp.copy_from(y);
    axpy(&mut tmp, h, &k3);
    let k4 = f(&tmp);
    let mut out = y.clone();
    axpy(&mut out, h / 6.0, &k1);
    axpy(&mut out, h / 3.0, &k2);
    axpy(&mut out, h / 3.0, &k3);
    axpy(&mut out, h / 6.0, &k4);
    out
}

impl OracleSystem {
    pub fn new(spec: &ModelSpec, config: OracleConfig) -> Result<Self> {
        if spec.dim() != 2 {
            return Err(Error::Unsupported("the number-basis oracle is single-mode".into()));
        }
        if config.n_max < 4 {
            return Err(Error::input(format!("n_max = {} is below the minimum of 4", config.n_max)));
        }
        if config.substeps == 0 {
            return Err(Error::input("substeps must be at least 1"));
        }
        let ops = build_mode_operators(config.n_max);
        let r = [&ops.q, &ops.p];
        let n = config.n_max + 1;
        let mut h = CMatrix::zeros(n, n);
        for i in 0..2 {
            for j in 0..2 {
                let v = spec.hamiltonian()[(i, j)];
                if v != 0.0 {
                    h += r[i] * r[j] * Complex64::new(0.5 * v, 0.0);
                }
            }
        }
        let h = hermitize(&h);
        let mut dissipator = CMatrix::zeros(n, n);
        let mut channels = Vec::new();
        for row in 0..spec.n_channels() {
            let coeff = spec.coupling().row(row);
            let c = &ops.q * coeff[0] + &ops.p * coeff[1];
            let cdag = c.adjoint();
            let cdc = &cdag * &c;
            dissipator += &cdc;
            channels.push(Channel {
                commutator: Sparse::from_dense(&(&c * &cdag - &cdc)),
                c: Sparse::from_dense(&c),
                cdag: Sparse::from_dense(&cdag),
                sqrt_eta: spec.efficiencies()[row].sqrt(),
            });
        }
        let i = Complex64::new(0.0, 1.0);
        let half = Complex64::new(0.5, 0.0);
        let k_fwd = -(&h * i) - &dissipator * half;
        let k_bwd = &h * i - &dissipator * half;
        Ok(Self {
            config,
            k_fwd_dag: Sparse::from_dense(&k_fwd.adjoint()),
            k_fwd: Sparse::from_dense(&k_fwd),
            k_bwd_dag: Sparse::from_dense(&k_bwd.adjoint()),
            k_bwd: Sparse::from_dense(&k_bwd),
            channels,
        })
    }

    pub fn config(&self) -> &OracleConfig {
        &self.config
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// `-i[H, ρ] + Σ (c ρ c† - ½{c†c, ρ})`.
    pub fn forward_generator(&self, rho: &CMatrix) -> CMatrix {
        let one = Complex64::new(1.0, 0.0);
        let mut out = self.k_fwd.lmul(rho);
        self.k_fwd_dag.rmul_acc(rho, one, &mut out);
        for ch in &self.channels {
            let tmp = ch.c.lmul(rho);
            ch.cdag.rmul_acc(&tmp, one, &mut out);
        }
        out
    }

    /// `i[H, E] + Σ (c† E c - ½{c†c, E}) - Σ (⟨c c†⟩ - ⟨c† c⟩) E`.
    pub fn backward_generator(&self, e: &CMatrix) -> CMatrix {
        let one = Complex64::new(1.0, 0.0);
        let mut out = self.k_bwd.lmul(e);
        self.k_bwd_dag.rmul_acc(e, one, &mut out);
        let tr = e.trace();
        let mut shift = Complex64::new(0.0, 0.0);
        for ch in &self.channels {
            let tmp = ch.cdag.lmul(e);
            ch.c.rmul_acc(&tmp, one, &mut out);
            shift += ch.commutator.trace_with(e) / tr;
        }
        axpy(&mut out, -shift.re, e);
        out
    }

    /// `√η (L X + X L† - Tr((L + L†) X) ρ - e X)` with `L` either `c`
    /// (forward) or `c†` (backward) and `e = Tr((L + L†) ρ)`.
    fn noise_derivative(l: &Sparse, l_dag: &Sparse, sqrt_eta: f64, state: &CMatrix, e: f64, x: &CMatrix) -> CMatrix {
        let one = Complex64::new(1.0, 0.0);
        let mut out = l.lmul(x);
        l_dag.rmul_acc(x, one, &mut out);
        let tx = 2.0 * l.trace_with(x).re;
        axpy(&mut out, -tx, state);
        axpy(&mut out, -e, x);
        out * Complex64::new(sqrt_eta, 0.0)
    }

    fn stochastic_update(&self, state: &CMatrix, mut next: CMatrix, backward: bool, incr: &[f64], dt: f64) -> CMatrix {
        let ops: Vec<(&Sparse, &Sparse, f64, f64)> = self
            .channels
            .iter()
            .map(|ch| {
                let (l, l_dag) = if backward { (&ch.cdag, &ch.c) } else { (&ch.c, &ch.cdag) };
                let e = 2.0 * l.trace_with(state).re;
                (l, l_dag, ch.sqrt_eta, e)
            })
            .collect();
        let mut b = Vec::with_capacity(ops.len());
        for &(l, l_dag, s, e) in &ops {
            if s == 0.0 {
                b.push(None);
                continue;
            }
            let one = Complex64::new(1.0, 0.0);
            let mut bh = l.lmul(state);
            l_dag.rmul_acc(state, one, &mut bh);
            axpy(&mut bh, -e, state);
            bh *= Complex64::new(s, 0.0);
            b.push(Some(bh));
        }
        for (h, bh) in b.iter().enumerate() {
            if let Some(bh) = bh {
                axpy(&mut next, incr[h], bh);
            }
        }
        if self.config.noise == NoiseScheme::Milstein {
            for (h, &(l, l_dag, s, e)) in ops.iter().enumerate() {
                if s == 0.0 {
                    continue;
                }
                for (k, bk) in b.iter().enumerate() {
                    let Some(bk) = bk else { continue };
                    let w = incr[h] * incr[k] - if h == k { dt } else { 0.0 };
                    let d = Self::noise_derivative(l, l_dag, s, state, e, bk);
                    axpy(&mut next, 0.5 * w, &d);
                }
            }
        }
        next
    }

    fn finish(&self, m: CMatrix, t: f64) -> Result<CMatrix> {
        let mut m = hermitize(&m);
        let tr = m.trace().re;
        if !tr.is_finite() || (tr - 1.0).abs() > self.config.trace_tol {
            return Err(Error::Instability { t, reason: format!("trace drifted to {tr:.6e}") });
        }
        if self.config.renormalize {
            m /= Complex64::new(tr, 0.0);
        }
        Ok(m)
    }

    /// One step of the conditioned forward equation driven by the
    /// innovations `dw` (one per channel).
    pub fn forward_sme_step(&self, rho: &CMatrix, dw: &[f64], dt: f64) -> Result<CMatrix> {
        self.forward_step_at(rho, dw, dt, f64::NAN)
    }

    fn forward_step_at(&self, rho: &CMatrix, dw: &[f64], dt: f64, t: f64) -> Result<CMatrix> {
        let det = rk4(rho, dt, |x| self.forward_generator(x));
        let next = self.stochastic_update(rho, det, false, dw, dt);
        self.finish(next, t)
    }

    /// One step from `t` to `t - dt` of the backward equation, using the
    /// record increments `dy` over that interval.
    pub fn backward_step(&self, e: &CMatrix, dy: &[f64], dt: f64) -> Result<CMatrix> {
        self.backward_step_at(e, dy, dt, f64::NAN)
    }

    fn backward_step_at(&self, e: &CMatrix, dy: &[f64], dt: f64, t: f64) -> Result<CMatrix> {
        let tr = e.trace().re;
        let ds: Vec<f64> = self
            .channels
            .iter()
            .zip(dy)
            .map(|(ch, y)| y - ch.sqrt_eta * 2.0 * ch.c.trace_with(e).re / tr * dt)
            .collect();
        let det = rk4(e, dt, |x| self.backward_generator(x));
        let next = self.stochastic_update(e, det, true, &ds, dt);
        self.finish(next, t)
    }

    fn guard(&self, x: &FockOperator, t: f64) -> Result<f64> {
        let top = x.top_population();
        if !(top < self.config.leak_tol) {
            return Err(Error::Truncation { t, population: top, limit: self.config.leak_tol });
        }
        Ok(top)
    }

    fn check_input(&self, x: &FockOperator, channels: usize, steps: usize, cols: usize) -> Result<()> {
        if x.n_max() != self.config.n_max {
            return Err(Error::shape(format!(
                "operator truncated at {}, oracle at {}",
                x.n_max(),
                self.config.n_max
            )));
        }
        if channels != self.channels.len() || cols != steps {
            return Err(Error::shape("increments do not match the channels or grid"));
        }
        Ok(())
    }

    /// Forward run driven by innovations `noise` (channels x steps).
    pub fn run_forward(
        &self,
        rho0: &FockOperator,
        grid: &TimeGrid,
        noise: &DMatrix<f64>,
        keep: &[usize],
    ) -> Result<OracleTrajectory> {
        self.check_input(rho0, noise.nrows(), grid.steps(), noise.ncols())?;
        let mut bridge = Bridge::new(&self.config, noise.nrows(), grid.dt());
        let mut rho = rho0.matrix().clone();
        let mut out = OracleTrajectory::with_capacity(grid.len());
        let first = FockOperator::from_matrix_unchecked(rho.clone(), Role::Density);
        out.record(0, &first, keep, self.guard(&first, grid.t0())?)?;
        for k in 0..grid.steps() {
            let incr: Vec<f64> = noise.column(k).iter().copied().collect();
            for (i, sub) in bridge.split(&incr).iter().enumerate() {
                let t = grid.time(k) + (i + 1) as f64 * bridge.h;
                rho = self.forward_step_at(&rho, sub, bridge.h, t)?;
            }
            let op = FockOperator::from_matrix_unchecked(rho.clone(), Role::Density);
            let top = self.guard(&op, grid.time(k + 1))?;
            out.record(k + 1, &op, keep, top)?;
        }
        Ok(out)
    }

    /// Backward run from `e_final` at the last grid point, consuming the
    /// record in reverse. Entries are indexed like the grid.
    pub fn run_backward(
        &self,
        e_final: &FockOperator,
        record: &MeasurementRecord,
        keep: &[usize],
    ) -> Result<OracleTrajectory> {
        let grid = *record.grid();
        self.check_input(e_final, record.channels(), grid.steps(), record.steps())?;
        let mut bridge = Bridge::new(&self.config, record.channels(), grid.dt());
        let mut e = e_final.matrix() / e_final.trace();
        let mut out = OracleTrajectory::with_capacity(grid.len());
        let last = FockOperator::from_matrix_unchecked(e.clone(), Role::Effect);
        out.record(grid.steps(), &last, keep, self.guard(&last, grid.t_final())?)?;
        for k in (0..grid.steps()).rev() {
            let incr: Vec<f64> = record.increment(k).iter().copied().collect();
            for (i, sub) in bridge.split(&incr).iter().enumerate() {
                let t = grid.time(k + 1) - (i + 1) as f64 * bridge.h;
                e = self.backward_step_at(&e, sub, bridge.h, t)?;
            }
            let op = FockOperator::from_matrix_unchecked(e.clone(), Role::Effect);
            let top = self.guard(&op, grid.time(k))?;
            out.record(k, &op, keep, top)?;
        }
        out.reverse();
        Ok(out)
    }
}

/// Fills a grid increment in with `n` bridge-conditioned sub-increments.
struct Bridge {
    rng: ChaCha8Rng,
    n: usize,
    h: f64,
    channels: usize,
}

impl Bridge {
    fn new(config: &OracleConfig, channels: usize, dt: f64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(config.bridge_seed),
            n: config.substeps,
            h: dt / config.substeps as f64,
            channels,
        }
    }

    fn split(&mut self, incr: &[f64]) -> Vec<Vec<f64>> {
        if self.n == 1 {
            return vec![incr.to_vec()];
        }
        let scale = self.h.sqrt();
        let mut subs = vec![vec![0.0; self.channels]; self.n];
        for (c, total) in incr.iter().enumerate() {
            let z: Vec<f64> = (0..self.n).map(|_| StandardNormal.sample(&mut self.rng)).collect();
            let zbar = z.iter().sum::<f64>() / self.n as f64;
            for (i, zi) in z.iter().enumerate() {
                subs[i][c] = total / self.n as f64 + scale * (zi - zbar);
            }
        }
        subs
    }
}

/// Extracted moments along an oracle run, plus any requested full operators.
#[derive(Debug, Clone, Default)]
pub struct OracleTrajectory {
    moments: Vec<(usize, GaussianMoments)>,
    kept: Vec<(usize, FockOperator)>,
    max_top_population: f64,
}

impl OracleTrajectory {
    fn with_capacity(n: usize) -> Self {
        Self { moments: Vec::with_capacity(n), kept: Vec::new(), max_top_population: 0.0 }
    }

    fn record(&mut self, k: usize, op: &FockOperator, keep: &[usize], top: f64) -> Result<()> {
        self.moments.push((k, extract_moments(op)?));
        if keep.contains(&k) {
            self.kept.push((k, op.clone()));
        }
        self.max_top_population = self.max_top_population.max(top);
        Ok(())
    }

    fn reverse(&mut self) {
        self.moments.reverse();
        self.kept.reverse();
    }

    /// Moments at every grid point, in grid order.
    pub fn moments(&self) -> Vec<&GaussianMoments> {
        self.moments.iter().map(|(_, m)| m).collect()
    }

    pub fn moment(&self, k: usize) -> &GaussianMoments {
        &self.moments[k].1
    }

    pub fn kept(&self, k: usize) -> Option<&FockOperator> {
        self.kept.iter().find(|(i, _)| *i == k).map(|(_, op)| op)
    }

    /// Largest top-two-level population seen during the run.
    pub fn max_top_population(&self) -> f64 {
        self.max_top_population
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{damping_channel, dispersive_channel};
    use crate::phase::QuadratureLayout;

    fn one() -> QuadratureLayout {
        QuadratureLayout::single_mode()
    }

    fn cfg(n_max: usize) -> OracleConfig {
        OracleConfig { n_max, ..OracleConfig::default() }
    }

    #[test]
    fn free_system_is_static() {
        let spec = ModelSpec::builder(one()).build().unwrap();
        let sys = OracleSystem::new(&spec, cfg(10)).unwrap();
        let rho = FockOperator::thermal(0.5, 10);
        let rho = rho.matrix() / rho.trace();
        let next = sys.forward_sme_step(&rho, &[], 0.01).unwrap();
        assert!((next - &rho).norm() < 1e-15);
    }

    #[test]
    fn unconditional_number_decay() {
        let g = 1.0;
        let spec = ModelSpec::builder(one())
            .oscillator(0, 3.0)
            .channel(damping_channel(one(), 0, g).unwrap(), 0.0)
            .build()
            .unwrap();
        let sys = OracleSystem::new(&spec, cfg(30)).unwrap();
        let grid = TimeGrid::from_interval(0.0, 1.0, 1e-3).unwrap();
        let rho0 = FockOperator::coherent(Complex64::new(1.5, 0.0), 30);
        let rho0 = FockOperator::new(rho0.matrix() / rho0.trace(), Role::Density).unwrap();
        let traj = sys.run_forward(&rho0, &grid, &DMatrix::zeros(1, grid.steps()), &[]).unwrap();
        let n0 = 2.25;
        for (k, m) in traj.moments().iter().enumerate() {
            // <a†a> = (σ_qq + σ_pp)/4 + |<r>|²/2 - 1/2
            let n = (m.cov().trace()) / 4.0 + m.mean().norm_squared() / 2.0 - 0.5;
            assert!((n - n0 * (-g * grid.time(k)).exp()).abs() < 1e-8);
        }
    }

    #[test]
    fn coherent_state_step_matches_gaussian_step() {
        let spec = ModelSpec::builder(one())
            .oscillator(0, 2.0)
            .channel(damping_channel(one(), 0, 1.0).unwrap(), 1.0)
            .build()
            .unwrap();
        let sys = OracleSystem::new(&spec, cfg(40)).unwrap();
        let alpha = Complex64::new(1.0, 0.5);
        let rho = FockOperator::coherent(alpha, 40);
        let rho = rho.matrix() / rho.trace();
        let dt = 1e-3;
        let next = sys.forward_sme_step(&rho, &[0.02], dt).unwrap();
        let m = extract_moments(&FockOperator::new(next, Role::Density).unwrap()).unwrap();
        let g = GaussianMoments::coherent(alpha);
        let stepper = crate::forward::ForwardStepper::new(&spec, dt, crate::forward::DriftScheme::Rk4);
        let mean = stepper.step_with_noise(g.mean(), g.cov(), &nalgebra::DVector::from_vec(vec![0.02]));
        assert!((m.mean() - mean).abs().max() < 1e-9);
        assert!((m.cov() - DMatrix::identity(2, 2)).abs().max() < 1e-9);
    }

    #[test]
    fn identity_effect_is_fixed_without_monitoring() {
        let spec = ModelSpec::builder(one())
            .oscillator(0, 1.0)
            .channel(dispersive_channel(one(), 0, 0.5).unwrap(), 0.0)
            .build()
            .unwrap();
        let sys = OracleSystem::new(&spec, cfg(12)).unwrap();
        let e = FockOperator::identity_effect(12);
        let next = sys.backward_step(e.matrix(), &[0.3], 1e-2).unwrap();
        assert!((next - e.matrix()).norm() < 1e-12);
    }

    #[test]
    fn truncation_guard_fires() {
        let spec = ModelSpec::builder(one()).oscillator(0, 1.0).build().unwrap();
        let sys = OracleSystem::new(&spec, cfg(10)).unwrap();
        let rho0 = FockOperator::from_gaussian(&GaussianMoments::thermal(3.0, [0.0, 0.0]).unwrap(), 10).unwrap();
        let grid = TimeGrid::new(0.0, 0.01, 3).unwrap();
        let err = sys.run_forward(&rho0, &grid, &DMatrix::zeros(0, 3), &[]).unwrap_err();
        assert!(matches!(err, Error::Truncation { .. }), "{err}");
    }

    #[test]
    fn config_checks() {
        let spec = ModelSpec::builder(one()).build().unwrap();
        assert!(OracleSystem::new(&spec, cfg(3)).is_err());
        assert!(OracleSystem::new(&spec, OracleConfig { substeps: 0, ..cfg(10) }).is_err());
        let two = ModelSpec::builder(QuadratureLayout::new(2).unwrap()).build().unwrap();
        assert!(OracleSystem::new(&two, cfg(10)).is_err());
    }

    #[test]
    fn bridge_preserves_increment() {
        let config = OracleConfig { substeps: 5, bridge_seed: 3, ..cfg(10) };
        let mut b = Bridge::new(&config, 2, 1e-3);
        let subs = b.split(&[0.04, -0.01]);
        assert_eq!(subs.len(), 5);
        for c in 0..2 {
            let total: f64 = subs.iter().map(|s| s[c]).sum();
            assert!((total - [0.04, -0.01][c]).abs() < 1e-16);
        }
    }
}
