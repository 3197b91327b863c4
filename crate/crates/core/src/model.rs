//! Physical problem definition and the constant drift, back-action and
//! diffusion matrices derived from it.
//!
//! The Hamiltonian is `H = 1/2 r^T R r` and the `m` channel operators are
//! `c = C r` with a complex `m x d` coupling matrix. From these:
//!
//! ```text
//! A = Omega (R + Im{C^dag C})      drift
//! B = Re{C}                        back-action
//! N^T = Omega (Im C)^T             back-action offset
//! D = -2 Omega Re{C^dag C} Omega   diffusion
//! ```

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{max_asymmetry, symmetric_eigen_range};
use crate::phase::{build_symplectic, QuadratureLayout};

/// Hamiltonian matrices must be symmetric to this tolerance.
pub const HAMILTONIAN_SYMMETRY_TOL: f64 = 1e-12;

/// One row of the coupling matrix: `c = sum_k row_k r_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRow(Vec<Complex64>);

impl ChannelRow {
    pub fn new(coefficients: Vec<Complex64>) -> Self {
        Self(coefficients)
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Multiplies the operator by a global phase `e^{i phi}`. For a monitored
    /// channel this selects the local-oscillator phase of the homodyne
    /// detector; the unconditional dynamics are unchanged.
    pub fn rotated(&self, phi: f64) -> ChannelRow {
        let phase = Complex64::from_polar(1.0, phi);
        ChannelRow(self.0.iter().map(|c| c * phase).collect())
    }

    /// Splits a channel into two homodyne channels on orthogonal quadratures
    /// (heterodyne detection): `c/sqrt2` and `i c/sqrt2`.
    pub fn heterodyne_split(&self) -> [ChannelRow; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let first = ChannelRow(self.0.iter().map(|c| c * s).collect());
        let second = first.rotated(std::f64::consts::FRAC_PI_2);
        [first, second]
    }

    /// True if the channel operator is Hermitian (purely real row).
    pub fn is_hermitian(&self) -> bool {
        self.0.iter().all(|c| c.im == 0.0)
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::input(format!("rate must be finite and >= 0, got {rate}")));
    }
    Ok(())
}

/// `c = sqrt(rate) a` on `mode`, i.e. `sqrt(rate/2) (q + i p)`.
pub fn damping_channel(layout: QuadratureLayout, mode: usize, rate: f64) -> Result<ChannelRow> {
    check_rate(rate)?;
    layout.check_mode(mode)?;
    let mut row = vec![Complex64::new(0.0, 0.0); layout.dim()];
    let s = (rate / 2.0).sqrt();
    row[layout.q_index(mode)] = Complex64::new(s, 0.0);
    row[layout.p_index(mode)] = Complex64::new(0.0, s);
    Ok(ChannelRow(row))
}

/// `c = sqrt(rate) (a + a^dag) = sqrt(2 rate) q` on `mode`.
pub fn dispersive_channel(layout: QuadratureLayout, mode: usize, rate: f64) -> Result<ChannelRow> {
    check_rate(rate)?;
    layout.check_mode(mode)?;
    let mut row = vec![Complex64::new(0.0, 0.0); layout.dim()];
    row[layout.q_index(mode)] = Complex64::new((2.0 * rate).sqrt(), 0.0);
    Ok(ChannelRow(row))
}

pub fn rotated_channel(row: &ChannelRow, phi: f64) -> ChannelRow {
    row.rotated(phi)
}

pub fn heterodyne_split(row: &ChannelRow) -> [ChannelRow; 2] {
    row.heterodyne_split()
}

/// Complete problem definition: Hamiltonian matrix, coupling matrix and
/// per-channel detector efficiencies.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    layout: QuadratureLayout,
    hamiltonian: DMatrix<f64>,
    coupling: DMatrix<Complex64>,
    efficiencies: DVector<f64>,
}

impl ModelSpec {
    pub fn new(
        layout: QuadratureLayout,
        hamiltonian: DMatrix<f64>,
        coupling: DMatrix<Complex64>,
        efficiencies: DVector<f64>,
    ) -> Result<Self> {
        let d = layout.dim();
        if hamiltonian.nrows() != d || hamiltonian.ncols() != d {
            return Err(Error::shape(format!(
                "Hamiltonian matrix is {}x{}, expected {d}x{d}",
                hamiltonian.nrows(),
                hamiltonian.ncols()
            )));
        }
        let asym = max_asymmetry(&hamiltonian);
        if asym > HAMILTONIAN_SYMMETRY_TOL {
            return Err(Error::input(format!(
                "Hamiltonian matrix is not symmetric (max asymmetry {asym:.3e})"
            )));
        }
        if coupling.ncols() != d && coupling.nrows() > 0 {
            return Err(Error::shape(format!(
                "coupling matrix has {} columns, expected {d}",
                coupling.ncols()
            )));
        }
        if efficiencies.len() != coupling.nrows() {
            return Err(Error::shape(format!(
                "{} efficiencies for {} channels",
                efficiencies.len(),
                coupling.nrows()
            )));
        }
        if let Some(bad) = efficiencies.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(Error::input(format!("efficiency {bad} outside [0, 1]")));
        }
        if hamiltonian.iter().any(|v| !v.is_finite())
            || coupling.iter().any(|c| !c.re.is_finite() || !c.im.is_finite())
        {
            return Err(Error::input("model matrices must be finite"));
        }
        let coupling = if coupling.nrows() == 0 { DMatrix::zeros(0, d) } else { coupling };
        Ok(Self { layout, hamiltonian, coupling, efficiencies })
    }

    pub fn builder(layout: QuadratureLayout) -> ModelBuilder {
        ModelBuilder {
            layout,
            hamiltonian: DMatrix::zeros(layout.dim(), layout.dim()),
            rows: Vec::new(),
            efficiencies: Vec::new(),
        }
    }

    pub fn layout(&self) -> QuadratureLayout {
        self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim()
    }

    pub fn n_channels(&self) -> usize {
        self.coupling.nrows()
    }

    pub fn hamiltonian(&self) -> &DMatrix<f64> {
        &self.hamiltonian
    }

    pub fn coupling(&self) -> &DMatrix<Complex64> {
        &self.coupling
    }

    pub fn efficiencies(&self) -> &DVector<f64> {
        &self.efficiencies
    }

    pub fn channel_row(&self, h: usize) -> ChannelRow {
        ChannelRow(self.coupling.row(h).iter().cloned().collect())
    }

    /// Same model with every detector switched off.
    pub fn unmonitored(&self) -> ModelSpec {
        let mut out = self.clone();
        out.efficiencies.fill(0.0);
        out
    }

    pub fn derive(&self) -> DerivedMatrices {
        derive_matrices(self)
    }
}

#[derive(Debug, Clone)]
pub struct ModelBuilder {
    layout: QuadratureLayout,
    hamiltonian: DMatrix<f64>,
    rows: Vec<ChannelRow>,
    efficiencies: Vec<f64>,
}

impl ModelBuilder {
    /// Adds `frequency * (a^dag a + 1/2)` on `mode`.
    pub fn oscillator(mut self, mode: usize, frequency: f64) -> Self {
        let (q, p) = (self.layout.q_index(mode), self.layout.p_index(mode));
        if q < self.hamiltonian.nrows() {
            self.hamiltonian[(q, q)] += frequency;
            self.hamiltonian[(p, p)] += frequency;
        }
        self
    }

    pub fn hamiltonian(mut self, r: DMatrix<f64>) -> Self {
        self.hamiltonian = r;
        self
    }

    pub fn channel(mut self, row: ChannelRow, efficiency: f64) -> Self {
        self.rows.push(row);
        self.efficiencies.push(efficiency);
        self
    }

    pub fn build(self) -> Result<ModelSpec> {
        let d = self.layout.dim();
        for (h, row) in self.rows.iter().enumerate() {
            if row.dim() != d {
                return Err(Error::shape(format!("channel {h} has {} coefficients, expected {d}", row.dim())));
            }
        }
        let m = self.rows.len();
        let coupling = DMatrix::from_fn(m, d, |h, k| self.rows[h].0[k]);
        ModelSpec::new(self.layout, self.hamiltonian, coupling, DVector::from_vec(self.efficiencies))
    }
}

/// Constant matrices of the Gaussian moment equations.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedMatrices {
    /// Drift `A` (d x d).
    pub drift: DMatrix<f64>,
    /// Back-action `B = Re C` (m x d).
    pub backaction: DMatrix<f64>,
    /// Offset `N` (m x d) with `N^T = Omega (Im C)^T`.
    pub offset: DMatrix<f64>,
    /// Diffusion `D` (d x d, symmetric PSD).
    pub diffusion: DMatrix<f64>,
}

impl DerivedMatrices {
    pub fn dim(&self) -> usize {
        self.drift.nrows()
    }

    pub fn n_channels(&self) -> usize {
        self.backaction.nrows()
    }

    /// Smallest eigenvalue of `D`; should be >= -1e-10.
    pub fn diffusion_min_eigenvalue(&self) -> f64 {
        if self.diffusion.nrows() == 0 {
            return 0.0;
        }
        symmetric_eigen_range(&self.diffusion).0
    }
}

pub fn derive_matrices(spec: &ModelSpec) -> DerivedMatrices {
    let d = spec.dim();
    let omega = build_symplectic(spec.layout()).into_matrix();
    let c = &spec.coupling;
    let gram = c.adjoint() * c;
    let gram_re = gram.map(|z| z.re);
    let gram_im = gram.map(|z| z.im);
    let c_re = c.map(|z| z.re);
    let c_im = c.map(|z| z.im);

    let drift = &omega * (&spec.hamiltonian + gram_im);
    let offset = (&omega * c_im.transpose()).transpose();
    let diffusion = -2.0 * &omega * gram_re * &omega;
    let diffusion = crate::linalg::symmetrize(&diffusion);
    let backaction = if c_re.nrows() == 0 { DMatrix::zeros(0, d) } else { c_re };
    DerivedMatrices { drift, backaction, offset, diffusion }
}
