//! Ladder operators on the truncated number basis and a minimal sparse
//! matrix type for applying them to dense operators.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `a`, `a†`, `q`, `p` on levels `0..=n_max`.
#[derive(Debug, Clone)]
pub struct ModeOperators {
    pub a: CMatrix,
    pub adag: CMatrix,
    pub q: CMatrix,
    pub p: CMatrix,
}

pub fn annihilation(n_max: usize) -> CMatrix {
    let n = n_max + 1;
    let mut a = CMatrix::zeros(n, n);
    for k in 1..n {
        a[(k - 1, k)] = Complex64::new((k as f64).sqrt(), 0.0);
    }
    a
}

pub fn build_mode_operators(n_max: usize) -> ModeOperators {
    let a = annihilation(n_max);
    let adag = a.adjoint();
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let q = (&a + &adag) * Complex64::new(s, 0.0);
    // (a - a†) / (i sqrt2) = -i (a - a†) / sqrt2
    let p = (&a - &adag) * Complex64::new(0.0, -s);
    ModeOperators { a, adag, q, p }
}

/// Row- and column-compressed copy of a mostly-zero matrix.
#[derive(Debug, Clone)]
pub struct Sparse {
    n: usize,
    rows: Vec<Vec<(usize, Complex64)>>,
    cols: Vec<Vec<(usize, Complex64)>>,
}

impl Sparse {
    /// Drops entries below `1e-15` of the largest one (rounding residue of
    /// products that cancel analytically).
    pub fn from_dense(m: &CMatrix) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "square operators only");
        let n = m.nrows();
        let cut = 1e-15 * m.iter().fold(0.0f64, |a, v| a.max(v.norm()));
        let mut rows = vec![Vec::new(); n];
        let mut cols = vec![Vec::new(); n];
        for j in 0..n {
            for i in 0..n {
                let v = m[(i, j)];
                if v.norm() > cut {
                    rows[i].push((j, v));
                    cols[j].push((i, v));
                }
            }
        }
        Self { n, rows, cols }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.n, self.n);
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// `out += scale * S X`.
    pub fn lmul_acc(&self, x: &CMatrix, scale: Complex64, out: &mut CMatrix) {
        let n = self.n;
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for j in 0..n {
            let xc = &xs[j * n..(j + 1) * n];
            let oc = &mut os[j * n..(j + 1) * n];
            for (i, row) in self.rows.iter().enumerate() {
                let mut acc = ZERO;
                for &(k, v) in row {
                    acc += v * xc[k];
                }
                oc[i] += scale * acc;
            }
        }
    }

    /// `out += scale * X S`.
    pub fn rmul_acc(&self, x: &CMatrix, scale: Complex64, out: &mut CMatrix) {
        let n = self.n;
        let xs = x.as_slice();
        let os = out.as_mut_slice();
        for (j, col) in self.cols.iter().enumerate() {
            let oc = &mut os[j * n..(j + 1) * n];
            for &(k, v) in col {
                let f = scale * v;
                let xc = &xs[k * n..(k + 1) * n];
                for (o, xv) in oc.iter_mut().zip(xc) {
                    *o += f * xv;
                }
            }
        }
    }

    pub fn lmul(&self, x: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.n, self.n);
        self.lmul_acc(x, Complex64::new(1.0, 0.0), &mut out);
        out
    }

    pub fn rmul(&self, x: &CMatrix) -> CMatrix {
        let mut out = CMatrix::zeros(self.n, self.n);
        self.rmul_acc(x, Complex64::new(1.0, 0.0), &mut out);
        out
    }

    /// `Tr(S X)`.
    pub fn trace_with(&self, x: &CMatrix) -> Complex64 {
        let mut acc = ZERO;
        for (i, row) in self.rows.iter().enumerate() {
            for &(k, v) in row {
                acc += v * x[(k, i)];
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_element() {
        let ops = build_mode_operators(5);
        assert!((ops.a[(1, 2)] - Complex64::new(2f64.sqrt(), 0.0)).norm() < 1e-15);
        assert_eq!(ops.a[(2, 1)], ZERO);
    }

    #[test]
    fn canonical_commutator_except_corner() {
        let n_max = 8;
        let ops = build_mode_operators(n_max);
        let comm = &ops.q * &ops.p - &ops.p * &ops.q;
        for i in 0..=n_max {
            for j in 0..=n_max {
                if i == n_max && j == n_max {
                    continue;
                }
                let expected = if i == j && i < n_max { Complex64::new(0.0, 1.0) } else { ZERO };
                assert!((comm[(i, j)] - expected).norm() < 1e-14, "({i}, {j})");
            }
        }
        assert!((comm[(n_max, n_max)] - Complex64::new(0.0, -(n_max as f64))).norm() < 1e-12);
    }

    #[test]
    fn sparse_products_match_dense() {
        let ops = build_mode_operators(6);
        let c = &ops.a * Complex64::new(0.3, 0.4) + &ops.adag * Complex64::new(-0.2, 0.1);
        let s = Sparse::from_dense(&c);
        assert_eq!(s.nnz(), 12);
        let x = CMatrix::from_fn(7, 7, |i, j| Complex64::new((i * 7 + j) as f64, (i as f64) - (j as f64)));
        assert!((s.lmul(&x) - &c * &x).norm() < 1e-12);
        assert!((s.rmul(&x) - &x * &c).norm() < 1e-12);
        assert!((s.trace_with(&x) - (&c * &x).trace()).norm() < 1e-12);
        assert_eq!(s.to_dense(), c);
    }
}
