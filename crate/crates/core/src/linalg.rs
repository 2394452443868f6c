//! Small dense complex linear algebra.
//!
//! Every estimator in the crate works on per-frequency matrices whose side is
//! the microphone count (a handful), so everything here is a plain row-major
//! `Vec` with straightforward O(M^3) kernels: Cholesky for Hermitian positive
//! definite systems, LU with partial pivoting for general ones, and a cyclic
//! Jacobi eigensolver for Hermitian matrices.

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Relative diagonal loading applied before inversions in the estimators.
pub const DEFAULT_LOADING: f64 = 1e-10;

const LU_PIVOT_THRESHOLD: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Dense row-major complex matrix.
#[derive(Clone, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl fmt::Debug for CMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "CMatrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                let z = self[(i, j)];
                write!(f, "{:+.6}{:+.6}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<C64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length does not match shape");
        Self { rows, cols, data }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = C64::new(d, 0.0);
        }
        m
    }

    /// Outer product `a b^H`.
    pub fn outer(a: &[C64], b: &[C64]) -> Self {
        Self::from_fn(a.len(), b.len(), |i, j| a[i] * b[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [C64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn set_row(&mut self, i: usize, values: &[C64]) {
        self.row_mut(i).copy_from_slice(values);
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows, "inner dimensions differ");
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let a = self[(i, l)];
                if a == C64::new(0.0, 0.0) {
                    continue;
                }
                let orow = other.row(l);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(self.cols, x.len(), "vector length differs from column count");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&z| z * s).collect(),
        }
    }

    pub fn add(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &CMatrix) -> CMatrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn trace(&self) -> C64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Sub-block of rows `r0..r1` and columns `c0..c1`.
    pub fn block(&self, r0: usize, r1: usize, c0: usize, c1: usize) -> CMatrix {
        CMatrix::from_fn(r1 - r0, c1 - c0, |i, j| self[(r0 + i, c0 + j)])
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Unconjugated product sum `Σ a_i b_i`.
pub fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Inner product `a^H b`.
pub fn inner(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm(a: &[C64]) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Hermitian matrix. Construction symmetrizes the input as `(A + A^H) / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianMatrix(CMatrix);

impl HermitianMatrix {
    pub fn new(m: CMatrix) -> Self {
        assert!(m.is_square(), "Hermitian matrix must be square");
        let n = m.rows();
        let mut out = m;
        for i in 0..n {
            let d = out[(i, i)].re;
            out[(i, i)] = C64::new(d, 0.0);
            for j in i + 1..n {
                let v = (out[(i, j)] + out[(j, i)].conj()) * 0.5;
                out[(i, j)] = v;
                out[(j, i)] = v.conj();
            }
        }
        Self(out)
    }

    pub fn identity(n: usize) -> Self {
        Self(CMatrix::identity(n))
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMatrix::zeros(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(CMatrix::from_diagonal(diag))
    }

    /// `v v^H`.
    pub fn outer(v: &[C64]) -> Self {
        Self::new(CMatrix::outer(v, v))
    }

    pub fn dim(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn scale(&self, s: f64) -> HermitianMatrix {
        HermitianMatrix(self.0.scale(C64::new(s, 0.0)))
    }

    /// Returns a copy scaled so that its trace equals `target`.
    /// A zero-trace matrix is returned unchanged.
    pub fn with_trace(&self, target: f64) -> HermitianMatrix {
        let tr = self.trace();
        if tr > 0.0 && tr.is_finite() {
            self.scale(target / tr)
        } else {
            self.clone()
        }
    }

    /// Quadratic form `x^H A x` (real for Hermitian A).
    pub fn quadratic_form(&self, x: &[C64]) -> f64 {
        inner(x, &self.0.mul_vec(x)).re
    }
}

impl Index<(usize, usize)> for HermitianMatrix {
    type Output = C64;
    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.0[idx]
    }
}

/// `A + eps * (trace(A) / M) * I`, or `A + eps * I` when the trace is zero.
pub fn load_diagonal(a: &HermitianMatrix, eps: f64) -> HermitianMatrix {
    let n = a.dim();
    let tr = a.trace();
    let delta = if tr != 0.0 { eps * tr / n as f64 } else { eps };
    let mut m = a.0.clone();
    for i in 0..n {
        m[(i, i)] += C64::new(delta, 0.0);
    }
    HermitianMatrix(m)
}

/// Lower-triangular Cholesky factor `A = L L^H`.
#[derive(Clone, Debug)]
pub struct Cholesky {
    l: CMatrix,
}

impl Cholesky {
    pub fn new(a: &HermitianMatrix) -> Result<Self> {
        let n = a.dim();
        let mut l = CMatrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[(j, k)].norm_sqr();
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite);
            }
            let d = d.sqrt();
            l[(j, j)] = C64::new(d, 0.0);
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)].conj();
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Self { l })
    }

    pub fn factor(&self) -> &CMatrix {
        &self.l
    }

    /// Solves `L z = b`.
    pub fn forward(&self, b: &[C64]) -> Vec<C64> {
        let n = self.l.rows();
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.l[(i, k)] * z[k];
            }
            z[i] = s / self.l[(i, i)].re;
        }
        z
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.l.rows();
        let mut x = self.forward(b);
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.l[(k, i)].conj() * x[k];
            }
            x[i] = s / self.l[(i, i)].re;
        }
        x
    }

    /// `A^{-1} B` column by column.
    pub fn solve_matrix(&self, b: &CMatrix) -> CMatrix {
        let n = self.l.rows();
        let mut out = CMatrix::zeros(n, b.cols());
        for j in 0..b.cols() {
            let x = self.solve(&b.column(j));
            for i in 0..n {
                out[(i, j)] = x[i];
            }
        }
        out
    }

    /// `x^H A^{-1} x`.
    pub fn inverse_quadratic_form(&self, x: &[C64]) -> f64 {
        self.forward(x).iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn log_det(&self) -> f64 {
        let n = self.l.rows();
        2.0 * (0..n).map(|i| self.l[(i, i)].re.ln()).sum::<f64>()
    }

    pub fn inverse(&self) -> HermitianMatrix {
        let n = self.l.rows();
        HermitianMatrix::new(self.solve_matrix(&CMatrix::identity(n)))
    }
}

/// Solves `A x = b` for Hermitian positive definite `A` via Cholesky.
pub fn solve_hermitian(a: &HermitianMatrix, b: &[C64]) -> Result<Vec<C64>> {
    if b.len() != a.dim() {
        return Err(Error::LengthMismatch {
            left: a.dim(),
            right: b.len(),
        });
    }
    Ok(Cholesky::new(a)?.solve(b))
}

/// LU factorization with partial pivoting, `P A = L U`.
#[derive(Clone, Debug)]
pub struct Lu {
    lu: CMatrix,
    perm: Vec<usize>,
    odd_swaps: bool,
}

impl Lu {
    pub fn new(a: &CMatrix) -> Result<Self> {
        assert!(a.is_square(), "LU needs a square matrix");
        let n = a.rows();
        let threshold = LU_PIVOT_THRESHOLD * a.frobenius_norm();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut odd_swaps = false;
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].norm()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if !(pmax > threshold) || !pmax.is_finite() {
                return Err(Error::SingularMatrix);
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
                odd_swaps = !odd_swaps;
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let factor = lu[(i, k)] / pivot;
                lu[(i, k)] = factor;
                for j in k + 1..n {
                    let v = lu[(k, j)];
                    lu[(i, j)] -= factor * v;
                }
            }
        }
        Ok(Self { lu, perm, odd_swaps })
    }

    pub fn solve(&self, b: &[C64]) -> Vec<C64> {
        let n = self.lu.rows();
        let mut x: Vec<C64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for k in 0..i {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..n {
                s -= self.lu[(i, k)] * x[k];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    /// `log |det A|`.
    pub fn log_abs_det(&self) -> f64 {
        (0..self.lu.rows()).map(|i| self.lu[(i, i)].norm().ln()).sum()
    }

    pub fn det(&self) -> C64 {
        let d: C64 = (0..self.lu.rows()).map(|i| self.lu[(i, i)]).product();
        if self.odd_swaps {
            -d
        } else {
            d
        }
    }
}

/// Solves `A x = b` for a general square `A` by LU with partial pivoting.
pub fn solve_general(a: &CMatrix, b: &[C64]) -> Result<Vec<C64>> {
    if !a.is_square() {
        return Err(Error::InvalidInput(format!(
            "solve_general needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if b.len() != a.rows() {
        return Err(Error::LengthMismatch {
            left: a.rows(),
            right: b.len(),
        });
    }
    Ok(Lu::new(a)?.solve(b))
}

/// Eigendecomposition of a Hermitian matrix.
///
/// Eigenvalues come back ascending; eigenvector `j` is column `j` of the
/// returned unitary matrix, with its largest-magnitude entry rotated to be
/// real and positive.
pub fn eigh(a: &HermitianMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let n = a.dim();
    let mut m = a.matrix().clone();
    let mut v = CMatrix::identity(n);
    let scale = m.frobenius_norm();
    let mut converged = n <= 1 || scale == 0.0;
    for _ in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                jacobi_rotate(&mut m, &mut v, p, q);
            }
        }
    }
    if !converged {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].norm_sqr())
            .sum::<f64>()
            .sqrt();
        if off > 1e-12 * scale {
            return Err(Error::ConvergenceFailure {
                sweeps: JACOBI_MAX_SWEEPS,
            });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].re.total_cmp(&m[(j, j)].re));
    let values: Vec<f64> = order.iter().map(|&i| m[(i, i)].re).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = v.column(src);
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, -1.0), |acc, (i, z)| if z.norm() > acc.1 { (i, z.norm()) } else { acc });
        let pivot = col[imax];
        let phase = if pivot.norm() > 0.0 {
            pivot.conj() / pivot.norm()
        } else {
            C64::new(1.0, 0.0)
        };
        for i in 0..n {
            vectors[(i, dst)] = col[i] * phase;
        }
    }
    Ok((values, vectors))
}

fn jacobi_rotate(m: &mut CMatrix, v: &mut CMatrix, p: usize, q: usize) {
    let n = m.rows();
    let apq = m[(p, q)];
    let mag = apq.norm();
    if mag == 0.0 {
        return;
    }
    // Phase rotation of index q makes the (p, q) entry real: D = diag(.., e^{-i phi} at q, ..).
    let phase = apq.conj() / mag;
    for i in 0..n {
        m[(i, q)] *= phase;
    }
    for j in 0..n {
        m[(q, j)] *= phase.conj();
    }
    for i in 0..n {
        v[(i, q)] *= phase;
    }
    let app = m[(p, p)].re;
    let aqq = m[(q, q)].re;
    let theta = (aqq - app) / (2.0 * mag);
    let t = if theta == 0.0 {
        1.0
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    // Real rotation P with P_pp = P_qq = c, P_pq = s, P_qp = -s; M <- P^T M P.
    for i in 0..n {
        let mip = m[(i, p)];
        let miq = m[(i, q)];
        m[(i, p)] = mip * c - miq * s;
        m[(i, q)] = mip * s + miq * c;
    }
    for j in 0..n {
        let mpj = m[(p, j)];
        let mqj = m[(q, j)];
        m[(p, j)] = mpj * c - mqj * s;
        m[(q, j)] = mpj * s + mqj * c;
    }
    m[(p, q)] = C64::new(0.0, 0.0);
    m[(q, p)] = C64::new(0.0, 0.0);
    m[(p, p)] = C64::new(m[(p, p)].re, 0.0);
    m[(q, q)] = C64::new(m[(q, q)].re, 0.0);
    for i in 0..n {
        let vip = v[(i, p)];
        let viq = v[(i, q)];
        v[(i, p)] = vip * c - viq * s;
        v[(i, q)] = vip * s + viq * c;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
        CMatrix::from_fn(rows, cols, |_, _| {
            c(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
        })
    }

    fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Vec<C64> {
        (0..n)
            .map(|_| c(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0))
            .collect()
    }

    fn random_pd(rng: &mut ChaCha8Rng, n: usize) -> HermitianMatrix {
        let g = random_matrix(rng, n, n);
        HermitianMatrix::new(g.matmul(&g.adjoint()).add(&CMatrix::identity(n)))
    }

    fn residual(a: &CMatrix, x: &[C64], b: &[C64]) -> f64 {
        let ax = a.mul_vec(x);
        norm(&ax.iter().zip(b).map(|(p, q)| p - q).collect::<Vec<_>>())
    }

    #[test]
    fn hermitian_construction_symmetrizes() {
        let m = CMatrix::from_rows(2, 2, vec![c(1.0, 0.3), c(2.0, 1.0), c(0.0, 0.0), c(3.0, 0.0)]);
        let h = HermitianMatrix::new(m);
        assert_eq!(h[(0, 1)], c(1.0, 0.5));
        assert_eq!(h[(1, 0)], c(1.0, -0.5));
        assert_eq!(h[(0, 0)], c(1.0, 0.0));
    }

    #[test]
    fn solve_hermitian_identity_and_diagonal() {
        let b = vec![c(1.0, 2.0), c(-3.0, 0.5)];
        let x = solve_hermitian(&HermitianMatrix::identity(2), &b).unwrap();
        assert_eq!(x, b);
        let a = HermitianMatrix::from_diagonal(&[2.0, 4.0]);
        let x = solve_hermitian(&a, &[c(2.0, 0.0), c(4.0, 0.0)]).unwrap();
        assert!((x[0] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((x[1] - c(1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn solve_hermitian_rejects_indefinite() {
        let a = HermitianMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(
            solve_hermitian(&a, &[c(1.0, 0.0), c(1.0, 0.0)]),
            Err(Error::NotPositiveDefinite)
        ));
    }

    #[test]
    fn solve_general_permutation() {
        let a = CMatrix::from_rows(2, 2, vec![c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]);
        let x = solve_general(&a, &[c(1.0, 0.0), c(2.0, 0.0)]).unwrap();
        assert_eq!(x, vec![c(2.0, 0.0), c(1.0, 0.0)]);
        let b = vec![c(0.5, -1.0), c(2.0, 2.0)];
        assert_eq!(solve_general(&CMatrix::identity(2), &b).unwrap(), b);
    }

    #[test]
    fn solve_general_singular() {
        let a = CMatrix::from_rows(2, 2, vec![c(1.0, 0.0), c(2.0, 0.0), c(2.0, 0.0), c(4.0, 0.0)]);
        assert!(matches!(
            solve_general(&a, &[c(1.0, 0.0), c(1.0, 0.0)]),
            Err(Error::SingularMatrix)
        ));
    }

    #[test]
    fn lu_determinant_matches_closed_form() {
        let a = CMatrix::from_rows(2, 2, vec![c(1.0, 1.0), c(2.0, 0.0), c(0.0, 3.0), c(4.0, -1.0)]);
        let expected = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        let lu = Lu::new(&a).unwrap();
        assert!((lu.det() - expected).norm() < 1e-12);
        assert!((lu.log_abs_det() - expected.norm().ln()).abs() < 1e-12);
    }

    #[test]
    fn eigh_diagonal_and_classic_2x2() {
        let (vals, vecs) = eigh(&HermitianMatrix::from_diagonal(&[3.0, 1.0])).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-14 && (vals[1] - 3.0).abs() < 1e-14);
        assert!((vecs[(1, 0)] - c(1.0, 0.0)).norm() < 1e-14);
        assert!((vecs[(0, 1)] - c(1.0, 0.0)).norm() < 1e-14);

        let a = HermitianMatrix::new(CMatrix::from_rows(
            2,
            2,
            vec![c(2.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)],
        ));
        let (vals, _) = eigh(&a).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-14);
        assert!((vals[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn eigh_phase_is_canonical() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_pd(&mut rng, 4);
        let (_, v) = eigh(&a).unwrap();
        for j in 0..4 {
            let col = v.column(j);
            let big = col.iter().max_by(|x, y| x.norm().total_cmp(&y.norm())).unwrap();
            assert!(big.im.abs() < 1e-14 && big.re > 0.0);
        }
    }

    #[test]
    fn load_diagonal_cases() {
        let l = load_diagonal(&HermitianMatrix::identity(2), 0.1);
        assert!((l[(0, 0)].re - 1.1).abs() < 1e-15 && (l[(1, 1)].re - 1.1).abs() < 1e-15);
        let z = load_diagonal(&HermitianMatrix::zeros(2), 1e-6);
        assert_eq!(z[(0, 0)].re, 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_pd(&mut rng, 3);
        let loaded = load_diagonal(&a, 0.25);
        assert!((loaded.trace() - 1.25 * a.trace()).abs() < 1e-12 * a.trace());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn hermitian_solve_residual(seed in any::<u64>(), n in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_pd(&mut rng, n);
            let b = random_vector(&mut rng, n);
            let x = solve_hermitian(&a, &b).unwrap();
            prop_assert!(residual(a.matrix(), &x, &b) <= 1e-9 * norm(&b));
        }

        #[test]
        fn general_solve_residual(seed in any::<u64>(), n in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_matrix(&mut rng, n, n).add(&CMatrix::identity(n).scale(c(3.0, 0.0)));
            let b = random_vector(&mut rng, n);
            let x = solve_general(&a, &b).unwrap();
            prop_assert!(residual(&a, &x, &b) <= 1e-9 * norm(&b));
        }

        #[test]
        fn eigh_reconstructs(seed in any::<u64>(), n in 1usize..=8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_matrix(&mut rng, n, n);
            let a = HermitianMatrix::new(g.add(&g.adjoint()));
            let (vals, v) = eigh(&a).unwrap();
            for w in vals.windows(2) {
                prop_assert!(w[0] <= w[1]);
            }
            let vh_v = v.adjoint().matmul(&v);
            prop_assert!(vh_v.sub(&CMatrix::identity(n)).max_abs() < 1e-9);
            let recon = v.matmul(&CMatrix::from_diagonal(&vals)).matmul(&v.adjoint());
            prop_assert!(recon.sub(a.matrix()).max_abs() < 1e-8);
            let av = a.matrix().matmul(&v);
            let vl = v.matmul(&CMatrix::from_diagonal(&vals));
            prop_assert!(av.sub(&vl).max_abs() < 1e-9 * (1.0 + a.matrix().max_abs()));
        }

        #[test]
        fn cholesky_log_det_matches_lu(seed in any::<u64>(), n in 1usize..=6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_pd(&mut rng, n);
            let chol = Cholesky::new(&a).unwrap();
            let lu = Lu::new(a.matrix()).unwrap();
            prop_assert!((chol.log_det() - lu.log_abs_det()).abs() < 1e-9);
        }
    }
}
