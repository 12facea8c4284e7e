//! Dense symmetric linear algebra: Cholesky factorization of `K + shift * I`,
//! log-determinants, triangular solves and the spectral norm of the inverse.
//!
//! Everything here is plain `O(N^3)` dense code in `f64`; matrices in this
//! crate stay at a few hundred rows.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Builds a matrix from row-major data. Panics if the length does not match.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major buffer has the wrong length");
        Matrix { rows, cols, data }
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

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch { expected: self.cols, got: v.len() });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, got: other.rows });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                axpy(a, other.row(k), out.row_mut(i));
            }
        }
        Ok(out)
    }

    /// `self + shift * I` for a square matrix.
    pub fn shifted(&self, shift: f64) -> Matrix {
        let mut m = self.clone();
        for i in 0..self.rows.min(self.cols) {
            m[(i, i)] += shift;
        }
        m
    }

    /// Column Euclidean norms.
    pub fn column_norms(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (a, &x) in acc.iter_mut().zip(self.row(i)) {
                *a += x * x;
            }
        }
        acc.into_iter().map(f64::sqrt).collect()
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `y += a * x`
#[inline]
fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Lower-triangular factor `L` with `L * L^T = K + shift * I`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    l: Matrix,
    shift: f64,
}

/// Factors `k + shift * I`. Only the lower triangle of `k` is read.
pub fn cholesky(k: &Matrix, shift: f64) -> Result<CholeskyFactor> {
    if !k.is_square() {
        return Err(Error::DimensionMismatch { expected: k.rows(), got: k.cols() });
    }
    if !(shift >= 0.0) {
        return Err(Error::InvalidParameter(format!("cholesky shift must be >= 0, got {shift}")));
    }
    let n = k.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let (head, tail) = l.data.split_at_mut(j * n);
        let row_j = &mut tail[..n];
        // off-diagonal entries of row j
        for i in 0..j {
            let row_i = &head[i * n..i * n + n];
            let s = k[(j, i)] - dot(&row_i[..i], &row_j[..i]);
            row_j[i] = s / row_i[i];
        }
        let pivot = k[(j, j)] + shift - dot(&row_j[..j], &row_j[..j]);
        if !(pivot > 0.0) || !pivot.is_finite() {
            return Err(Error::FactorizationFailure { index: j, pivot });
        }
        row_j[j] = pivot.sqrt();
    }
    Ok(CholeskyFactor { l, shift })
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.l.rows()
    }

    pub fn shift(&self) -> f64 {
        self.shift
    }

    pub fn lower(&self) -> &Matrix {
        &self.l
    }

    /// `log det(K + shift * I)`.
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.l[(i, i)].ln()).sum::<f64>()
    }

    /// `L * L^T`, i.e. `K + shift * I` up to round-off.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let mut a = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let m = j.min(i) + 1;
                let v = dot(&self.l.row(i)[..m], &self.l.row(j)[..m]);
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        a
    }

    /// Solves `(K + shift * I) x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        if b.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.len() });
        }
        let mut x = b.to_vec();
        for i in 0..n {
            let row = self.l.row(i);
            x[i] = (x[i] - dot(&row[..i], &x[..i])) / row[i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.l[(j, i)] * x[j];
            }
            x[i] = s / self.l[(i, i)];
        }
        Ok(x)
    }

    /// Overwrites the `N x M` right-hand side `b` with `L^{-1} b`.
    pub fn forward_substitute(&self, b: &mut Matrix) -> Result<()> {
        let n = self.dim();
        if b.rows() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.rows() });
        }
        let m = b.cols();
        for i in 0..n {
            let (done, rest) = b.data.split_at_mut(i * m);
            let bi = &mut rest[..m];
            for j in 0..i {
                let lij = self.l[(i, j)];
                if lij != 0.0 {
                    axpy(-lij, &done[j * m..(j + 1) * m], bi);
                }
            }
            let inv = 1.0 / self.l[(i, i)];
            bi.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(())
    }

    /// Overwrites the `N x M` right-hand side `b` with `L^{-T} b`.
    pub fn backward_substitute(&self, b: &mut Matrix) -> Result<()> {
        let n = self.dim();
        if b.rows() != n {
            return Err(Error::DimensionMismatch { expected: n, got: b.rows() });
        }
        let m = b.cols();
        for i in (0..n).rev() {
            let (head, done) = b.data.split_at_mut((i + 1) * m);
            let bi = &mut head[i * m..];
            for j in i + 1..n {
                let lji = self.l[(j, i)];
                if lji != 0.0 {
                    axpy(-lji, &done[(j - i - 1) * m..(j - i) * m], bi);
                }
            }
            let inv = 1.0 / self.l[(i, i)];
            bi.iter_mut().for_each(|v| *v *= inv);
        }
        Ok(())
    }

    /// Spectral norm of `(K + shift * I)^{-1}`, i.e. `1 / lambda_min(K + shift * I)`.
    pub fn inv_spectral_norm(&self) -> f64 {
        let eig = symmetric_eigenvalues(&self.reconstruct());
        let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
        1.0 / min
    }
}

/// Relative off-diagonal Frobenius mass at which Jacobi sweeps stop.
pub const JACOBI_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &Matrix) -> Vec<f64> {
    assert!(a.is_square(), "eigenvalues need a square matrix");
    let n = a.rows();
    let mut a = a.clone();
    let total: f64 = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let off = |a: &Matrix| {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[(i, j)] * a[(i, j)];
                }
            }
        }
        s.sqrt()
    };

    for _ in 0..JACOBI_MAX_SWEEPS {
        if off(&a) <= JACOBI_TOLERANCE * total {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A <- J^T A J with J the (p, q) plane rotation
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    eig.sort_by(f64::total_cmp);
    eig
}
