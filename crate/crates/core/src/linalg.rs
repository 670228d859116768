//! Dense row-major matrices with the factorizations and triangular solves the
//! rest of the crate is built on. Everything is `f64`.

use crate::error::{CoreError, Result};

/// Dense matrix, row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// Number of entries in the lower triangle of an `n`-by-`n` matrix.
pub fn tril_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Flat index of entry (i, j), i >= j, in a row-major packed lower triangle.
pub fn tril_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(CoreError::ShapeMismatch {
                context: "Matrix::from_vec",
                expected: format!("{} entries", rows * cols),
                got: format!("{}", data.len()),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(CoreError::ShapeMismatch {
                    context: "Matrix::from_rows",
                    expected: format!("{c} columns"),
                    got: format!("{}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m.data[i * cols + j] = f(i, j);
            }
        }
        m
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Column vector (n x 1) from a slice.
    pub fn col_vec(v: &[f64]) -> Self {
        Matrix { rows: v.len(), cols: 1, data: v.to_vec() }
    }

    /// Row vector (1 x n) from a slice.
    pub fn row_vec(v: &[f64]) -> Self {
        Matrix { rows: 1, cols: v.len(), data: v.to_vec() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert!(i < self.rows);
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Elementwise sum. Panics on shape mismatch.
    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "Matrix::add shape mismatch");
        self.zip_with(other, |a, b| a + b)
    }

    /// Elementwise difference. Panics on shape mismatch.
    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "Matrix::sub shape mismatch");
        self.zip_with(other, |a, b| a - b)
    }

    /// Elementwise product. Panics on shape mismatch.
    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "Matrix::hadamard shape mismatch");
        self.zip_with(other, |a, b| a * b)
    }

    pub fn zip_with(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "Matrix::zip_with shape mismatch");
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|v| v * c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Matrix product. Panics on inner-dimension mismatch.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "Matrix::matmul inner dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let lhs = &other.data[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, &b) in dst.iter_mut().zip(lhs) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// New matrix made of the given rows, in the given order.
    pub fn take_rows(&self, indices: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Matrix { rows: indices.len(), cols: self.cols, data }
    }

    /// Lower Cholesky factor L with L * L^T = self.
    ///
    /// Requires a square matrix, symmetric within a scaled 1e-9 tolerance, and
    /// positive definite. A non-positive pivot reports its index.
    pub fn cholesky(&self) -> Result<Matrix> {
        if self.rows != self.cols {
            return Err(CoreError::ShapeMismatch {
                context: "cholesky",
                expected: "square matrix".to_string(),
                got: format!("{}x{}", self.rows, self.cols),
            });
        }
        let n = self.rows;
        let tol = 1e-9 * self.max_abs().max(1.0);
        for i in 0..n {
            for j in 0..i {
                if (self.at(i, j) - self.at(j, i)).abs() > tol {
                    return Err(CoreError::NotSymmetric);
                }
            }
        }
        let mut l = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let mut s = self.at(i, j);
                for k in 0..j {
                    s -= l.at(i, k) * l.at(j, k);
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(CoreError::NotPositiveDefinite { pivot: i });
                    }
                    l.set(i, j, s.sqrt());
                } else {
                    l.set(i, j, s / l.at(j, j));
                }
            }
        }
        Ok(l)
    }

    /// Solve L * X = B by forward substitution, with self lower triangular.
    pub fn solve_lower(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.rows, self.cols, "solve_lower needs a square matrix");
        assert_eq!(self.rows, rhs.rows, "solve_lower shape mismatch");
        let n = self.rows;
        let mut x = rhs.clone();
        for col in 0..rhs.cols {
            for i in 0..n {
                let mut s = x.at(i, col);
                for k in 0..i {
                    s -= self.at(i, k) * x.at(k, col);
                }
                x.set(i, col, s / self.at(i, i));
            }
        }
        x
    }

    /// Solve L^T * X = B by back substitution, with self lower triangular.
    pub fn solve_lower_transpose(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.rows, self.cols, "solve_lower_transpose needs a square matrix");
        assert_eq!(self.rows, rhs.rows, "solve_lower_transpose shape mismatch");
        let n = self.rows;
        let mut x = rhs.clone();
        for col in 0..rhs.cols {
            for i in (0..n).rev() {
                let mut s = x.at(i, col);
                for k in i + 1..n {
                    s -= self.at(k, i) * x.at(k, col);
                }
                x.set(i, col, s / self.at(i, i));
            }
        }
        x
    }

    /// Zero out everything above the diagonal.
    pub fn tril_part(&self) -> Matrix {
        Matrix::from_fn(self.rows, self.cols, |i, j| if j <= i { self.at(i, j) } else { 0.0 })
    }
}
