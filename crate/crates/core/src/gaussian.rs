//! Multivariate Gaussian predictions parameterized by a mean vector and the
//! lower Cholesky factor of the covariance. Densities and Mahalanobis
//! distances go through triangular solves; the covariance is never inverted
//! explicitly.

use crate::error::{CoreError, Result};
use crate::func::softplus;
use crate::linalg::{tril_index, tril_len, Matrix};
use crate::rng::Rng;

/// Floor added to the softplus of raw diagonal outputs, keeping every
/// predicted factor strictly positive definite.
pub const DIAG_FLOOR: f64 = 1e-6;

/// One predictive distribution: mean and lower Cholesky factor of the
/// covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrediction {
    mean: Vec<f64>,
    chol: Matrix,
}

impl GaussianPrediction {
    /// Build from parts, validating that `chol` is square lower-triangular
    /// with a strictly positive diagonal and matches the mean length.
    pub fn new(mean: Vec<f64>, chol: Matrix) -> Result<Self> {
        let n = mean.len();
        if chol.shape() != (n, n) {
            return Err(CoreError::ShapeMismatch {
                context: "GaussianPrediction::new",
                expected: format!("{n}x{n} factor"),
                got: format!("{:?}", chol.shape()),
            });
        }
        for i in 0..n {
            if chol.at(i, i) <= 0.0 {
                return Err(CoreError::Domain(format!(
                    "Cholesky diagonal must be positive; entry {i} is {}",
                    chol.at(i, i)
                )));
            }
            for j in i + 1..n {
                if chol.at(i, j) != 0.0 {
                    return Err(CoreError::Domain(format!(
                        "factor must be lower triangular; entry ({i},{j}) is {}",
                        chol.at(i, j)
                    )));
                }
            }
        }
        Ok(GaussianPrediction { mean, chol })
    }

    /// Head output layout: n means followed by the packed row-major lower
    /// triangle. Diagonal entries pass through softplus plus [`DIAG_FLOOR`];
    /// off-diagonal entries are used as-is.
    pub fn from_raw(raw: &[f64], n: usize) -> Result<Self> {
        let expected = n + tril_len(n);
        if raw.len() != expected {
            return Err(CoreError::ShapeMismatch {
                context: "GaussianPrediction::from_raw",
                expected: format!("{expected} values"),
                got: format!("{}", raw.len()),
            });
        }
        let mean = raw[..n].to_vec();
        let mut chol = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let x = raw[n + tril_index(i, j)];
                chol.set(i, j, if i == j { softplus(x) + DIAG_FLOOR } else { x });
            }
        }
        Ok(GaussianPrediction { mean, chol })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn chol(&self) -> &Matrix {
        &self.chol
    }

    /// Covariance chol * chol^T, materialized.
    pub fn covariance(&self) -> Matrix {
        self.chol.matmul(&self.chol.transpose())
    }

    /// Squared Mahalanobis distance (y - mean)^T Sigma^{-1} (y - mean),
    /// computed by forward substitution.
    pub fn mahalanobis_sq(&self, y: &[f64]) -> Result<f64> {
        if y.len() != self.dim() {
            return Err(CoreError::ShapeMismatch {
                context: "mahalanobis_sq",
                expected: format!("{}", self.dim()),
                got: format!("{}", y.len()),
            });
        }
        let resid: Vec<f64> = y.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        let z = self.chol.solve_lower(&Matrix::col_vec(&resid));
        Ok(z.data().iter().map(|v| v * v).sum())
    }

    /// Exact negative log density, including the (n/2) ln 2 pi constant so
    /// values are comparable across output dimensions.
    pub fn nll(&self, y: &[f64]) -> Result<f64> {
        let n = self.dim() as f64;
        let log_det: f64 = (0..self.dim()).map(|i| self.chol.at(i, i).ln()).sum();
        Ok(log_det + 0.5 * self.mahalanobis_sq(y)? + 0.5 * n * (2.0 * std::f64::consts::PI).ln())
    }

    /// Log density (negated `nll`), used for mixture aggregation.
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        Ok(-self.nll(y)?)
    }

    /// Draw mean + chol * z with z standard normal.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        let n = self.dim();
        let z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mut out = self.mean.clone();
        for i in 0..n {
            for j in 0..=i {
                out[i] += self.chol.at(i, j) * z[j];
            }
        }
        out
    }

    /// CSV header for prediction rows: mean_0..mean_{n-1}, then the packed
    /// lower triangle l_{ij} in row-major order.
    pub fn csv_header(n: usize) -> String {
        let mut cols: Vec<String> = (0..n).map(|i| format!("mean_{i}")).collect();
        for i in 0..n {
            for j in 0..=i {
                cols.push(format!("l_{i}_{j}"));
            }
        }
        cols.join(",")
    }

    /// One CSV row matching [`GaussianPrediction::csv_header`].
    pub fn csv_row(&self) -> String {
        let n = self.dim();
        let mut vals: Vec<String> = self.mean.iter().map(|v| format!("{v}")).collect();
        for i in 0..n {
            for j in 0..=i {
                vals.push(format!("{}", self.chol.at(i, j)));
            }
        }
        vals.join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LN_2PI: f64 = 1.8378770664093453;

    #[test]
    fn from_raw_scalar_case() {
        let p = GaussianPrediction::from_raw(&[0.5, 0.0], 1).unwrap();
        assert_eq!(p.mean(), &[0.5]);
        let expected = 2.0_f64.ln() + DIAG_FLOOR;
        assert!((p.chol().at(0, 0) - expected).abs() < 1e-12);
        assert!((p.chol().at(0, 0) - 0.6931).abs() < 1e-3);
    }

    #[test]
    fn from_raw_two_dim_zeros() {
        let p = GaussianPrediction::from_raw(&[0.0; 5], 2).unwrap();
        assert_eq!(p.mean(), &[0.0, 0.0]);
        let d = 2.0_f64.ln() + DIAG_FLOOR;
        assert!((p.chol().at(0, 0) - d).abs() < 1e-12);
        assert!((p.chol().at(1, 1) - d).abs() < 1e-12);
        assert_eq!(p.chol().at(1, 0), 0.0);
    }

    #[test]
    fn from_raw_rejects_wrong_length() {
        assert!(matches!(
            GaussianPrediction::from_raw(&[0.0; 4], 2),
            Err(CoreError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn nll_constant_term_only() {
        let p = GaussianPrediction::new(vec![1.0, -2.0], Matrix::identity(2)).unwrap();
        let nll = p.nll(&[1.0, -2.0]).unwrap();
        assert!((nll - LN_2PI).abs() < 1e-12);
    }

    #[test]
    fn nll_quadratic_term() {
        let p = GaussianPrediction::new(vec![0.0, 0.0], Matrix::identity(2)).unwrap();
        let nll = p.nll(&[1.0, 0.0]).unwrap();
        assert!((nll - (LN_2PI + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn nll_scaling_covariance_shifts_by_log_factor() {
        // Sigma -> 4 Sigma at y = mean adds ln 4 when n = 2.
        let chol = Matrix::from_vec(2, 2, vec![1.3, 0.0, -0.4, 0.8]).unwrap();
        let base = GaussianPrediction::new(vec![0.2, 0.9], chol.clone()).unwrap();
        let scaled = GaussianPrediction::new(vec![0.2, 0.9], chol.scale(2.0)).unwrap();
        let d = scaled.nll(&[0.2, 0.9]).unwrap() - base.nll(&[0.2, 0.9]).unwrap();
        assert!((d - 4.0_f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mahalanobis_cases() {
        let p = GaussianPrediction::new(vec![1.0], Matrix::from_vec(1, 1, vec![3.0]).unwrap())
            .unwrap();
        assert_eq!(p.mahalanobis_sq(&[1.0]).unwrap(), 0.0);
        // residual 3 with variance 9 -> 1
        assert!((p.mahalanobis_sq(&[4.0]).unwrap() - 1.0).abs() < 1e-12);
        let q = GaussianPrediction::new(vec![0.0, 0.0], Matrix::identity(2)).unwrap();
        assert!((q.mahalanobis_sq(&[1.0, 1.0]).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_factor_samples_at_mean() {
        let chol = Matrix::from_vec(2, 2, vec![1e-6, 0.0, 0.0, 1e-6]).unwrap();
        let p = GaussianPrediction::new(vec![2.0, -1.0], chol).unwrap();
        let mut rng = Rng::from_seed(3);
        let s = p.sample(&mut rng);
        assert!((s[0] - 2.0).abs() < 1e-4);
        assert!((s[1] + 1.0).abs() < 1e-4);
    }

    #[test]
    fn sample_covariance_matches_factor() {
        let chol = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.6, 0.7]).unwrap();
        let p = GaussianPrediction::new(vec![0.5, -0.5], chol.clone()).unwrap();
        let sigma = chol.matmul(&chol.transpose());
        let mut rng = Rng::from_seed(12);
        let n = 100_000;
        let mut acc = Matrix::zeros(2, 2);
        for _ in 0..n {
            let s = p.sample(&mut rng);
            let d = [s[0] - 0.5, s[1] + 0.5];
            for i in 0..2 {
                for j in 0..2 {
                    acc.set(i, j, acc.at(i, j) + d[i] * d[j]);
                }
            }
        }
        let emp = acc.scale(1.0 / n as f64);
        let rel = emp.sub(&sigma).frobenius_norm() / sigma.frobenius_norm();
        assert!(rel < 0.03, "relative Frobenius error {rel}");
    }

    #[test]
    fn fixed_seed_reproducible_sample() {
        let p = GaussianPrediction::new(vec![0.0], Matrix::from_vec(1, 1, vec![2.0]).unwrap())
            .unwrap();
        let a = p.sample(&mut Rng::from_seed(77));
        let b = p.sample(&mut Rng::from_seed(77));
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn mahalanobis_of_own_samples_averages_to_dim() {
        let chol = Matrix::from_vec(2, 2, vec![0.9, 0.0, -0.3, 1.4]).unwrap();
        let p = GaussianPrediction::new(vec![1.0, 2.0], chol).unwrap();
        let mut rng = Rng::from_seed(101);
        let n = 100_000;
        let mut total = 0.0;
        for _ in 0..n {
            let s = p.sample(&mut rng);
            total += p.mahalanobis_sq(&s).unwrap();
        }
        let mean = total / n as f64;
        assert!((mean - 2.0).abs() / 2.0 < 0.03, "mean {mean}");
    }

    #[test]
    fn csv_roundtrip_layout() {
        let chol = Matrix::from_vec(2, 2, vec![1.5, 0.0, 0.25, 0.75]).unwrap();
        let p = GaussianPrediction::new(vec![0.1, -0.2], chol).unwrap();
        assert_eq!(GaussianPrediction::csv_header(2), "mean_0,mean_1,l_0_0,l_1_0,l_1_1");
        assert_eq!(p.csv_row(), "0.1,-0.2,1.5,0.25,0.75");
    }
}
