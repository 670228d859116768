//! Synthetic heteroscedastic regression tasks.
//!
//! Targets are an affine map plus (for the default task) a sinusoidal mix,
//! with correlated x-dependent Gaussian noise whose Cholesky factor is known
//! exactly. All coefficients derive from the task seed and are written to the
//! dataset's JSON sidecar, so residuals can be checked against the generative
//! truth and regeneration is byte-exact.

use crate::config::GenerateConfig;
use crate::error::{HarnessError, Result};
use alphacal_core::func::sigmoid;
use alphacal_core::{Matrix, Rng};
use serde::{Deserialize, Serialize};

const COEFF_TAG: u64 = 0x5eed;
const SPLIT_TAG: u64 = 0x5911;
const SAMPLE_TAG: u64 = 0xda7a;

/// Generative coefficients, stored in the sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskCoefficients {
    /// Affine part, one row per output.
    pub linear: Vec<Vec<f64>>,
    pub sin_amp: Vec<f64>,
    pub sin_freq: Vec<Vec<f64>>,
    pub sin_phase: Vec<f64>,
    /// Unit-lower-triangular correlation factor rows.
    pub noise_corr: Vec<Vec<f64>>,
    /// Base per-output noise scale (already multiplied by `noise_scale`).
    pub noise_base: Vec<f64>,
    /// Direction of the x-dependence of each output's noise scale.
    pub noise_dir: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetMeta {
    pub version: u32,
    pub task: String,
    pub seed: u64,
    pub input_dim: usize,
    pub output_dim: usize,
    pub n_points: usize,
    pub noise_scale: f64,
    pub train_noise_scale: f64,
    pub coefficients: TaskCoefficients,
}

/// A fully specified generative task.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub meta: DatasetMeta,
}

impl SyntheticTask {
    /// Derive every coefficient from (task id, seed, dims).
    pub fn new(config: &GenerateConfig, seed: u64) -> Result<Self> {
        let (m, n) = (config.input_dim, config.output_dim);
        let sinusoidal = match config.task.as_str() {
            "affine-sine" => true,
            "linear" => false,
            other => {
                return Err(HarnessError::Usage(format!(
                    "unknown task {other:?}; expected \"affine-sine\" or \"linear\""
                )))
            }
        };
        let mut rng = Rng::from_seed_path(seed, &[COEFF_TAG]);
        let linear: Vec<Vec<f64>> =
            (0..n).map(|_| (0..m).map(|_| 0.7 * rng.uniform_in(-1.0, 1.0)).collect()).collect();
        let sin_amp: Vec<f64> = (0..n)
            .map(|_| if sinusoidal { rng.uniform_in(0.3, 0.8) } else { 0.0 })
            .collect();
        let sin_freq: Vec<Vec<f64>> =
            (0..n).map(|_| (0..m).map(|_| rng.uniform_in(-0.8, 0.8)).collect()).collect();
        let sin_phase: Vec<f64> =
            (0..n).map(|_| rng.uniform_in(0.0, 2.0 * std::f64::consts::PI)).collect();
        let noise_corr: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        if i == j {
                            1.0
                        } else if j < i {
                            rng.uniform_in(-0.4, 0.4)
                        } else {
                            0.0
                        }
                    })
                    .collect()
            })
            .collect();
        let noise_base: Vec<f64> =
            (0..n).map(|_| config.noise_scale * rng.uniform_in(0.1, 0.25)).collect();
        let noise_dir: Vec<Vec<f64>> =
            (0..n).map(|_| (0..m).map(|_| rng.uniform_in(-2.0, 2.0)).collect()).collect();
        Ok(SyntheticTask {
            meta: DatasetMeta {
                version: 1,
                task: config.task.clone(),
                seed,
                input_dim: m,
                output_dim: n,
                n_points: config.n_points,
                noise_scale: config.noise_scale,
                train_noise_scale: config.train_noise_scale,
                coefficients: TaskCoefficients {
                    linear,
                    sin_amp,
                    sin_freq,
                    sin_phase,
                    noise_corr,
                    noise_base,
                    noise_dir,
                },
            },
        })
    }

    pub fn from_meta(meta: DatasetMeta) -> Self {
        SyntheticTask { meta }
    }

    /// Noise-free ground truth f(x).
    pub fn truth(&self, x: &[f64]) -> Vec<f64> {
        let c = &self.meta.coefficients;
        (0..self.meta.output_dim)
            .map(|j| {
                let affine: f64 = c.linear[j].iter().zip(x).map(|(a, v)| a * v).sum();
                let phase: f64 = c.sin_freq[j].iter().zip(x).map(|(w, v)| w * v).sum();
                affine + c.sin_amp[j] * (phase + c.sin_phase[j]).sin()
            })
            .collect()
    }

    /// Lower Cholesky factor of the noise covariance at x:
    /// diag(d(x)) * C with d_j(x) = base_j * (0.9 + 0.1 sigmoid(u_j . x)),
    /// positive definite everywhere the base scales are positive.
    pub fn noise_chol(&self, x: &[f64]) -> Matrix {
        let n = self.meta.output_dim;
        let c = &self.meta.coefficients;
        Matrix::from_fn(n, n, |i, j| {
            if j > i {
                0.0
            } else {
                let proj: f64 = c.noise_dir[i].iter().zip(x).map(|(u, v)| u * v).sum();
                let d = c.noise_base[i] * (0.9 + 0.1 * sigmoid(proj));
                d * c.noise_corr[i][j]
            }
        })
    }

    /// Deterministic 70/10/20 split of row indices by seeded shuffle.
    pub fn split_indices(&self) -> Split {
        split_rows(self.meta.n_points, self.meta.seed)
    }

    /// Generate all rows. Training rows get their noise multiplied by
    /// `train_noise_scale`; validation and test rows use the noise model
    /// verbatim.
    pub fn generate(&self) -> (Matrix, Matrix) {
        let (m, n, points) = (self.meta.input_dim, self.meta.output_dim, self.meta.n_points);
        let split = self.split_indices();
        let mut is_train = vec![false; points];
        for &i in &split.train {
            is_train[i] = true;
        }
        let mut rng = Rng::from_seed_path(self.meta.seed, &[SAMPLE_TAG]);
        let mut xs = Matrix::zeros(points, m);
        let mut ys = Matrix::zeros(points, n);
        for row in 0..points {
            let x: Vec<f64> = (0..m).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let f = self.truth(&x);
            let l = self.noise_chol(&x);
            let z: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let scale = if is_train[row] { self.meta.train_noise_scale } else { 1.0 };
            for j in 0..m {
                xs.set(row, j, x[j]);
            }
            for i in 0..n {
                let mut noise = 0.0;
                for j in 0..=i {
                    noise += l.at(i, j) * z[j];
                }
                ys.set(row, i, f[i] + scale * noise);
            }
        }
        (xs, ys)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// 70% train, 10% validation, remainder test, by seeded shuffle.
pub fn split_rows(n_points: usize, seed: u64) -> Split {
    let mut order: Vec<usize> = (0..n_points).collect();
    let mut rng = Rng::from_seed_path(seed, &[SPLIT_TAG]);
    rng.shuffle(&mut order);
    let n_train = n_points * 7 / 10;
    let n_val = n_points / 10;
    Split {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    }
}
