//! Adam optimizer over lists of matrices.

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig { learning_rate, ..AdamConfig::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// Per-parameter first and second moment accumulators plus the step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    /// Accumulators shaped like `params`, step zero.
    pub fn new(config: AdamConfig, params: &[&Matrix]) -> Self {
        let first = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        let second = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        AdamState { config, step: 0, first, second }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update, in place. Gradients may be `None` for
    /// frozen parameters, which are left untouched.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Option<Matrix>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(CoreError::ShapeMismatch {
                context: "adam step",
                expected: format!("{} parameters", self.first.len()),
                got: format!("{} params / {} grads", params.len(), grads.len()),
            });
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.shape() != params[i].shape() {
                    return Err(CoreError::ShapeMismatch {
                        context: "adam step",
                        expected: format!("{:?}", params[i].shape()),
                        got: format!("{:?}", g.shape()),
                    });
                }
                if !g.is_finite() {
                    return Err(CoreError::NonFiniteGradient);
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let AdamConfig { learning_rate, beta1, beta2, epsilon } = self.config;
        let bias1 = 1.0 - beta1.powi(t);
        let bias2 = 1.0 - beta2.powi(t);
        for (i, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let p = params[i].data_mut();
            for ((pv, (mv, vv)), gv) in p
                .iter_mut()
                .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()))
                .zip(grad.data())
            {
                *mv = beta1 * *mv + (1.0 - beta1) * gv;
                *vv = beta2 * *vv + (1.0 - beta2) * gv * gv;
                let m_hat = *mv / bias1;
                let v_hat = *vv / bias2;
                *pv -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}
