//! Experiment configuration: a JSON document with strict key checking.

use crate::error::{HarnessError, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Training objective selector: the string "vi" or a nonzero alpha.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Alpha(f64),
    Name(VariationalName),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VariationalName {
    #[serde(rename = "vi")]
    Vi,
}

impl AlphaSpec {
    pub fn objective(&self) -> alphacal_core::losses::Objective {
        match self {
            AlphaSpec::Name(_) => alphacal_core::losses::Objective::Vi,
            AlphaSpec::Alpha(a) => alphacal_core::losses::Objective::BbAlpha(*a),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    #[serde(default = "default_task")]
    pub task: String,
    #[serde(default = "default_n_points")]
    pub n_points: usize,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    #[serde(default = "default_output_dim")]
    pub output_dim: usize,
    /// Overall noise magnitude; 0 disables noise entirely.
    #[serde(default = "default_one")]
    pub noise_scale: f64,
    /// Extra factor on the noise of training-split rows only. Values below 1
    /// make the training data cleaner than validation/test, producing a
    /// network that understates its covariance.
    #[serde(default = "default_one")]
    pub train_noise_scale: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            task: default_task(),
            n_points: default_n_points(),
            input_dim: default_input_dim(),
            output_dim: default_output_dim(),
            noise_scale: 1.0,
            train_noise_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FineTuneConfig {
    #[serde(default = "default_ft_steps")]
    pub steps: usize,
    #[serde(default = "default_ft_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_ft_k")]
    pub k: usize,
    #[serde(default = "default_ft_batch")]
    pub batch_size: usize,
    #[serde(default = "default_ft_patience")]
    pub patience_steps: usize,
    /// Weight on the restricted KL term of the fine-tune objective.
    #[serde(default = "default_one")]
    pub kl_weight: f64,
    #[serde(default = "default_ft_eval_every")]
    pub eval_every: usize,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            steps: default_ft_steps(),
            learning_rate: default_ft_lr(),
            k: default_ft_k(),
            batch_size: default_ft_batch(),
            patience_steps: default_ft_patience(),
            kl_weight: 1.0,
            eval_every: default_ft_eval_every(),
        }
    }
}

impl FineTuneConfig {
    pub fn settings(&self) -> alphacal_core::calibrate::FineTuneSettings {
        alphacal_core::calibrate::FineTuneSettings {
            steps: self.steps,
            learning_rate: self.learning_rate,
            k: self.k,
            batch_size: self.batch_size,
            kl_weight: self.kl_weight,
            patience_steps: self.patience_steps,
            eval_every: self.eval_every,
            eval_k: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Path of the dataset CSV; the `.meta.json` sidecar sits next to it.
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_one")]
    pub prior_sigma: f64,
    #[serde(default = "default_training_alpha")]
    pub training_alpha: AlphaSpec,
    #[serde(default = "default_k_train")]
    pub k_train: usize,
    #[serde(default = "default_k_eval")]
    pub k_eval: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_one")]
    pub kl_weight: f64,
    /// Epochs over which the KL weight ramps linearly from 0; 0 disables the
    /// warm-up.
    #[serde(default)]
    pub kl_warmup_epochs: usize,
    /// Calibration methods for the sweep; "trained" adds baseline rows whose
    /// checkpoints are trained directly at each grid alpha.
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default = "default_alpha_grid")]
    pub alpha_grid: Vec<f64>,
    #[serde(default)]
    pub fine_tune: FineTuneConfig,
    #[serde(default)]
    pub generate: GenerateConfig,
}

fn default_task() -> String {
    "affine-sine".to_string()
}
fn default_n_points() -> usize {
    14_000
}
fn default_input_dim() -> usize {
    8
}
fn default_output_dim() -> usize {
    3
}
fn default_one() -> f64 {
    1.0
}
fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}
fn default_training_alpha() -> AlphaSpec {
    AlphaSpec::Name(VariationalName::Vi)
}
fn default_k_train() -> usize {
    4
}
fn default_k_eval() -> usize {
    64
}
fn default_epochs() -> usize {
    50
}
fn default_batch_size() -> usize {
    128
}
fn default_lr() -> f64 {
    3e-3
}
fn default_methods() -> Vec<String> {
    vec![
        "trained".to_string(),
        "sTS".to_string(),
        "TrilTS".to_string(),
        "LL".to_string(),
        "sLL".to_string(),
        "TrilLL".to_string(),
        "LLmu".to_string(),
        "sLLmean".to_string(),
        "TrilLLmean".to_string(),
    ]
}
fn default_alpha_grid() -> Vec<f64> {
    vec![-2.0, -1.0, -0.5, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0]
}
fn default_ft_steps() -> usize {
    600
}
fn default_ft_lr() -> f64 {
    1.5e-2
}
fn default_ft_k() -> usize {
    16
}
fn default_ft_batch() -> usize {
    256
}
fn default_ft_patience() -> usize {
    300
}
fn default_ft_eval_every() -> usize {
    25
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let config: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Usage(format!("invalid config {}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        let positive_counts = [
            ("k_train", self.k_train),
            ("k_eval", self.k_eval),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("fine_tune.k", self.fine_tune.k),
            ("fine_tune.batch_size", self.fine_tune.batch_size),
            ("fine_tune.eval_every", self.fine_tune.eval_every),
            ("generate.n_points", self.generate.n_points),
            ("generate.input_dim", self.generate.input_dim),
            ("generate.output_dim", self.generate.output_dim),
        ];
        for (name, v) in positive_counts {
            if v == 0 {
                return Err(HarnessError::Usage(format!("{name} must be positive")));
            }
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(HarnessError::Usage("hidden widths must be positive".to_string()));
        }
        if self.prior_sigma <= 0.0 {
            return Err(HarnessError::Usage("prior_sigma must be positive".to_string()));
        }
        if self.learning_rate <= 0.0 || self.fine_tune.learning_rate <= 0.0 {
            return Err(HarnessError::Usage("learning rates must be positive".to_string()));
        }
        if let AlphaSpec::Alpha(a) = self.training_alpha {
            if a == 0.0 {
                return Err(HarnessError::Usage(
                    "training_alpha 0 is the variational limit; use \"vi\"".to_string(),
                ));
            }
        }
        if self.alpha_grid.is_empty() {
            return Err(HarnessError::Usage("alpha_grid must not be empty".to_string()));
        }
        if self.alpha_grid.iter().any(|&a| a == 0.0 || !a.is_finite()) {
            return Err(HarnessError::Usage(
                "alpha_grid entries must be finite and nonzero".to_string(),
            ));
        }
        for m in &self.methods {
            if m != "trained" && alphacal_core::Method::from_tag(m).is_none() {
                return Err(HarnessError::Usage(format!("unknown calibration method {m:?}")));
            }
        }
        if self.generate.noise_scale < 0.0 || self.generate.train_noise_scale < 0.0 {
            return Err(HarnessError::Usage("noise scales must be non-negative".to_string()));
        }
        Ok(())
    }

    /// Path of the dataset's JSON sidecar.
    pub fn meta_path(&self) -> PathBuf {
        meta_path_for(&self.dataset)
    }
}

pub fn meta_path_for(dataset: &Path) -> PathBuf {
    let stem = dataset.with_extension("");
    PathBuf::from(format!("{}.meta.json", stem.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> String {
        r#"{"seed": 7, "dataset": "data/task.csv", "out_dir": "runs/a"}"#.to_string()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c: ExperimentConfig = serde_json::from_str(&minimal_json()).unwrap();
        c.validate().unwrap();
        assert_eq!(c.hidden, vec![64, 64]);
        assert_eq!(c.k_eval, 64);
        assert_eq!(c.alpha_grid.len(), 11);
        assert!(matches!(c.training_alpha, AlphaSpec::Name(VariationalName::Vi)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let json = r#"{"seed": 1, "dataset": "d.csv", "out_dir": "o", "bogus": 3}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(json).is_err());
    }

    #[test]
    fn zero_alpha_in_grid_is_rejected() {
        let json =
            r#"{"seed": 1, "dataset": "d.csv", "out_dir": "o", "alpha_grid": [1.0, 0.0]}"#;
        let c: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn numeric_training_alpha_parses() {
        let json = r#"{"seed": 1, "dataset": "d.csv", "out_dir": "o", "training_alpha": 1.5}"#;
        let c: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.training_alpha, AlphaSpec::Alpha(1.5));
        let json = r#"{"seed": 1, "dataset": "d.csv", "out_dir": "o", "training_alpha": "vi"}"#;
        let c: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert!(matches!(c.training_alpha, AlphaSpec::Name(VariationalName::Vi)));
    }

    #[test]
    fn bad_method_is_rejected() {
        let json = r#"{"seed": 1, "dataset": "d.csv", "out_dir": "o", "methods": ["platt"]}"#;
        let c: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn meta_path_swaps_extension() {
        assert_eq!(
            meta_path_for(Path::new("data/task.csv")),
            PathBuf::from("data/task.meta.json")
        );
    }
}
