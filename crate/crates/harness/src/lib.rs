//! Experiment harness around `alphacal-core`: synthetic heteroscedastic
//! regression data, dataset/config/checkpoint files, the training loop, the
//! (method x alpha) calibration sweep, reliability reporting, and the CLI.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod report;
pub mod sweep;
pub mod synthetic;
pub mod train;

pub use config::ExperimentConfig;
pub use dataset::Dataset;
pub use error::{HarnessError, Result};
