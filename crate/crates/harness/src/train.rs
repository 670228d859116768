//! Minibatch training loop with per-step loss logging and best-validation
//! checkpointing.

use crate::config::ExperimentConfig;
use crate::dataset::Dataset;
use crate::error::Result;
use alphacal_core::adam::{AdamConfig, AdamState};
use alphacal_core::losses::{loss_and_grads, LossReport, LossSettings, Objective};
use alphacal_core::metrics::test_nll_mc;
use alphacal_core::{BnnModel, CoreError, Matrix, Rng};

const INIT_TAG: u64 = 0x11;
const STEP_TAG: u64 = 0x12;
const VAL_TAG: u64 = 0x13;

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: BnnModel,
    pub best_val_nll: f64,
    pub loss_csv: String,
    pub steps: usize,
    /// Training hit a non-finite loss or gradient and stopped; `model` is the
    /// last good checkpoint.
    pub diverged: bool,
}

/// Train a fresh model on the dataset's training split, checkpointing the
/// epoch with the best validation NLL. `seed_path` isolates this run's random
/// streams from other runs under the same experiment seed.
pub fn train_model(
    config: &ExperimentConfig,
    dataset: &Dataset,
    objective: Objective,
    seed_path: &[u64],
) -> Result<TrainResult> {
    let mut init_path = seed_path.to_vec();
    init_path.push(INIT_TAG);
    let mut step_path = seed_path.to_vec();
    step_path.push(STEP_TAG);
    let mut val_path = seed_path.to_vec();
    val_path.push(VAL_TAG);

    let mut init_rng = Rng::from_seed_path(config.seed, &init_path);
    let mut model = BnnModel::new(
        dataset.input_dim(),
        &config.hidden,
        dataset.output_dim(),
        config.prior_sigma,
        &mut init_rng,
    )?;

    let (train_x, train_y) = dataset.train_xy();
    let (val_x, val_y) = dataset.val_xy();
    let n_train = train_x.rows();
    let val_seed = Rng::from_seed_path(config.seed, &val_path).next_u64();
    let k_val = config.k_eval.min(8);

    let mut rng = Rng::from_seed_path(config.seed, &step_path);
    let mut adam =
        AdamState::new(AdamConfig::with_learning_rate(config.learning_rate), &model.param_refs());

    let mut csv = String::from(LossReport::CSV_HEADER);
    csv.push('\n');
    let mut best: Option<(f64, BnnModel)> = None;
    let mut diverged = false;
    let mut step = 0usize;
    let mut order: Vec<usize> = (0..n_train).collect();

    'epochs: for epoch in 0..config.epochs {
        let kl_weight = if config.kl_warmup_epochs > 0 {
            config.kl_weight * ((epoch + 1) as f64 / config.kl_warmup_epochs as f64).min(1.0)
        } else {
            config.kl_weight
        };
        rng.shuffle(&mut order);
        let mut start = 0;
        while start < n_train {
            let end = (start + config.batch_size).min(n_train);
            let idx = &order[start..end];
            start = end;
            let bx = train_x.take_rows(idx);
            let by = train_y.take_rows(idx);
            let settings = LossSettings::new(config.k_train, kl_weight, n_train);
            let outcome = loss_and_grads(&model, &bx, &by, objective, &settings, &mut rng);
            let (report, grads) = match outcome {
                Ok(v) => v,
                Err(CoreError::NonFiniteLoss) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e.into()),
            };
            step += 1;
            csv.push_str(&report.csv_row(step));
            csv.push('\n');
            match adam.step(&mut model.param_mut_refs(), &grads) {
                Ok(()) => {}
                Err(CoreError::NonFiniteGradient) => {
                    diverged = true;
                    break 'epochs;
                }
                Err(e) => return Err(e.into()),
            }
        }

        let mut val_rng = Rng::from_seed(val_seed);
        let sets = model.mc_predict_batch(&val_x, k_val, &mut val_rng)?;
        let val_nll = test_nll_mc(&sets, &val_y)?;
        if val_nll.is_finite() && best.as_ref().map_or(true, |(b, _)| val_nll < *b) {
            best = Some((val_nll, model.clone()));
        }
    }

    let (best_val_nll, model) = best.unwrap_or((f64::NAN, model));
    Ok(TrainResult { model, best_val_nll, loss_csv: csv, steps: step, diverged })
}

/// Deterministic mixture-NLL evaluation used across the harness.
pub fn mixture_nll(
    model: &BnnModel,
    xs: &Matrix,
    ys: &Matrix,
    k: usize,
    seed: u64,
) -> Result<f64> {
    let mut rng = Rng::from_seed(seed);
    let sets = model.mc_predict_batch(xs, k, &mut rng)?;
    Ok(test_nll_mc(&sets, ys)?)
}
