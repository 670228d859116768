//! The alpha-sweep experiment driver: for every configured calibration
//! method and every grid alpha, fit on the validation split and evaluate on
//! the test split; `trained` baseline rows train a fresh network directly at
//! each alpha instead. Cells run on a small worker pool over immutable
//! snapshots and are gathered in a fixed (method, alpha) order, so the output
//! CSVs are byte-stable.

use crate::config::ExperimentConfig;
use crate::dataset::Dataset;
use crate::error::{HarnessError, Result};
use crate::train::train_model;
use alphacal_core::calibrate::{
    fit_last_layer, fit_sts, fit_trilts, predict_calibrated_batch, Calibrator, FitDiagnostics,
    TrilFitSettings,
};
use alphacal_core::losses::Objective;
use alphacal_core::metrics::{
    area_score, coverage_curve, decompose_uncertainty, moment_matched, r_squared, test_nll_mc,
    CoverageCurve, ThresholdMode,
};
use alphacal_core::{BnnModel, Matrix, McPredictionSet, Method, Rng};
use std::collections::VecDeque;
use std::sync::Mutex;

pub(crate) const EVAL_TAG: u64 = 0x31;
const FIT_TAG: u64 = 0x32;
const TRAINED_TAG: u64 = 0x33;

pub const RESULTS_HEADER: &str = "method,alpha,status,area_score,test_nll,r2,epistemic_trace";
pub const CURVES_HEADER: &str = "nominal,empirical,method,alpha";

#[derive(Debug, Clone)]
pub struct CellMetrics {
    pub area: f64,
    pub test_nll: f64,
    pub r2: f64,
    pub epistemic_trace: f64,
    pub curve: CoverageCurve,
}

#[derive(Debug, Clone)]
pub struct CellOut {
    pub method: String,
    pub alpha: f64,
    pub status: String,
    pub metrics: Option<CellMetrics>,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub results_csv: String,
    pub curves_csv: String,
    pub rows: Vec<CellOut>,
}

/// Reliability curve plus scalar metrics for a batch of prediction sets.
pub fn evaluate_sets(sets: &[McPredictionSet], targets: &Matrix) -> Result<CellMetrics> {
    let preds = sets.iter().map(moment_matched).collect::<alphacal_core::Result<Vec<_>>>()?;
    let curve =
        coverage_curve(&preds, targets, &CoverageCurve::default_grid(), ThresholdMode::Chi2)?;
    let area = area_score(&curve)?;
    let nll = test_nll_mc(sets, targets)?;
    let means = Matrix::from_fn(sets.len(), sets[0].dim(), |i, j| sets[i].mixture_mean()[j]);
    let r2 = r_squared(&means, targets)?;
    let epistemic = sets
        .iter()
        .map(|s| decompose_uncertainty(s).epistemic_trace())
        .sum::<f64>()
        / sets.len() as f64;
    Ok(CellMetrics { area, test_nll: nll, r2, epistemic_trace: epistemic, curve })
}

/// Fit one calibration method on the validation split. Temperature-scaling
/// methods fit against the moment-matched Monte Carlo predictive (the same
/// object the evaluation thresholds use); last-layer methods fine-tune under
/// the given alpha.
pub fn fit_method(
    model: &BnnModel,
    dataset: &Dataset,
    method: Method,
    alpha: f64,
    config: &ExperimentConfig,
) -> Result<(Calibrator, FitDiagnostics)> {
    let (val_x, val_y) = dataset.val_xy();
    let val_predictive = || -> Result<Vec<alphacal_core::GaussianPrediction>> {
        let mut rng = Rng::from_seed_path(config.seed, &[EVAL_TAG, 1]);
        let sets = model.mc_predict_batch(&val_x, config.k_eval, &mut rng)?;
        Ok(sets.iter().map(moment_matched).collect::<alphacal_core::Result<Vec<_>>>()?)
    };
    match method {
        Method::None => Ok((
            Calibrator::none(),
            FitDiagnostics {
                converged: true,
                degenerate: false,
                underdetermined: false,
                aborted_non_finite: false,
                final_objective: f64::NAN,
                steps_run: 0,
            },
        )),
        Method::Sts => {
            let preds = val_predictive()?;
            Ok(fit_sts(&preds, &val_y)?)
        }
        Method::TrilTs => {
            let preds = val_predictive()?;
            Ok(fit_trilts(&preds, &val_y, &TrilFitSettings::default())?)
        }
        _ => {
            let mut rng = Rng::from_seed_path(
                config.seed,
                &[FIT_TAG, method_rank(method.tag()) as u64, alpha.to_bits()],
            );
            let settings = config.fine_tune.settings();
            Ok(fit_last_layer(model, &val_x, &val_y, alpha, method, &settings, &mut rng)?)
        }
    }
}

fn method_rank(tag: &str) -> usize {
    const ORDER: [&str; 10] =
        ["none", "trained", "sTS", "TrilTS", "LL", "sLL", "TrilLL", "LLmu", "sLLmean", "TrilLLmean"];
    ORDER.iter().position(|&m| m == tag).unwrap_or(ORDER.len())
}

fn eval_seed_rng(config: &ExperimentConfig) -> Rng {
    Rng::from_seed_path(config.seed, &[EVAL_TAG])
}

/// Run the full sweep. The base model must already be trained with the
/// config's training objective.
pub fn sweep_alpha(
    config: &ExperimentConfig,
    dataset: &Dataset,
    base_model: &BnnModel,
) -> Result<SweepOutput> {
    let (test_x, test_y) = dataset.test_xy();

    // Shared base evaluation: the uncalibrated prediction sets, reused by the
    // temperature methods so means (and epistemic spread) stay bit-identical.
    let base_sets = base_model.mc_predict_batch(&test_x, config.k_eval, &mut eval_seed_rng(config))?;
    let base_metrics = evaluate_sets(&base_sets, &test_y)?;

    // The uncalibrated baseline is always reported; its metrics do not
    // depend on alpha, so the rows repeat across the grid.
    let mut rows: Vec<CellOut> = Vec::new();
    for &alpha in &config.alpha_grid {
        rows.push(CellOut {
            method: "none".to_string(),
            alpha,
            status: "ok".to_string(),
            metrics: Some(base_metrics.clone()),
        });
    }

    // Temperature methods: alpha-independent, fitted once, applied to the
    // shared base sets.
    for method in [Method::Sts, Method::TrilTs] {
        if !config.methods.iter().any(|m| m == method.tag()) {
            continue;
        }
        let cell = (|| -> Result<CellMetrics> {
            let (cal, _) = fit_method(base_model, dataset, method, 0.0, config)?;
            let sets: Vec<McPredictionSet> = base_sets
                .iter()
                .map(|s| s.map(|p| cal.apply(p)))
                .collect::<alphacal_core::Result<Vec<_>>>()?;
            evaluate_sets(&sets, &test_y)
        })();
        for &alpha in &config.alpha_grid {
            match &cell {
                Ok(m) => rows.push(CellOut {
                    method: method.tag().to_string(),
                    alpha,
                    status: "ok".to_string(),
                    metrics: Some(m.clone()),
                }),
                Err(e) => rows.push(CellOut {
                    method: method.tag().to_string(),
                    alpha,
                    status: format!("error: {e}"),
                    metrics: None,
                }),
            }
        }
    }

    // Heavy cells: last-layer fine-tunes and trained-at-alpha baselines.
    struct Cell {
        method: String,
        alpha: f64,
    }
    let mut heavy: VecDeque<Cell> = VecDeque::new();
    for m in &config.methods {
        if m == "trained" {
            for &alpha in &config.alpha_grid {
                heavy.push_back(Cell { method: "trained".to_string(), alpha });
            }
        } else if let Some(method) = Method::from_tag(m) {
            if method.is_last_layer_family() {
                for &alpha in &config.alpha_grid {
                    heavy.push_back(Cell { method: m.clone(), alpha });
                }
            }
        }
    }

    let queue = Mutex::new(heavy);
    let done: Mutex<Vec<CellOut>> = Mutex::new(Vec::new());
    let workers = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let cell = match queue.lock().unwrap().pop_front() {
                    Some(c) => c,
                    None => break,
                };
                let outcome = run_heavy_cell(config, dataset, base_model, &cell.method, cell.alpha, &test_x, &test_y);
                let out = match outcome {
                    Ok((status, metrics)) => CellOut {
                        method: cell.method,
                        alpha: cell.alpha,
                        status,
                        metrics: Some(metrics),
                    },
                    Err(e) => CellOut {
                        method: cell.method,
                        alpha: cell.alpha,
                        status: format!("error: {e}"),
                        metrics: None,
                    },
                };
                done.lock().unwrap().push(out);
            });
        }
    });
    rows.extend(done.into_inner().unwrap());

    rows.sort_by(|a, b| {
        method_rank(&a.method)
            .cmp(&method_rank(&b.method))
            .then(a.alpha.partial_cmp(&b.alpha).unwrap())
    });

    let mut results_csv = String::from(RESULTS_HEADER);
    results_csv.push('\n');
    let mut curves_csv = String::from(CURVES_HEADER);
    curves_csv.push('\n');
    for row in &rows {
        match &row.metrics {
            Some(m) => {
                results_csv.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    row.method, row.alpha, row.status, m.area, m.test_nll, m.r2, m.epistemic_trace
                ));
                curves_csv.push_str(&m.curve.csv_rows(&row.method, &format!("{}", row.alpha)));
            }
            None => {
                results_csv.push_str(&format!(
                    "{},{},{},NaN,NaN,NaN,NaN\n",
                    row.method, row.alpha, row.status
                ));
            }
        }
    }
    Ok(SweepOutput { results_csv, curves_csv, rows })
}

fn run_heavy_cell(
    config: &ExperimentConfig,
    dataset: &Dataset,
    base_model: &BnnModel,
    method: &str,
    alpha: f64,
    test_x: &Matrix,
    test_y: &Matrix,
) -> Result<(String, CellMetrics)> {
    if method == "trained" {
        let outcome =
            train_model(config, dataset, Objective::BbAlpha(alpha), &[TRAINED_TAG, alpha.to_bits()])?;
        let sets = outcome.model.mc_predict_batch(test_x, config.k_eval, &mut eval_seed_rng(config))?;
        let metrics = evaluate_sets(&sets, test_y)?;
        let status = if outcome.diverged { "diverged".to_string() } else { "ok".to_string() };
        Ok((status, metrics))
    } else {
        let m = Method::from_tag(method)
            .ok_or_else(|| HarnessError::Usage(format!("unknown method {method:?}")))?;
        let (cal, diag) = fit_method(base_model, dataset, m, alpha, config)?;
        let sets = predict_calibrated_batch(
            base_model,
            &cal,
            test_x,
            config.k_eval,
            &mut eval_seed_rng(config),
        )?;
        let metrics = evaluate_sets(&sets, test_y)?;
        let status = if diag.aborted_non_finite { "aborted".to_string() } else { "ok".to_string() };
        Ok((status, metrics))
    }
}
