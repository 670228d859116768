//! Command-line interface.
//!
//! Subcommands: `generate-data`, `train`, `calibrate`, `evaluate`,
//! `sweep-alpha`, `report`. Flags: `--config <path>` (JSON), `--seed`,
//! `--alpha`, `--method`, `--out`. Exit codes: 0 success, 1 usage,
//! 2 numerical failure, 3 I/O.

use crate::checkpoint::{load_calibrator, load_checkpoint, save_calibrator, save_checkpoint};
use crate::config::ExperimentConfig;
use crate::dataset::{generate_dataset, load_dataset};
use crate::error::{HarnessError, Result};
use crate::report::report;
use crate::sweep::{evaluate_sets, fit_method, sweep_alpha, RESULTS_HEADER};
use crate::synthetic::SyntheticTask;
use crate::train::train_model;
use alphacal_core::calibrate::predict_calibrated_batch;
use alphacal_core::metrics::hdi_coverage;
use alphacal_core::metrics::CoverageCurve;
use alphacal_core::{Calibrator, GaussianPrediction, Method, Rng};
use std::path::{Path, PathBuf};

pub const USAGE: &str = "usage: alphacal <command> --config <path> [--seed N] [--alpha X] [--method TAG] [--out DIR]
commands:
  generate-data   write the synthetic dataset CSV and its meta sidecar
  train           train a model, writing checkpoint.json and loss.csv
  calibrate       fit one calibrator on the validation split
  evaluate        metrics, reliability curves, predictions and samples on the test split
  sweep-alpha     the full (method x alpha) experiment grid
  report          reliability CSVs and SVG plots from a sweep's curves.csv
calibration methods: sTS TrilTS LL sLL TrilLL LLmu sLLmean TrilLLmean (and none)";

#[derive(Debug, Clone)]
pub struct CliArgs {
    pub command: String,
    pub config: PathBuf,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub method: Option<String>,
    pub out: Option<PathBuf>,
}

pub fn parse_args(argv: &[String]) -> Result<CliArgs> {
    let mut it = argv.iter();
    let command = it
        .next()
        .ok_or_else(|| HarnessError::Usage(format!("missing command\n{USAGE}")))?
        .clone();
    const COMMANDS: [&str; 6] =
        ["generate-data", "train", "calibrate", "evaluate", "sweep-alpha", "report"];
    if !COMMANDS.contains(&command.as_str()) {
        return Err(HarnessError::Usage(format!("unknown command {command:?}\n{USAGE}")));
    }
    let mut config = None;
    let mut seed = None;
    let mut alpha = None;
    let mut method = None;
    let mut out = None;
    while let Some(flag) = it.next() {
        let mut value = |name: &str| -> Result<String> {
            it.next()
                .cloned()
                .ok_or_else(|| HarnessError::Usage(format!("{name} expects a value")))
        };
        match flag.as_str() {
            "--config" => config = Some(PathBuf::from(value("--config")?)),
            "--seed" => {
                seed = Some(value("--seed")?.parse().map_err(|e| {
                    HarnessError::Usage(format!("--seed expects an unsigned integer: {e}"))
                })?)
            }
            "--alpha" => {
                alpha = Some(value("--alpha")?.parse().map_err(|e| {
                    HarnessError::Usage(format!("--alpha expects a number: {e}"))
                })?)
            }
            "--method" => method = Some(value("--method")?),
            "--out" => out = Some(PathBuf::from(value("--out")?)),
            other => {
                return Err(HarnessError::Usage(format!("unknown flag {other:?}\n{USAGE}")))
            }
        }
    }
    let config =
        config.ok_or_else(|| HarnessError::Usage(format!("--config is required\n{USAGE}")))?;
    Ok(CliArgs { command, config, seed, alpha, method, out })
}

fn load_config(args: &CliArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out_dir = out.clone();
    }
    Ok(config)
}

fn checkpoint_path(config: &ExperimentConfig) -> PathBuf {
    config.out_dir.join("checkpoint.json")
}

pub fn calibrator_filename(method: Method, alpha: Option<f64>) -> String {
    match alpha {
        Some(a) if method.uses_alpha() => format!("calibrator_{}_alpha{}.json", method.tag(), a),
        _ => format!("calibrator_{}.json", method.tag()),
    }
}

fn parse_method(args: &CliArgs) -> Result<Method> {
    let tag = args
        .method
        .as_deref()
        .ok_or_else(|| HarnessError::Usage("--method is required".to_string()))?;
    Method::from_tag(tag)
        .ok_or_else(|| HarnessError::Usage(format!("unknown calibration method {tag:?}")))
}

/// Run one CLI invocation; `argv` excludes the binary name.
pub fn run(argv: &[String]) -> Result<()> {
    let args = parse_args(argv)?;
    match args.command.as_str() {
        "generate-data" => cmd_generate(&args),
        "train" => cmd_train(&args),
        "calibrate" => cmd_calibrate(&args),
        "evaluate" => cmd_evaluate(&args),
        "sweep-alpha" => cmd_sweep(&args),
        "report" => cmd_report(&args),
        _ => unreachable!("command validated in parse_args"),
    }
}

fn cmd_generate(args: &CliArgs) -> Result<()> {
    let config = load_config(args)?;
    let task = SyntheticTask::new(&config.generate, config.seed)?;
    generate_dataset(&task, &config.dataset)?;
    println!("wrote {} and {}", config.dataset.display(), config.meta_path().display());
    Ok(())
}

fn cmd_train(args: &CliArgs) -> Result<()> {
    let mut config = load_config(args)?;
    if let Some(alpha) = args.alpha {
        if alpha == 0.0 {
            return Err(HarnessError::Usage("--alpha 0 is the variational limit; omit it".into()));
        }
        config.training_alpha = crate::config::AlphaSpec::Alpha(alpha);
    }
    let dataset = load_dataset(&config.dataset)?;
    std::fs::create_dir_all(&config.out_dir)?;
    let objective = config.training_alpha.objective();
    let outcome = train_model(&config, &dataset, objective, &[])?;
    save_checkpoint(&outcome.model, &checkpoint_path(&config))?;
    std::fs::write(config.out_dir.join("loss.csv"), &outcome.loss_csv)?;
    println!(
        "trained {} steps, best validation NLL {}",
        outcome.steps, outcome.best_val_nll
    );
    if outcome.diverged {
        return Err(HarnessError::Numerical(
            "training diverged (non-finite loss); checkpoint holds the last good state".into(),
        ));
    }
    Ok(())
}

fn cmd_calibrate(args: &CliArgs) -> Result<()> {
    let config = load_config(args)?;
    let method = parse_method(args)?;
    if method == Method::None {
        return Err(HarnessError::Usage("calibrate needs a real method, not none".to_string()));
    }
    if method.uses_alpha() && args.alpha.is_none() {
        return Err(HarnessError::Usage(format!(
            "--alpha is required for last-layer method {}",
            method.tag()
        )));
    }
    let dataset = load_dataset(&config.dataset)?;
    let model = load_checkpoint(&checkpoint_path(&config))?;
    let alpha = args.alpha.unwrap_or(1.0);
    let (cal, diag) = fit_method(&model, &dataset, method, alpha, &config)?;
    std::fs::create_dir_all(&config.out_dir)?;
    let path = config.out_dir.join(calibrator_filename(method, args.alpha));
    save_calibrator(&cal, &path)?;
    println!(
        "wrote {} (converged={}, objective={})",
        path.display(),
        diag.converged,
        diag.final_objective
    );
    Ok(())
}

fn load_cell_calibrator(config: &ExperimentConfig, args: &CliArgs) -> Result<(String, f64, Calibrator)> {
    match &args.method {
        None => Ok(("none".to_string(), f64::NAN, Calibrator::none())),
        Some(tag) => {
            let method = Method::from_tag(tag)
                .ok_or_else(|| HarnessError::Usage(format!("unknown calibration method {tag:?}")))?;
            if method == Method::None {
                return Ok(("none".to_string(), f64::NAN, Calibrator::none()));
            }
            let path = config.out_dir.join(calibrator_filename(method, args.alpha));
            let cal = load_calibrator(&path).map_err(|e| match e {
                HarnessError::Io(msg) => HarnessError::Io(format!(
                    "{msg}; run `alphacal calibrate --method {tag}` first"
                )),
                other => other,
            })?;
            Ok((tag.clone(), args.alpha.unwrap_or(f64::NAN), cal))
        }
    }
}

fn cmd_evaluate(args: &CliArgs) -> Result<()> {
    let config = load_config(args)?;
    let dataset = load_dataset(&config.dataset)?;
    let model = load_checkpoint(&checkpoint_path(&config))?;
    let (tag, alpha, cal) = load_cell_calibrator(&config, args)?;
    let (test_x, test_y) = dataset.test_xy();
    let mut rng = Rng::from_seed_path(config.seed, &[crate::sweep::EVAL_TAG]);
    let sets = predict_calibrated_batch(&model, &cal, &test_x, config.k_eval, &mut rng)?;
    let metrics = evaluate_sets(&sets, &test_y)?;

    std::fs::create_dir_all(&config.out_dir)?;
    let mut results = String::from(RESULTS_HEADER);
    results.push('\n');
    results.push_str(&format!(
        "{tag},{alpha},ok,{},{},{},{}\n",
        metrics.area, metrics.test_nll, metrics.r2, metrics.epistemic_trace
    ));
    std::fs::write(config.out_dir.join("evaluate_metrics.csv"), &results)?;

    let mut curve = String::from(crate::sweep::CURVES_HEADER);
    curve.push('\n');
    curve.push_str(&metrics.curve.csv_rows(&tag, &format!("{alpha}")));
    std::fs::write(config.out_dir.join("evaluate_curve.csv"), &curve)?;

    // Moment-matched predictions, one CSV row per test point.
    let n = dataset.output_dim();
    let mut preds_csv = GaussianPrediction::csv_header(n);
    preds_csv.push('\n');
    for set in &sets {
        preds_csv.push_str(&alphacal_core::metrics::moment_matched(set)?.csv_row());
        preds_csv.push('\n');
    }
    std::fs::write(config.out_dir.join("predictions.csv"), &preds_csv)?;

    // Posterior samples (128 per point, cycling mixture components), plus
    // per-dimension highest-density-interval coverage curves built from them.
    let draws = 128usize;
    let mut samples_csv = String::from("point,draw,");
    samples_csv.push_str(
        &(0..n).map(|j| format!("y_{j}")).collect::<Vec<_>>().join(","),
    );
    samples_csv.push('\n');
    let mut per_dim: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(sets.len()); n];
    let mut sample_rng = Rng::from_seed_path(config.seed, &[0x35]);
    for (i, set) in sets.iter().enumerate() {
        let mut dims: Vec<Vec<f64>> = vec![Vec::with_capacity(draws); n];
        for d in 0..draws {
            let comp = &set.preds()[d % set.k()];
            let s = comp.sample(&mut sample_rng);
            samples_csv.push_str(&format!(
                "{i},{d},{}\n",
                s.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",")
            ));
            for (j, v) in s.iter().enumerate() {
                dims[j].push(*v);
            }
        }
        for (j, v) in dims.into_iter().enumerate() {
            per_dim[j].push(v);
        }
    }
    std::fs::write(config.out_dir.join("samples.csv"), &samples_csv)?;

    let grid = CoverageCurve::default_grid();
    for (j, samples) in per_dim.iter().enumerate() {
        let targets: Vec<f64> = (0..test_y.rows()).map(|i| test_y.at(i, j)).collect();
        let curve = hdi_coverage(samples, &targets, &grid)?;
        let mut text = String::from(crate::sweep::CURVES_HEADER);
        text.push('\n');
        text.push_str(&curve.csv_rows(&tag, &format!("{alpha}")));
        std::fs::write(config.out_dir.join(format!("hdi_curve_dim{j}.csv")), &text)?;
    }

    println!(
        "method={tag} area={} nll={} r2={} epistemic={}",
        metrics.area, metrics.test_nll, metrics.r2, metrics.epistemic_trace
    );
    Ok(())
}

fn cmd_sweep(args: &CliArgs) -> Result<()> {
    let config = load_config(args)?;
    let dataset = load_dataset(&config.dataset)?;
    let ckpt = checkpoint_path(&config);
    if !ckpt.exists() {
        return Err(HarnessError::Io(format!(
            "no checkpoint at {}; run `alphacal train` first",
            ckpt.display()
        )));
    }
    let model = load_checkpoint(&ckpt)?;
    let output = sweep_alpha(&config, &dataset, &model)?;
    std::fs::create_dir_all(&config.out_dir)?;
    std::fs::write(config.out_dir.join("results.csv"), &output.results_csv)?;
    std::fs::write(config.out_dir.join("curves.csv"), &output.curves_csv)?;
    let failures = output.rows.iter().filter(|r| r.status.starts_with("error")).count();
    println!(
        "sweep wrote {} rows ({failures} failed cells) to {}",
        output.rows.len(),
        config.out_dir.display()
    );
    Ok(())
}

fn cmd_report(args: &CliArgs) -> Result<()> {
    let config = load_config(args)?;
    let curves = config.out_dir.join("curves.csv");
    let out_dir: &Path = &config.out_dir;
    let files = report(&curves, out_dir)?;
    println!("wrote {} files to {}", files.len(), out_dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(parts: &[&str]) -> Vec<String> {
        parts.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parse_full_flag_set() {
        let a = parse_args(&argv(&[
            "train", "--config", "c.json", "--seed", "9", "--alpha", "-1.5", "--method", "sTS",
            "--out", "o",
        ]))
        .unwrap();
        assert_eq!(a.command, "train");
        assert_eq!(a.seed, Some(9));
        assert_eq!(a.alpha, Some(-1.5));
        assert_eq!(a.method.as_deref(), Some("sTS"));
    }

    #[test]
    fn unknown_command_and_flags_are_usage_errors() {
        for bad in [
            argv(&["explode", "--config", "c"]),
            argv(&["train", "--config", "c", "--wat"]),
            argv(&["train"]),
            argv(&[]),
        ] {
            match parse_args(&bad) {
                Err(e @ HarnessError::Usage(_)) => assert_eq!(e.exit_code(), 1),
                other => panic!("expected usage error for {bad:?}, got {other:?}"),
            }
        }
    }

    #[test]
    fn calibrator_filenames_are_stable() {
        assert_eq!(calibrator_filename(Method::Sts, Some(1.0)), "calibrator_sTS.json");
        assert_eq!(
            calibrator_filename(Method::Ll, Some(1.5)),
            "calibrator_LL_alpha1.5.json"
        );
        assert_eq!(
            calibrator_filename(Method::TrilLlMean, Some(-1.0)),
            "calibrator_TrilLLmean_alpha-1.json"
        );
    }
}
