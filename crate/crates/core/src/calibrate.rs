//! Post-hoc calibration of the predictive covariance.
//!
//! Two families, fitted on a held-out split and applied at prediction time:
//!
//! - Temperature scaling: a single positive scalar (`sTS`, covariance s *
//!   Sigma) or a lower-triangular matrix (`TrilTS`, covariance L^T Sigma L),
//!   fitted by minimizing held-out NLL. Neither touches the predictive mean.
//! - Last-layer fine-tuning: re-optimizes only the final variational layer
//!   under the alpha-divergence objective (`LL`), optionally restricted to
//!   the weights feeding the mean outputs (`LLmu`), and optionally with a
//!   scalar or triangular temperature co-fitted jointly (`sLL`, `TrilLL`,
//!   `sLLmean`, `TrilLLmean`).

use crate::adam::{AdamConfig, AdamState};
use crate::bnn::{BnnModel, McPredictionSet, Trainable, VariationalLayer};
use crate::error::{CoreError, Result};
use crate::func::{softplus, softplus_inv};
use crate::gaussian::{GaussianPrediction, DIAG_FLOOR};
use crate::linalg::{tril_index, tril_len, Matrix};
use crate::losses::kl_pair_tape;
use crate::metrics::test_nll_mc;
use crate::rng::Rng;
use crate::tape::Tape;

/// Calibration method tags. `LLmu` retrains only the mean-feeding columns of
/// the head; the `mean` suffixed variants are its temperature-augmented
/// forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    None,
    Sts,
    TrilTs,
    Ll,
    SLl,
    TrilLl,
    LlMu,
    SLlMean,
    TrilLlMean,
}

impl Method {
    pub const ALL_PROPOSED: [Method; 8] = [
        Method::Sts,
        Method::TrilTs,
        Method::Ll,
        Method::SLl,
        Method::TrilLl,
        Method::LlMu,
        Method::SLlMean,
        Method::TrilLlMean,
    ];

    pub fn tag(&self) -> &'static str {
        match self {
            Method::None => "none",
            Method::Sts => "sTS",
            Method::TrilTs => "TrilTS",
            Method::Ll => "LL",
            Method::SLl => "sLL",
            Method::TrilLl => "TrilLL",
            Method::LlMu => "LLmu",
            Method::SLlMean => "sLLmean",
            Method::TrilLlMean => "TrilLLmean",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Method> {
        match tag {
            "none" => Some(Method::None),
            "sTS" => Some(Method::Sts),
            "TrilTS" => Some(Method::TrilTs),
            "LL" => Some(Method::Ll),
            "sLL" => Some(Method::SLl),
            "TrilLL" => Some(Method::TrilLl),
            "LLmu" => Some(Method::LlMu),
            "sLLmean" => Some(Method::SLlMean),
            "TrilLLmean" => Some(Method::TrilLlMean),
            _ => None,
        }
    }

    pub fn is_last_layer_family(&self) -> bool {
        matches!(
            self,
            Method::Ll | Method::SLl | Method::TrilLl | Method::LlMu | Method::SLlMean | Method::TrilLlMean
        )
    }

    pub fn is_mean_only(&self) -> bool {
        matches!(self, Method::LlMu | Method::SLlMean | Method::TrilLlMean)
    }

    pub fn has_scalar_temp(&self) -> bool {
        matches!(self, Method::Sts | Method::SLl | Method::SLlMean)
    }

    pub fn has_tril_temp(&self) -> bool {
        matches!(self, Method::TrilTs | Method::TrilLl | Method::TrilLlMean)
    }

    /// Whether fitting depends on the alpha hyperparameter at all.
    pub fn uses_alpha(&self) -> bool {
        self.is_last_layer_family()
    }
}

/// A fitted calibration transform.
#[derive(Debug, Clone)]
pub struct Calibrator {
    method: Method,
    alpha: Option<f64>,
    s: Option<f64>,
    l: Option<Matrix>,
    last_layer: Option<VariationalLayer>,
}

impl Calibrator {
    pub fn none() -> Self {
        Calibrator { method: Method::None, alpha: None, s: None, l: None, last_layer: None }
    }

    pub fn sts(s: f64) -> Result<Self> {
        if s <= 0.0 {
            return Err(CoreError::Domain(format!("temperature must be positive, got {s}")));
        }
        Ok(Calibrator { method: Method::Sts, alpha: None, s: Some(s), l: None, last_layer: None })
    }

    pub fn trilts(l: Matrix) -> Result<Self> {
        validate_triangle(&l)?;
        Ok(Calibrator { method: Method::TrilTs, alpha: None, s: None, l: Some(l), last_layer: None })
    }

    /// Last-layer family constructor; the populated temperature field must
    /// match the tag.
    pub fn last_layer_family(
        method: Method,
        alpha: f64,
        layer: VariationalLayer,
        s: Option<f64>,
        l: Option<Matrix>,
    ) -> Result<Self> {
        if !method.is_last_layer_family() {
            return Err(CoreError::Domain(format!("{} is not a last-layer method", method.tag())));
        }
        if method.has_scalar_temp() != s.is_some() || method.has_tril_temp() != l.is_some() {
            return Err(CoreError::Domain(format!(
                "temperature fields do not match method {}",
                method.tag()
            )));
        }
        if let Some(s) = s {
            if s <= 0.0 {
                return Err(CoreError::Domain(format!("temperature must be positive, got {s}")));
            }
        }
        if let Some(l) = &l {
            validate_triangle(l)?;
        }
        Ok(Calibrator { method, alpha: Some(alpha), s, l, last_layer: Some(layer) })
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn alpha(&self) -> Option<f64> {
        self.alpha
    }

    pub fn scalar_temp(&self) -> Option<f64> {
        self.s
    }

    pub fn tril_temp(&self) -> Option<&Matrix> {
        self.l.as_ref()
    }

    pub fn replacement_layer(&self) -> Option<&VariationalLayer> {
        self.last_layer.as_ref()
    }

    /// The temperature part of the transform. Scalar: factor scaled by
    /// sqrt(s). Triangular: Sigma -> L^T Sigma L, re-factorized. The mean is
    /// never touched. Plain LL/LLmu (and `none`) pass predictions through
    /// unchanged; their effect lives in the replaced layer.
    pub fn apply(&self, pred: &GaussianPrediction) -> Result<GaussianPrediction> {
        match (self.s, &self.l) {
            (None, None) => Ok(pred.clone()),
            (Some(s), None) => {
                GaussianPrediction::new(pred.mean().to_vec(), pred.chol().scale(s.sqrt()))
            }
            (None, Some(l)) => {
                if l.rows() != pred.dim() {
                    return Err(CoreError::ShapeMismatch {
                        context: "Calibrator::apply",
                        expected: format!("{0}x{0} temperature", pred.dim()),
                        got: format!("{:?}", l.shape()),
                    });
                }
                let m = pred.chol().transpose().matmul(l);
                let sigma = m.transpose().matmul(&m);
                let chol = sigma.cholesky().map_err(|e| {
                    CoreError::Numerical(format!(
                        "re-factorization of scaled covariance failed ({e}); matrix {:?}",
                        sigma
                    ))
                })?;
                GaussianPrediction::new(pred.mean().to_vec(), chol)
            }
            (Some(_), Some(_)) => Err(CoreError::Domain(
                "calibrator has both scalar and triangular temperatures".to_string(),
            )),
        }
    }

    /// The model this calibrator predicts with: the base model with its last
    /// layer swapped for the fine-tuned one (last-layer family), or the base
    /// model unchanged.
    pub fn calibrated_model(&self, base: &BnnModel) -> Result<BnnModel> {
        let mut model = base.clone();
        if let Some(layer) = &self.last_layer {
            model.replace_last_layer(layer.clone())?;
        }
        Ok(model)
    }
}

fn validate_triangle(l: &Matrix) -> Result<()> {
    if l.rows() != l.cols() {
        return Err(CoreError::ShapeMismatch {
            context: "calibration triangle",
            expected: "square".to_string(),
            got: format!("{:?}", l.shape()),
        });
    }
    for i in 0..l.rows() {
        if l.at(i, i) <= 0.0 {
            return Err(CoreError::Domain(format!(
                "triangle diagonal must be positive; entry {i} is {}",
                l.at(i, i)
            )));
        }
        for j in i + 1..l.cols() {
            if l.at(i, j) != 0.0 {
                return Err(CoreError::Domain("temperature matrix must be lower triangular".to_string()));
            }
        }
    }
    Ok(())
}

/// Fit outcome bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitDiagnostics {
    pub converged: bool,
    /// Closed-form fit hit its degeneracy floor.
    pub degenerate: bool,
    /// Fewer residual degrees of freedom than free parameters.
    pub underdetermined: bool,
    /// Fine-tune hit a non-finite loss and fell back to the best iterate.
    pub aborted_non_finite: bool,
    pub final_objective: f64,
    pub steps_run: usize,
}

impl FitDiagnostics {
    fn clean(final_objective: f64, steps_run: usize) -> Self {
        FitDiagnostics {
            converged: true,
            degenerate: false,
            underdetermined: false,
            aborted_non_finite: false,
            final_objective,
            steps_run,
        }
    }
}

/// Closed-form scalar temperature: s* = sum_i mahalanobis^2_i / (D * N),
/// the exact minimizer of the held-out Gaussian NLL in s. Degenerate
/// (all-zero residual) fits are floored at 1e-12 and flagged.
pub fn fit_sts(
    preds: &[GaussianPrediction],
    targets: &Matrix,
) -> Result<(Calibrator, FitDiagnostics)> {
    if preds.is_empty() {
        return Err(CoreError::EmptyInput("fit_sts calibration split"));
    }
    if targets.rows() != preds.len() || targets.cols() != preds[0].dim() {
        return Err(CoreError::ShapeMismatch {
            context: "fit_sts",
            expected: format!("{}x{}", preds.len(), preds[0].dim()),
            got: format!("{:?}", targets.shape()),
        });
    }
    let n = preds[0].dim() as f64;
    let mut total = 0.0;
    for (i, p) in preds.iter().enumerate() {
        total += p.mahalanobis_sq(targets.row(i))?;
    }
    let raw = total / (preds.len() as f64 * n);
    let degenerate = raw < 1e-12;
    let s = raw.max(1e-12);
    let mut diag = FitDiagnostics::clean(s, 0);
    diag.degenerate = degenerate;
    Ok((Calibrator::sts(s)?, diag))
}

#[derive(Debug, Clone, Copy)]
pub struct TrilFitSettings {
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for TrilFitSettings {
    fn default() -> Self {
        TrilFitSettings { steps: 400, learning_rate: 0.02 }
    }
}

/// Triangular temperature fitted by gradient descent on the held-out mean
/// NLL of N(mu, L^T Sigma L), diagonal kept positive through softplus,
/// initialized at sqrt(s*) I from the closed-form scalar fit.
pub fn fit_trilts(
    preds: &[GaussianPrediction],
    targets: &Matrix,
    settings: &TrilFitSettings,
) -> Result<(Calibrator, FitDiagnostics)> {
    let (scalar, _) = fit_sts(preds, targets)?;
    let n = preds[0].dim();
    let t = tril_len(n);
    let d = preds.len();
    let floor = 1e-9;

    let mut raw = Matrix::zeros(1, t);
    let init_diag = softplus_inv((scalar.scalar_temp().unwrap().sqrt() - floor).max(1e-12));
    for i in 0..n {
        raw.set(0, tril_index(i, i), init_diag);
    }

    // Per-example constants reused across steps.
    let chol_ts: Vec<Matrix> = preds.iter().map(|p| p.chol().transpose()).collect();

    let mut adam = AdamState::new(AdamConfig::with_learning_rate(settings.learning_rate), &[&raw]);
    let mut best_raw = raw.clone();
    let mut best_obj = f64::INFINITY;
    let mut best_step = 0;
    for step in 0..settings.steps {
        let mut tape = Tape::new();
        let leaf = tape.leaf(raw.clone());
        let ltilde = tape.tril_from_raw(leaf, n, floor)?;
        let mut rows = Vec::with_capacity(d);
        for (i, p) in preds.iter().enumerate() {
            let ct = tape.constant(chol_ts[i].clone());
            let m = tape.matmul(ct, ltilde)?;
            let mt = tape.transpose(m)?;
            let sigma = tape.matmul(mt, m)?;
            let chol = tape.cholesky(sigma)?;
            let mean = tape.constant(Matrix::row_vec(p.mean()));
            rows.push(tape.nll_mean_chol(mean, chol, targets.row(i))?);
        }
        let stacked = tape.stack_rows(&rows)?;
        let total = tape.sum(stacked)?;
        let objective = tape.scale(total, 1.0 / d as f64)?;
        let value = tape.value(objective).at(0, 0);
        if !value.is_finite() {
            break;
        }
        if value < best_obj - 1e-12 {
            best_obj = value;
            best_raw = raw.clone();
            best_step = step;
        }
        let grads = tape.backward(objective)?;
        let g = grads.wrt(leaf)?;
        adam.step(&mut [&mut raw], &[Some(g)])?;
    }

    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let x = best_raw.at(0, tril_index(i, j));
            l.set(i, j, if i == j { softplus(x) + floor } else { x });
        }
    }
    let mut diag = FitDiagnostics::clean(best_obj, settings.steps);
    diag.underdetermined = d * n < t;
    // Still making headway near the end means the step budget ran out first.
    diag.converged = best_step + settings.steps.max(10) / 10 < settings.steps;
    if diag.underdetermined {
        diag.converged = false;
    }
    Ok((Calibrator::trilts(l)?, diag))
}

#[derive(Debug, Clone, Copy)]
pub struct FineTuneSettings {
    pub steps: usize,
    pub learning_rate: f64,
    /// Posterior samples per objective evaluation.
    pub k: usize,
    pub batch_size: usize,
    /// Weight on the (restricted) KL term.
    pub kl_weight: f64,
    /// Early-stop patience, in steps without split-NLL improvement.
    pub patience_steps: usize,
    /// How often the split NLL is measured.
    pub eval_every: usize,
    /// Posterior samples for the split-NLL measurements.
    pub eval_k: usize,
}

impl Default for FineTuneSettings {
    fn default() -> Self {
        FineTuneSettings {
            steps: 600,
            learning_rate: 1.5e-2,
            k: 16,
            batch_size: 256,
            kl_weight: 1.0,
            patience_steps: 300,
            eval_every: 25,
            eval_k: 8,
        }
    }
}

/// Re-optimize the final variational layer on the calibration split under
/// the alpha objective, freezing every other layer. Mean-only variants mask
/// the covariance-feeding columns; `s`/`Tril` variants fit their temperature
/// jointly on the same tape. Returns the calibrator built from the best
/// split-NLL iterate.
pub fn fit_last_layer(
    model: &BnnModel,
    xs: &Matrix,
    ys: &Matrix,
    alpha: f64,
    variant: Method,
    settings: &FineTuneSettings,
    rng: &mut Rng,
) -> Result<(Calibrator, FitDiagnostics)> {
    if !variant.is_last_layer_family() {
        return Err(CoreError::Domain(format!(
            "{} is not a last-layer fine-tuning method",
            variant.tag()
        )));
    }
    if alpha == 0.0 {
        return Err(CoreError::Domain(
            "alpha = 0 is the variational limit; fine-tune with a small nonzero alpha".to_string(),
        ));
    }
    if xs.rows() == 0 {
        return Err(CoreError::EmptyInput("fit_last_layer calibration split"));
    }
    if ys.shape() != (xs.rows(), model.output_dim()) {
        return Err(CoreError::ShapeMismatch {
            context: "fit_last_layer",
            expected: format!("{}x{}", xs.rows(), model.output_dim()),
            got: format!("{:?}", ys.shape()),
        });
    }

    let n = model.output_dim();
    let split = xs.rows();
    let trainable =
        if variant.is_mean_only() { Trainable::LastLayerMeanOutputs } else { Trainable::LastLayer };
    let mut work = model.clone();

    // Temperature raw parameter: scalar 1x1 or packed triangle, both starting
    // at the identity transform.
    let temp_floor = 1e-9;
    let mut temp_raw = if variant.has_scalar_temp() {
        Some(Matrix::from_vec(1, 1, vec![softplus_inv(1.0)]).unwrap())
    } else if variant.has_tril_temp() {
        let mut raw = Matrix::zeros(1, tril_len(n));
        for i in 0..n {
            raw.set(0, tril_index(i, i), softplus_inv(1.0 - temp_floor));
        }
        Some(raw)
    } else {
        None
    };

    let build_calibrator = |layer: VariationalLayer, temp: &Option<Matrix>, zero_steps: bool| {
        let (s, l) = if zero_steps {
            // Exact identity temperatures so untouched fits pass predictions
            // through bit-identically.
            (
                variant.has_scalar_temp().then_some(1.0),
                variant.has_tril_temp().then(|| Matrix::identity(n)),
            )
        } else {
            match temp {
                Some(raw) if variant.has_scalar_temp() => (Some(softplus(raw.at(0, 0))), None),
                Some(raw) => {
                    let mut l = Matrix::zeros(n, n);
                    for i in 0..n {
                        for j in 0..=i {
                            let x = raw.at(0, tril_index(i, j));
                            l.set(i, j, if i == j { softplus(x) + temp_floor } else { x });
                        }
                    }
                    (None, Some(l))
                }
                None => (None, None),
            }
        };
        Calibrator::last_layer_family(variant, alpha, layer, s, l)
    };

    if settings.steps == 0 {
        let cal = build_calibrator(work.last_layer().clone(), &temp_raw, true)?;
        return Ok((cal, FitDiagnostics::clean(f64::NAN, 0)));
    }

    // Split-NLL measurement with common random numbers across evaluations.
    let eval_seed = rng.next_u64();
    let eval_nll = |work: &BnnModel, temp: &Option<Matrix>| -> Result<f64> {
        let cal = build_calibrator(work.last_layer().clone(), temp, false)?;
        let mut eval_rng = Rng::from_seed(eval_seed);
        let sets = work.mc_predict_batch(xs, settings.eval_k, &mut eval_rng)?;
        let sets: Vec<McPredictionSet> =
            sets.into_iter().map(|s| s.map(|p| cal.apply(p))).collect::<Result<Vec<_>>>()?;
        test_nll_mc(&sets, ys)
    };

    let masks = variant.is_mean_only().then(|| model.head_mean_masks());
    let mut adam = {
        let mut refs: Vec<&Matrix> = {
            let all = work.param_refs();
            all[all.len() - 4..].to_vec()
        };
        if let Some(t) = &temp_raw {
            refs.push(t);
        }
        AdamState::new(AdamConfig::with_learning_rate(settings.learning_rate), &refs)
    };

    let mut best_nll = eval_nll(&work, &temp_raw)?;
    let mut best_state = (work.last_layer().clone(), temp_raw.clone());
    let mut last_improve = 0usize;
    let mut aborted = false;
    let mut steps_run = 0usize;
    let mut order: Vec<usize> = (0..split).collect();
    let mut cursor = split; // force a shuffle on first use

    'outer: for step in 0..settings.steps {
        steps_run = step + 1;
        let batch = settings.batch_size.min(split);
        if cursor + batch > split {
            rng.shuffle(&mut order);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let bx = xs.take_rows(idx);
        let by = ys.take_rows(idx);

        let mut tape = Tape::new();
        let binding = work.bind(&mut tape, trainable);
        let temp_var = temp_raw.as_ref().map(|t| tape.leaf(t.clone()));
        let scalar_temp = match temp_var {
            Some(v) if variant.has_scalar_temp() => Some(tape.softplus(v)?),
            _ => None,
        };
        let tril_temp = match temp_var {
            Some(v) if variant.has_tril_temp() => Some(tape.tril_from_raw(v, n, temp_floor)?),
            _ => None,
        };

        // Restricted KL over the last layer only.
        let layer_idx = work.layers().len() - 1;
        let slots = binding.layer_slots(layer_idx);
        let (wm, wr, bm, br) =
            (slots[0].unwrap(), slots[1].unwrap(), slots[2].unwrap(), slots[3].unwrap());
        let (w_mask, b_mask) = match &masks {
            Some((w, b)) => (Some(w), Some(b)),
            None => (None, None),
        };
        let prior = work.last_layer().prior_sigma();
        let kw = kl_pair_tape(&mut tape, wm, wr, prior, w_mask)?;
        let kb = kl_pair_tape(&mut tape, bm, br, prior, b_mask)?;
        let kl = tape.add(kw, kb)?;
        let kl = tape.scale(kl, settings.kl_weight)?;

        let mut ll_rows = Vec::with_capacity(settings.k);
        for _ in 0..settings.k {
            let noise = work.draw_flipout_noise(batch, rng);
            let raw = work.forward_flipout_tape(&mut tape, &binding, &bx, &noise)?;
            let nll = match (scalar_temp, tril_temp) {
                (None, None) => tape.nll_from_raw(raw, &by, n, DIAG_FLOOR, None)?,
                (Some(s), None) => tape.nll_from_raw(raw, &by, n, DIAG_FLOOR, Some(s))?,
                (None, Some(lt)) => {
                    let width = n + tril_len(n);
                    let mut rows = Vec::with_capacity(batch);
                    for ex in 0..batch {
                        let mean = tape.row_slice(raw, ex, 0, n)?;
                        let packed = tape.row_slice(raw, ex, n, width)?;
                        let c = tape.tril_from_raw(packed, n, DIAG_FLOOR)?;
                        let ct = tape.transpose(c)?;
                        let m = tape.matmul(ct, lt)?;
                        let mt = tape.transpose(m)?;
                        let sigma = tape.matmul(mt, m)?;
                        let chol = tape.cholesky(sigma)?;
                        rows.push(tape.nll_mean_chol(mean, chol, by.row(ex))?);
                    }
                    tape.stack_rows(&rows)?
                }
                (Some(_), Some(_)) => unreachable!("variants carry at most one temperature"),
            };
            let ll = tape.scale(nll, -1.0)?;
            ll_rows.push(tape.transpose(ll)?);
        }
        let ll = tape.stack_rows(&ll_rows)?;
        let per_point = tape.power_logmeanexp(ll, alpha)?;
        let s = tape.sum(per_point)?;
        let data = tape.scale(s, -(split as f64) / batch as f64)?;
        let total = tape.add(kl, data)?;

        if !tape.value(total).at(0, 0).is_finite() {
            aborted = true;
            break 'outer;
        }
        let grads = tape.backward(total)?;
        let mut grad_list: Vec<Option<Matrix>> = Vec::with_capacity(5);
        for (pos, slot) in slots.iter().enumerate() {
            let mut g = grads.wrt(slot.unwrap())?;
            if let Some((w_mask, b_mask)) = &masks {
                g = g.hadamard(if pos < 2 { w_mask } else { b_mask });
            }
            grad_list.push(Some(g));
        }
        if let Some(v) = temp_var {
            grad_list.push(Some(grads.wrt(v)?));
        }
        {
            let mut refs: Vec<&mut Matrix> = {
                let all = work.param_mut_refs();
                let keep = all.len() - 4;
                all.into_iter().skip(keep).collect()
            };
            if let Some(t) = temp_raw.as_mut() {
                refs.push(t);
            }
            if adam.step(&mut refs, &grad_list).is_err() {
                aborted = true;
                break 'outer;
            }
        }

        if (step + 1) % settings.eval_every == 0 || step + 1 == settings.steps {
            let nll = eval_nll(&work, &temp_raw)?;
            if nll.is_finite() {
                // The split NLL is the stopping signal only; the returned
                // calibrator is the final iterate of the alpha objective.
                best_state = (work.last_layer().clone(), temp_raw.clone());
                if nll < best_nll - 1e-12 {
                    best_nll = nll;
                    last_improve = step + 1;
                } else if step + 1 - last_improve >= settings.patience_steps {
                    break 'outer;
                }
            }
        }
    }

    let (layer, temp) = if aborted {
        best_state
    } else {
        (work.last_layer().clone(), temp_raw.clone())
    };
    let cal = build_calibrator(layer, &temp, false)?;
    let trainable_scalars = if variant.is_mean_only() {
        2 * (work.last_layer().in_dim() + 1) * n
    } else {
        2 * (work.last_layer().in_dim() + 1) * work.last_layer().out_dim()
    };
    let diag = FitDiagnostics {
        // Converged: the split NLL plateaued (patience fired, or the run hit
        // its budget with no recent improvement) without a numerical abort.
        converged: !aborted
            && (steps_run < settings.steps
                || last_improve + settings.patience_steps <= settings.steps),
        degenerate: false,
        underdetermined: split * n < trainable_scalars,
        aborted_non_finite: aborted,
        final_objective: best_nll,
        steps_run,
    };
    Ok((cal, diag))
}

/// Monte Carlo prediction through a calibrated model: the component
/// predictions come from the calibrator's model and each is passed through
/// the temperature transform.
pub fn predict_calibrated_batch(
    model: &BnnModel,
    cal: &Calibrator,
    xs: &Matrix,
    k: usize,
    rng: &mut Rng,
) -> Result<Vec<McPredictionSet>> {
    let m = cal.calibrated_model(model)?;
    let sets = m.mc_predict_batch(xs, k, rng)?;
    sets.into_iter().map(|s| s.map(|p| cal.apply(p))).collect()
}
