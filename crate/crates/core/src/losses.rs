//! Training objectives: closed-form Gaussian KL against the prior, the
//! variational objective, and the alpha-divergence objective that reduces to
//! it in the alpha -> 0 limit. All of them scale the minibatch data term by
//! dataset-size / batch-size so the KL / data balance matches full-dataset
//! scope.

use crate::bnn::{BnnModel, ModelBinding, Trainable};
use crate::error::{CoreError, Result};
use crate::func::softplus;
use crate::gaussian::DIAG_FLOOR;
use crate::linalg::Matrix;
use crate::rng::Rng;
use crate::tape::{Tape, Var};

/// One evaluated objective: total = kl_term + data_term. `alpha` is 0 for the
/// variational objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub kl_term: f64,
    pub data_term: f64,
    pub alpha: f64,
    pub k_samples: usize,
}

impl LossReport {
    pub const CSV_HEADER: &'static str = "step,total,kl,data,alpha";

    pub fn csv_row(&self, step: usize) -> String {
        format!("{step},{},{},{},{}", self.total, self.kl_term, self.data_term, self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    Vi,
    BbAlpha(f64),
}

impl Objective {
    pub fn alpha(&self) -> f64 {
        match self {
            Objective::Vi => 0.0,
            Objective::BbAlpha(a) => *a,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossSettings {
    pub k: usize,
    pub kl_weight: f64,
    /// Full-dataset size D used to rescale the batch data term.
    pub dataset_size: usize,
    pub trainable: Trainable,
}

impl LossSettings {
    pub fn new(k: usize, kl_weight: f64, dataset_size: usize) -> Self {
        LossSettings { k, kl_weight, dataset_size, trainable: Trainable::All }
    }

    pub fn trainable(mut self, trainable: Trainable) -> Self {
        self.trainable = trainable;
        self
    }
}

/// Closed-form KL(q || p) summed over every weight and bias:
/// ln(sigma_p / sigma_q) + (sigma_q^2 + mu^2) / (2 sigma_p^2) - 1/2 per entry.
pub fn gaussian_kl(model: &BnnModel) -> f64 {
    let mut total = 0.0;
    for layer in model.layers() {
        let sp = layer.prior_sigma();
        for (mean, rho) in
            [(layer.w_mean(), layer.w_rho()), (layer.b_mean(), layer.b_rho())]
        {
            for (m, r) in mean.data().iter().zip(rho.data()) {
                let sq = softplus(*r);
                total += (sp / sq).ln() + (sq * sq + m * m) / (2.0 * sp * sp) - 0.5;
            }
        }
    }
    total
}

/// KL term on the tape for one (mean, rho) pair, optionally masked to a
/// subset of entries.
pub(crate) fn kl_pair_tape(
    tape: &mut Tape,
    mean: Var,
    rho: Var,
    prior_sigma: f64,
    mask: Option<&Matrix>,
) -> Result<Var> {
    let sq = tape.softplus(rho)?;
    let ln_sq = tape.ln(sq)?;
    let t1 = tape.scale(ln_sq, -1.0)?;
    let t1 = tape.add_scalar(t1, prior_sigma.ln())?;
    let sq2 = tape.hadamard(sq, sq)?;
    let m2 = tape.hadamard(mean, mean)?;
    let quad = tape.add(sq2, m2)?;
    let t2 = tape.scale(quad, 1.0 / (2.0 * prior_sigma * prior_sigma))?;
    let t = tape.add(t1, t2)?;
    let t = tape.add_scalar(t, -0.5)?;
    let t = match mask {
        Some(m) => tape.hadamard_const(t, m)?,
        None => t,
    };
    tape.sum(t)
}

pub(crate) struct BuiltLoss {
    pub tape: Tape,
    pub binding: ModelBinding,
    pub total: Var,
    pub report: LossReport,
}

pub(crate) fn build_loss(
    model: &BnnModel,
    xs: &Matrix,
    ys: &Matrix,
    objective: Objective,
    settings: &LossSettings,
    rng: &mut Rng,
) -> Result<BuiltLoss> {
    if settings.k == 0 {
        return Err(CoreError::Domain("loss needs k >= 1 posterior samples".to_string()));
    }
    if let Objective::BbAlpha(a) = objective {
        if a == 0.0 {
            return Err(CoreError::Domain(
                "alpha = 0 is the variational limit; use the VI objective".to_string(),
            ));
        }
    }
    if xs.rows() == 0 {
        return Err(CoreError::EmptyInput("loss batch"));
    }
    if ys.shape() != (xs.rows(), model.output_dim()) {
        return Err(CoreError::ShapeMismatch {
            context: "loss targets",
            expected: format!("{}x{}", xs.rows(), model.output_dim()),
            got: format!("{:?}", ys.shape()),
        });
    }
    let batch = xs.rows();
    let mut tape = Tape::new();
    let binding = model.bind(&mut tape, settings.trainable);

    // KL over the trainable slots only.
    let masks = match settings.trainable {
        Trainable::LastLayerMeanOutputs => Some(model.head_mean_masks()),
        _ => None,
    };
    let mut kl: Option<Var> = None;
    for (i, layer) in model.layers().iter().enumerate() {
        let slots = binding.layer_slots(i);
        let [wm, wr, bm, br] = [slots[0], slots[1], slots[2], slots[3]];
        let (Some(wm), Some(wr), Some(bm), Some(br)) = (wm, wr, bm, br) else { continue };
        let (w_mask, b_mask) = match &masks {
            Some((w, b)) => (Some(w), Some(b)),
            None => (None, None),
        };
        let kw = kl_pair_tape(&mut tape, wm, wr, layer.prior_sigma(), w_mask)?;
        let kb = kl_pair_tape(&mut tape, bm, br, layer.prior_sigma(), b_mask)?;
        let layer_kl = tape.add(kw, kb)?;
        kl = Some(match kl {
            Some(acc) => tape.add(acc, layer_kl)?,
            None => layer_kl,
        });
    }
    let kl = kl.ok_or(CoreError::EmptyInput("no trainable parameters"))?;
    let kl_weighted = tape.scale(kl, settings.kl_weight)?;

    // Per-sample log likelihood rows, stacked K x B.
    let mut ll_rows = Vec::with_capacity(settings.k);
    for _ in 0..settings.k {
        let noise = model.draw_flipout_noise(batch, rng);
        let raw = model.forward_flipout_tape(&mut tape, &binding, xs, &noise)?;
        let nll = tape.nll_from_raw(raw, ys, model.output_dim(), DIAG_FLOOR, None)?;
        let ll = tape.scale(nll, -1.0)?;
        ll_rows.push(tape.transpose(ll)?);
    }
    let ll = tape.stack_rows(&ll_rows)?;
    let rescale = settings.dataset_size as f64 / batch as f64;
    let data = match objective {
        Objective::Vi => {
            let s = tape.sum(ll)?;
            tape.scale(s, -rescale / settings.k as f64)?
        }
        Objective::BbAlpha(alpha) => {
            let per_point = tape.power_logmeanexp(ll, alpha)?;
            let s = tape.sum(per_point)?;
            tape.scale(s, -rescale)?
        }
    };
    let total = tape.add(kl_weighted, data)?;
    let report = LossReport {
        total: tape.value(total).at(0, 0),
        kl_term: tape.value(kl_weighted).at(0, 0),
        data_term: tape.value(data).at(0, 0),
        alpha: objective.alpha(),
        k_samples: settings.k,
    };
    if !report.total.is_finite() {
        return Err(CoreError::NonFiniteLoss);
    }
    Ok(BuiltLoss { tape, binding, total, report })
}

/// Evaluate an objective without gradients.
pub fn evaluate_loss(
    model: &BnnModel,
    xs: &Matrix,
    ys: &Matrix,
    objective: Objective,
    settings: &LossSettings,
    rng: &mut Rng,
) -> Result<LossReport> {
    Ok(build_loss(model, xs, ys, objective, settings, rng)?.report)
}

/// Evaluate an objective and return gradients per parameter slot (four per
/// layer, `None` on frozen slots), aligned with
/// [`BnnModel::param_mut_refs`].
pub fn loss_and_grads(
    model: &BnnModel,
    xs: &Matrix,
    ys: &Matrix,
    objective: Objective,
    settings: &LossSettings,
    rng: &mut Rng,
) -> Result<(LossReport, Vec<Option<Matrix>>)> {
    let built = build_loss(model, xs, ys, objective, settings, rng)?;
    let grads = built.tape.backward(built.total)?;
    let masks = match settings.trainable {
        Trainable::LastLayerMeanOutputs => Some(model.head_mean_masks()),
        _ => None,
    };
    let n_layers = model.layers().len();
    let mut out = Vec::with_capacity(built.binding.slots.len());
    for (slot_idx, slot) in built.binding.slots.iter().enumerate() {
        match slot {
            None => out.push(None),
            Some(v) => {
                let mut g = grads.wrt(*v)?;
                if let Some((w_mask, b_mask)) = &masks {
                    if slot_idx / 4 == n_layers - 1 {
                        g = g.hadamard(if slot_idx % 4 < 2 { w_mask } else { b_mask });
                    }
                }
                out.push(Some(g));
            }
        }
    }
    Ok((built.report, out))
}

/// Variational objective: weighted KL plus the Monte Carlo estimate of the
/// expected negative log likelihood, rescaled to dataset scope.
pub fn vi_loss(
    model: &BnnModel,
    xs: &Matrix,
    ys: &Matrix,
    k: usize,
    rng: &mut Rng,
    kl_weight: f64,
    dataset_size: usize,
) -> Result<LossReport> {
    evaluate_loss(model, xs, ys, Objective::Vi, &LossSettings::new(k, kl_weight, dataset_size), rng)
}

/// Alpha-divergence objective: weighted KL minus (1/alpha) times the sum over
/// points of ln mean_k exp(alpha * log-likelihood), computed with a max shift
/// so any sign of alpha is safe. alpha must be nonzero.
pub fn bb_alpha_loss(
    model: &BnnModel,
    xs: &Matrix,
    ys: &Matrix,
    alpha: f64,
    k: usize,
    rng: &mut Rng,
    kl_weight: f64,
    dataset_size: usize,
) -> Result<LossReport> {
    evaluate_loss(
        model,
        xs,
        ys,
        Objective::BbAlpha(alpha),
        &LossSettings::new(k, kl_weight, dataset_size),
        rng,
    )
}

/// Univariate Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian1d {
    pub mean: f64,
    pub sigma: f64,
}

/// Alpha-divergence between univariate Gaussians, closed form:
/// (1 - integral p^alpha q^(1-alpha)) / (alpha (1 - alpha)).
///
/// Diagnostic only; alpha must lie strictly inside (0, 1) so the integral is
/// guaranteed finite.
pub fn alpha_divergence_1d(p: Gaussian1d, q: Gaussian1d, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CoreError::Domain(format!(
            "alpha_divergence_1d requires alpha in (0, 1), got {alpha}"
        )));
    }
    if p.sigma <= 0.0 || q.sigma <= 0.0 {
        return Err(CoreError::Domain("alpha_divergence_1d requires positive sigmas".to_string()));
    }
    let (v1, v2) = (p.sigma * p.sigma, q.sigma * q.sigma);
    let a = alpha / v1 + (1.0 - alpha) / v2;
    let b = alpha * p.mean / v1 + (1.0 - alpha) * q.mean / v2;
    let c = alpha * p.mean * p.mean / v1 + (1.0 - alpha) * q.mean * q.mean / v2;
    let integral = p.sigma.powf(-alpha)
        * q.sigma.powf(-(1.0 - alpha))
        * a.powf(-0.5)
        * (-0.5 * (c - b * b / a)).exp();
    Ok((1.0 - integral) / (alpha * (1.0 - alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::func::softplus_inv;
    use crate::gaussian::GaussianPrediction;
    use crate::bnn::VariationalLayer;

    fn small_model(seed: u64) -> BnnModel {
        let mut rng = Rng::from_seed(seed);
        BnnModel::new(3, &[4], 2, 1.0, &mut rng).unwrap()
    }

    fn small_batch(seed: u64, b: usize) -> (Matrix, Matrix) {
        let mut rng = Rng::from_seed(seed);
        let xs = Matrix::from_fn(b, 3, |_, _| rng.normal());
        let ys = Matrix::from_fn(b, 2, |_, _| rng.normal());
        (xs, ys)
    }

    #[test]
    fn kl_is_zero_when_posterior_matches_prior() {
        let layer = VariationalLayer::from_parts(
            Matrix::zeros(3, 2),
            Matrix::from_fn(3, 2, |_, _| softplus_inv(1.0)),
            Matrix::zeros(1, 2),
            Matrix::from_fn(1, 2, |_, _| softplus_inv(1.0)),
            1.0,
        )
        .unwrap();
        let model = BnnModel::from_layers(vec![layer], 1).unwrap();
        assert!(gaussian_kl(&model).abs() < 1e-12);
    }

    #[test]
    fn kl_unit_mean_offset_is_half_per_weight() {
        // mu=1, sigma_q=1, sigma_p=1 contributes exactly 0.5; bias entries are
        // kept at the prior so they contribute nothing.
        let layer = VariationalLayer::from_parts(
            Matrix::from_fn(2, 2, |_, _| 1.0),
            Matrix::from_fn(2, 2, |_, _| softplus_inv(1.0)),
            Matrix::zeros(1, 2),
            Matrix::from_fn(1, 2, |_, _| softplus_inv(1.0)),
            1.0,
        )
        .unwrap();
        let model = BnnModel::from_layers(vec![layer], 1).unwrap();
        assert!((gaussian_kl(&model) - 2.0).abs() < 1e-12); // four weights at 0.5 each
    }

    #[test]
    fn kl_matches_quadrature_oracle() {
        // Simpson quadrature of q ln(q/p) on random univariate cases.
        let mut rng = Rng::from_seed(40);
        for _ in 0..20 {
            let mu = rng.uniform_in(-2.0, 2.0);
            let sq = rng.uniform_in(0.3, 2.0);
            let sp = rng.uniform_in(0.3, 2.0);
            let integrand = |x: f64| {
                let q = (-0.5 * ((x - mu) / sq).powi(2)).exp()
                    / (sq * (2.0 * std::f64::consts::PI).sqrt());
                let lp = -0.5 * (x / sp).powi(2) - (sp * (2.0 * std::f64::consts::PI).sqrt()).ln();
                let lq = -0.5 * ((x - mu) / sq).powi(2)
                    - (sq * (2.0 * std::f64::consts::PI).sqrt()).ln();
                q * (lq - lp)
            };
            let lo = mu - 14.0 * sq;
            let hi = mu + 14.0 * sq;
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let mut acc = integrand(lo) + integrand(hi);
            for i in 1..n {
                acc += if i % 2 == 0 { 2.0 } else { 4.0 } * integrand(lo + i as f64 * h);
            }
            let oracle = acc * h / 3.0;
            let closed = (sp / sq).ln() + (sq * sq + mu * mu) / (2.0 * sp * sp) - 0.5;
            assert!((closed - oracle).abs() < 1e-6, "closed {closed}, oracle {oracle}");
        }
    }

    /// Head-only model that ignores its input and emits a fixed raw row.
    fn constant_head_model(raw: &[f64], n: usize) -> BnnModel {
        let width = raw.len();
        let layer = VariationalLayer::from_parts(
            Matrix::zeros(3, width),
            Matrix::from_fn(3, width, |_, _| -40.0),
            Matrix::row_vec(raw),
            Matrix::from_fn(1, width, |_, _| -40.0),
            1.0,
        )
        .unwrap();
        BnnModel::from_layers(vec![layer], n).unwrap()
    }

    #[test]
    fn collapsed_posterior_data_term_is_summed_nll() {
        let raw = [0.3, -0.2, 0.1, 0.4, -0.5];
        let model = constant_head_model(&raw, 2);
        let (xs, ys) = small_batch(50, 6);
        let pred = GaussianPrediction::from_raw(&raw, 2).unwrap();
        let expected: f64 = (0..6).map(|i| pred.nll(ys.row(i)).unwrap()).sum();
        let report =
            vi_loss(&model, &xs, &ys, 1, &mut Rng::from_seed(1), 0.0, 6).unwrap();
        assert!((report.data_term - expected).abs() < 1e-6, "{} vs {expected}", report.data_term);
        assert_eq!(report.kl_term, 0.0);
        assert!((report.total - report.data_term).abs() < 1e-12);
    }

    #[test]
    fn report_total_is_kl_plus_data() {
        let model = small_model(42);
        let (xs, ys) = small_batch(43, 5);
        let report = vi_loss(&model, &xs, &ys, 3, &mut Rng::from_seed(2), 0.7, 50).unwrap();
        assert!((report.total - (report.kl_term + report.data_term)).abs() < 1e-12);
        assert_eq!(report.alpha, 0.0);
        assert_eq!(report.k_samples, 3);
    }

    #[test]
    fn bb_alpha_rejects_zero_alpha() {
        let model = small_model(44);
        let (xs, ys) = small_batch(45, 4);
        let err = bb_alpha_loss(&model, &xs, &ys, 0.0, 2, &mut Rng::from_seed(3), 1.0, 4);
        assert!(matches!(err, Err(CoreError::Domain(_))));
    }

    #[test]
    fn k_one_bb_alpha_equals_vi_for_any_alpha() {
        let model = small_model(46);
        let (xs, ys) = small_batch(47, 5);
        for alpha in [-1.5, 1e-3, 0.5, 1.0, 2.5] {
            let vi = vi_loss(&model, &xs, &ys, 1, &mut Rng::from_seed(9), 1.0, 20).unwrap();
            let bb =
                bb_alpha_loss(&model, &xs, &ys, alpha, 1, &mut Rng::from_seed(9), 1.0, 20).unwrap();
            let rel = (vi.data_term - bb.data_term).abs() / vi.data_term.abs();
            assert!(rel < 1e-4, "alpha {alpha}: vi {} bb {}", vi.data_term, bb.data_term);
        }
    }

    #[test]
    fn small_alpha_gap_shrinks_linearly() {
        let model = small_model(48);
        let (xs, ys) = small_batch(49, 6);
        let gap = |alpha: f64| {
            let vi = vi_loss(&model, &xs, &ys, 8, &mut Rng::from_seed(11), 1.0, 6).unwrap();
            let bb =
                bb_alpha_loss(&model, &xs, &ys, alpha, 8, &mut Rng::from_seed(11), 1.0, 6).unwrap();
            (vi.data_term - bb.data_term).abs()
        };
        let g1 = gap(0.1);
        let g2 = gap(0.01);
        assert!(g2 < g1, "gap should shrink: {g1} -> {g2}");
        let ratio = g2 / g1;
        assert!(ratio < 0.2, "expected roughly linear shrinkage, ratio {ratio}");
    }

    #[test]
    fn alpha_one_is_log_mixture_likelihood() {
        // Reconstruct the exact same noise stream outside the loss builder and
        // compare against the hand-assembled mixture form.
        let model = small_model(52);
        let (xs, ys) = small_batch(53, 4);
        let k = 5;
        let report =
            bb_alpha_loss(&model, &xs, &ys, 1.0, k, &mut Rng::from_seed(17), 1.0, 4).unwrap();

        let mut rng = Rng::from_seed(17);
        let mut lls = vec![Vec::with_capacity(k); 4];
        for _ in 0..k {
            let noise = model.draw_flipout_noise(4, &mut rng);
            let raw = model.forward_flipout_with_noise(&xs, &noise).unwrap();
            for i in 0..4 {
                let pred = GaussianPrediction::from_raw(raw.row(i), 2).unwrap();
                lls[i].push(pred.log_density(ys.row(i)).unwrap());
            }
        }
        let expected: f64 = lls.iter().map(|l| -crate::func::logmeanexp(l)).sum();
        assert!(
            (report.data_term - expected).abs() < 1e-9,
            "{} vs {expected}",
            report.data_term
        );
    }

    #[test]
    fn data_term_is_monotone_non_increasing_in_alpha() {
        let model = small_model(54);
        let (xs, ys) = small_batch(55, 6);
        let mut prev = f64::INFINITY;
        for alpha in [0.25, 0.5, 1.0, 2.0] {
            let r =
                bb_alpha_loss(&model, &xs, &ys, alpha, 4, &mut Rng::from_seed(19), 1.0, 6).unwrap();
            assert!(
                r.data_term <= prev + 1e-10,
                "data term rose at alpha {alpha}: {} > {prev}",
                r.data_term
            );
            prev = r.data_term;
        }
    }

    #[test]
    fn non_finite_loss_aborts() {
        let mut model = small_model(56);
        for p in model.param_mut_refs() {
            for v in p.data_mut() {
                *v = 1e308;
            }
        }
        let (xs, ys) = small_batch(57, 3);
        assert!(matches!(
            vi_loss(&model, &xs, &ys, 1, &mut Rng::from_seed(5), 1.0, 3),
            Err(CoreError::NonFiniteLoss)
        ));
    }

    #[test]
    fn gradients_match_finite_differences_across_objectives() {
        let model = small_model(58);
        let (xs, ys) = small_batch(59, 4);
        let objectives = [
            Objective::Vi,
            Objective::BbAlpha(-1.0),
            Objective::BbAlpha(0.5),
            Objective::BbAlpha(1.0),
            Objective::BbAlpha(2.0),
        ];
        for objective in objectives {
            let settings = LossSettings::new(3, 0.8, 4);
            let (_, grads) =
                loss_and_grads(&model, &xs, &ys, objective, &settings, &mut Rng::from_seed(23))
                    .unwrap();
            // Finite differences with the same frozen noise (same seed).
            let h = 1e-5;
            for (slot, grad) in grads.iter().enumerate() {
                let grad = grad.as_ref().unwrap();
                let mut max_err: f64 = 0.0;
                let scale = grad.max_abs().max(1e-6);
                let (r, c) = grad.shape();
                for i in 0..r {
                    for j in 0..c {
                        let base = model.param_refs()[slot].at(i, j);
                        let mut plus = model.clone();
                        plus.param_mut_refs()[slot].set(i, j, base + h);
                        let mut minus = model.clone();
                        minus.param_mut_refs()[slot].set(i, j, base - h);
                        let fp = evaluate_loss(
                            &plus,
                            &xs,
                            &ys,
                            objective,
                            &settings,
                            &mut Rng::from_seed(23),
                        )
                        .unwrap()
                        .total;
                        let fm = evaluate_loss(
                            &minus,
                            &xs,
                            &ys,
                            objective,
                            &settings,
                            &mut Rng::from_seed(23),
                        )
                        .unwrap()
                        .total;
                        let fd = (fp - fm) / (2.0 * h);
                        max_err = max_err.max((grad.at(i, j) - fd).abs() / scale);
                    }
                }
                assert!(max_err < 1e-4, "objective {objective:?} slot {slot}: err {max_err}");
            }
        }
    }

    #[test]
    fn last_layer_binding_freezes_earlier_layers() {
        let model = small_model(60);
        let (xs, ys) = small_batch(61, 4);
        let settings = LossSettings::new(2, 1.0, 4).trainable(Trainable::LastLayer);
        let (_, grads) =
            loss_and_grads(&model, &xs, &ys, Objective::BbAlpha(1.0), &settings, &mut Rng::from_seed(29))
                .unwrap();
        assert!(grads[..4].iter().all(|g| g.is_none()));
        assert!(grads[4..].iter().all(|g| g.is_some()));
    }

    #[test]
    fn mean_only_binding_masks_covariance_columns() {
        let model = small_model(62);
        let (xs, ys) = small_batch(63, 4);
        let settings = LossSettings::new(2, 1.0, 4).trainable(Trainable::LastLayerMeanOutputs);
        let (_, grads) =
            loss_and_grads(&model, &xs, &ys, Objective::BbAlpha(1.0), &settings, &mut Rng::from_seed(31))
                .unwrap();
        let n = model.output_dim();
        let w_grad = grads[4].as_ref().unwrap();
        for i in 0..w_grad.rows() {
            for j in 0..w_grad.cols() {
                if j >= n {
                    assert_eq!(w_grad.at(i, j), 0.0);
                }
            }
        }
        let has_live = (0..w_grad.rows()).any(|i| (0..n).any(|j| w_grad.at(i, j) != 0.0));
        assert!(has_live);
    }

    #[test]
    fn alpha_divergence_closed_form() {
        let p = Gaussian1d { mean: 0.0, sigma: 1.0 };
        assert!(alpha_divergence_1d(p, p, 0.5).unwrap().abs() < 1e-14);

        let q = Gaussian1d { mean: 1.0, sigma: 1.0 };
        let expected = 4.0 * (1.0 - (-0.125_f64).exp());
        let got = alpha_divergence_1d(p, q, 0.5).unwrap();
        assert!((got - expected).abs() < 1e-12, "got {got}, expected {expected}");
        assert!((got - 0.47001).abs() < 1e-5);

        // Hellinger symmetry at alpha = 0.5.
        let r = Gaussian1d { mean: -0.3, sigma: 1.7 };
        let d1 = alpha_divergence_1d(p, r, 0.5).unwrap();
        let d2 = alpha_divergence_1d(r, p, 0.5).unwrap();
        assert!((d1 - d2).abs() < 1e-12);

        assert!(alpha_divergence_1d(p, q, 0.0).is_err());
        assert!(alpha_divergence_1d(p, q, 1.0).is_err());
        assert!(alpha_divergence_1d(p, q, -0.5).is_err());
    }

    #[test]
    fn alpha_divergence_matches_quadrature() {
        let p = Gaussian1d { mean: 0.4, sigma: 0.9 };
        let q = Gaussian1d { mean: -0.6, sigma: 1.4 };
        for alpha in [0.2, 0.5, 0.8] {
            let density = |g: Gaussian1d, x: f64| {
                (-0.5 * ((x - g.mean) / g.sigma).powi(2)).exp()
                    / (g.sigma * (2.0 * std::f64::consts::PI).sqrt())
            };
            let integrand =
                |x: f64| density(p, x).powf(alpha) * density(q, x).powf(1.0 - alpha);
            let (lo, hi) = (-20.0, 20.0);
            let n = 40_000;
            let h = (hi - lo) / n as f64;
            let mut acc = integrand(lo) + integrand(hi);
            for i in 1..n {
                acc += if i % 2 == 0 { 2.0 } else { 4.0 } * integrand(lo + i as f64 * h);
            }
            let integral = acc * h / 3.0;
            let oracle = (1.0 - integral) / (alpha * (1.0 - alpha));
            let got = alpha_divergence_1d(p, q, alpha).unwrap();
            assert!((got - oracle).abs() < 1e-8, "alpha {alpha}: got {got}, oracle {oracle}");
        }
    }
}
