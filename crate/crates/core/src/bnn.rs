//! Mean-field Gaussian variational dense layers with Flipout batch
//! perturbations, the regression network built from them, and Monte Carlo
//! prediction.
//!
//! Every weight and bias carries an independent Gaussian posterior
//! (mean, pre-softplus scale) against a zero-mean Gaussian prior. A forward
//! pass through [`VariationalLayer::forward_flipout`] shares one base weight
//! perturbation per batch and decorrelates examples with per-example random
//! sign vectors; biases use a single shared noise draw per batch.

use crate::error::{CoreError, Result};
use crate::func::{leaky_relu, softplus, softplus_inv};
use crate::gaussian::GaussianPrediction;
use crate::linalg::{tril_len, Matrix};
use crate::rng::Rng;
use crate::tape::{Tape, Var};

/// Negative-side slope of the hidden activation.
pub const LEAKY_SLOPE: f64 = 0.3;

/// Initial posterior standard deviation for every weight and bias.
pub const INIT_POSTERIOR_SIGMA: f64 = 0.05;

/// One dense layer with Gaussian posteriors on weights and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct VariationalLayer {
    w_mean: Matrix,
    w_rho: Matrix,
    b_mean: Matrix,
    b_rho: Matrix,
    prior_sigma: f64,
}

/// Frozen Flipout noise for one layer: base weight perturbation `e`,
/// per-example input/output sign matrices `s` and `r`, and the shared bias
/// noise `eps_b`.
#[derive(Debug, Clone)]
pub struct FlipoutNoise {
    e: Matrix,
    s: Matrix,
    r: Matrix,
    eps_b: Matrix,
}

impl VariationalLayer {
    /// Fresh layer: weight means fan-in-scaled uniform, bias means zero, all
    /// rho at softplus^{-1}(0.05).
    pub fn new(in_dim: usize, out_dim: usize, prior_sigma: f64, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let w_mean = Matrix::from_fn(in_dim, out_dim, |_, _| rng.uniform_in(-bound, bound));
        let rho0 = softplus_inv(INIT_POSTERIOR_SIGMA);
        VariationalLayer {
            w_mean,
            w_rho: Matrix::from_fn(in_dim, out_dim, |_, _| rho0),
            b_mean: Matrix::zeros(1, out_dim),
            b_rho: Matrix::from_fn(1, out_dim, |_, _| rho0),
            prior_sigma,
        }
    }

    /// Rebuild from raw parts (checkpoint loading); shapes must agree.
    pub fn from_parts(
        w_mean: Matrix,
        w_rho: Matrix,
        b_mean: Matrix,
        b_rho: Matrix,
        prior_sigma: f64,
    ) -> Result<Self> {
        if w_rho.shape() != w_mean.shape()
            || b_mean.shape() != (1, w_mean.cols())
            || b_rho.shape() != (1, w_mean.cols())
        {
            return Err(CoreError::ShapeMismatch {
                context: "VariationalLayer::from_parts",
                expected: format!("weights {:?}, biases 1x{}", w_mean.shape(), w_mean.cols()),
                got: format!("rho {:?}, b {:?}, b_rho {:?}", w_rho.shape(), b_mean.shape(), b_rho.shape()),
            });
        }
        if prior_sigma <= 0.0 {
            return Err(CoreError::Domain(format!("prior sigma must be positive, got {prior_sigma}")));
        }
        Ok(VariationalLayer { w_mean, w_rho, b_mean, b_rho, prior_sigma })
    }

    pub fn in_dim(&self) -> usize {
        self.w_mean.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w_mean.cols()
    }

    pub fn w_mean(&self) -> &Matrix {
        &self.w_mean
    }

    pub fn w_rho(&self) -> &Matrix {
        &self.w_rho
    }

    pub fn b_mean(&self) -> &Matrix {
        &self.b_mean
    }

    pub fn b_rho(&self) -> &Matrix {
        &self.b_rho
    }

    pub fn prior_sigma(&self) -> f64 {
        self.prior_sigma
    }

    /// Posterior standard deviations, softplus(rho).
    pub fn w_sigma(&self) -> Matrix {
        self.w_rho.map(softplus)
    }

    pub fn b_sigma(&self) -> Matrix {
        self.b_rho.map(softplus)
    }

    /// Draw one batch of Flipout noise. Order: weight perturbation (row-major
    /// normals), bias noise (normals), input signs, output signs.
    pub fn draw_noise(&self, batch: usize, rng: &mut Rng) -> FlipoutNoise {
        let (i, o) = (self.in_dim(), self.out_dim());
        FlipoutNoise {
            e: Matrix::from_fn(i, o, |_, _| rng.normal()),
            eps_b: Matrix::from_fn(1, o, |_, _| rng.normal()),
            s: Matrix::from_fn(batch, i, |_, _| rng.sign()),
            r: Matrix::from_fn(batch, o, |_, _| rng.sign()),
        }
    }

    /// Deterministic pass at the posterior means.
    pub fn forward_mean(&self, xs: &Matrix) -> Result<Matrix> {
        self.check_input(xs)?;
        let mut out = xs.matmul(&self.w_mean);
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                out.set(i, j, out.at(i, j) + self.b_mean.at(0, j));
            }
        }
        Ok(out)
    }

    /// Flipout pass with fresh noise.
    pub fn forward_flipout(&self, xs: &Matrix, rng: &mut Rng) -> Result<Matrix> {
        let noise = self.draw_noise(xs.rows(), rng);
        self.forward_flipout_with_noise(xs, &noise)
    }

    /// Flipout pass with frozen noise:
    /// x W + ((x o s)(sigma_w o e)) o r + b + sigma_b o eps_b.
    pub fn forward_flipout_with_noise(&self, xs: &Matrix, noise: &FlipoutNoise) -> Result<Matrix> {
        self.check_input(xs)?;
        let base = xs.matmul(&self.w_mean);
        let dw = self.w_sigma().hadamard(&noise.e);
        let pert = xs.hadamard(&noise.s).matmul(&dw).hadamard(&noise.r);
        let b_noise = self.b_sigma().hadamard(&noise.eps_b);
        let mut out = base.add(&pert);
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                out.set(i, j, out.at(i, j) + self.b_mean.at(0, j) + b_noise.at(0, j));
            }
        }
        Ok(out)
    }

    fn check_input(&self, xs: &Matrix) -> Result<()> {
        if xs.cols() != self.in_dim() {
            return Err(CoreError::ShapeMismatch {
                context: "layer forward",
                expected: format!("{} input columns", self.in_dim()),
                got: format!("{}", xs.cols()),
            });
        }
        Ok(())
    }
}

/// Which parameters a tape binding exposes as differentiable leaves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Trainable {
    All,
    /// Only the final layer.
    LastLayer,
    /// Only the final layer, and of it only what feeds the mean outputs;
    /// gradient and KL masks for the remaining columns are applied by the
    /// loss builder.
    LastLayerMeanOutputs,
}

/// Tape leaves for the model's parameters, four slots per layer in the order
/// weight mean, weight rho, bias mean, bias rho. `None` marks a frozen slot.
pub struct ModelBinding {
    pub slots: Vec<Option<Var>>,
}

impl ModelBinding {
    pub fn layer_slots(&self, layer: usize) -> &[Option<Var>] {
        &self.slots[4 * layer..4 * layer + 4]
    }
}

/// Dense variational regression network ending in a Gaussian head.
///
/// Hidden layers use the leaky rectifier with slope [`LEAKY_SLOPE`]; the final
/// layer is linear and emits `n + n(n+1)/2` raw values per example (means,
/// then the packed covariance factor).
#[derive(Debug, Clone, PartialEq)]
pub struct BnnModel {
    layers: Vec<VariationalLayer>,
    input_dim: usize,
    output_dim: usize,
}

/// K per-sample predictions for one input.
#[derive(Debug, Clone)]
pub struct McPredictionSet {
    preds: Vec<GaussianPrediction>,
}

impl McPredictionSet {
    pub fn new(preds: Vec<GaussianPrediction>) -> Result<Self> {
        if preds.is_empty() {
            return Err(CoreError::EmptyInput("McPredictionSet"));
        }
        let n = preds[0].dim();
        if preds.iter().any(|p| p.dim() != n) {
            return Err(CoreError::ShapeMismatch {
                context: "McPredictionSet::new",
                expected: format!("all predictions {n}-dimensional"),
                got: "mixed dimensions".to_string(),
            });
        }
        Ok(McPredictionSet { preds })
    }

    pub fn k(&self) -> usize {
        self.preds.len()
    }

    pub fn dim(&self) -> usize {
        self.preds[0].dim()
    }

    pub fn preds(&self) -> &[GaussianPrediction] {
        &self.preds
    }

    /// Mean of the per-sample means: the Monte Carlo predictive mean.
    pub fn mixture_mean(&self) -> Vec<f64> {
        let n = self.dim();
        let mut out = vec![0.0; n];
        for p in &self.preds {
            for (o, m) in out.iter_mut().zip(p.mean()) {
                *o += m;
            }
        }
        for o in &mut out {
            *o /= self.k() as f64;
        }
        out
    }

    /// Mixture log density ln (1/K) sum_k N(y; mu_k, Sigma_k).
    pub fn log_density(&self, y: &[f64]) -> Result<f64> {
        let lls: Vec<f64> =
            self.preds.iter().map(|p| p.log_density(y)).collect::<Result<Vec<_>>>()?;
        Ok(crate::func::logmeanexp(&lls))
    }

    /// Map a function over the component predictions.
    pub fn map(&self, f: impl Fn(&GaussianPrediction) -> Result<GaussianPrediction>) -> Result<Self> {
        Ok(McPredictionSet { preds: self.preds.iter().map(f).collect::<Result<Vec<_>>>()? })
    }
}

impl BnnModel {
    /// Network input_dim -> hidden... -> n + n(n+1)/2 raw head outputs.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        output_dim: usize,
        prior_sigma: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if input_dim == 0 || output_dim == 0 {
            return Err(CoreError::Domain("input and output dims must be positive".to_string()));
        }
        if prior_sigma <= 0.0 {
            return Err(CoreError::Domain(format!("prior sigma must be positive, got {prior_sigma}")));
        }
        let head_width = output_dim + tril_len(output_dim);
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(head_width);
        let layers = dims
            .windows(2)
            .map(|w| VariationalLayer::new(w[0], w[1], prior_sigma, rng))
            .collect();
        Ok(BnnModel { layers, input_dim, output_dim })
    }

    /// Rebuild from layers (checkpoint loading); widths must chain and end at
    /// the head width for `output_dim`.
    pub fn from_layers(layers: Vec<VariationalLayer>, output_dim: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(CoreError::EmptyInput("BnnModel::from_layers"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(CoreError::ShapeMismatch {
                    context: "BnnModel::from_layers",
                    expected: format!("chained widths ({} out)", pair[0].out_dim()),
                    got: format!("{} in", pair[1].in_dim()),
                });
            }
        }
        let head_width = output_dim + tril_len(output_dim);
        let last = layers.last().unwrap();
        if last.out_dim() != head_width {
            return Err(CoreError::ShapeMismatch {
                context: "BnnModel::from_layers",
                expected: format!("head width {head_width}"),
                got: format!("{}", last.out_dim()),
            });
        }
        let input_dim = layers[0].in_dim();
        Ok(BnnModel { layers, input_dim, output_dim })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn head_width(&self) -> usize {
        self.output_dim + tril_len(self.output_dim)
    }

    pub fn layers(&self) -> &[VariationalLayer] {
        &self.layers
    }

    pub fn last_layer(&self) -> &VariationalLayer {
        self.layers.last().unwrap()
    }

    /// Swap in a replacement final layer (same shape).
    pub fn replace_last_layer(&mut self, layer: VariationalLayer) -> Result<()> {
        let last = self.layers.last().unwrap();
        if layer.in_dim() != last.in_dim() || layer.out_dim() != last.out_dim() {
            return Err(CoreError::ShapeMismatch {
                context: "replace_last_layer",
                expected: format!("{}x{}", last.in_dim(), last.out_dim()),
                got: format!("{}x{}", layer.in_dim(), layer.out_dim()),
            });
        }
        *self.layers.last_mut().unwrap() = layer;
        Ok(())
    }

    /// Mutable references to every parameter matrix, four per layer in the
    /// order weight mean, weight rho, bias mean, bias rho. Matches the slot
    /// order of [`BnnModel::bind`] and the gradients from the loss builders.
    pub fn param_mut_refs(&mut self) -> Vec<&mut Matrix> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.w_mean, &mut l.w_rho, &mut l.b_mean, &mut l.b_rho])
            .collect()
    }

    pub fn param_refs(&self) -> Vec<&Matrix> {
        self.layers
            .iter()
            .flat_map(|l| [&l.w_mean, &l.w_rho, &l.b_mean, &l.b_rho])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.param_refs().iter().map(|m| m.rows() * m.cols()).sum()
    }

    /// 0/1 masks selecting the head columns that feed the mean outputs
    /// (weights in-dim x out-dim, biases 1 x out-dim).
    pub fn head_mean_masks(&self) -> (Matrix, Matrix) {
        let last = self.last_layer();
        let n = self.output_dim;
        let w = Matrix::from_fn(last.in_dim(), last.out_dim(), |_, j| if j < n { 1.0 } else { 0.0 });
        let b = Matrix::from_fn(1, last.out_dim(), |_, j| if j < n { 1.0 } else { 0.0 });
        (w, b)
    }

    fn check_input(&self, xs: &Matrix) -> Result<()> {
        if xs.cols() != self.input_dim {
            return Err(CoreError::ShapeMismatch {
                context: "model forward",
                expected: format!("{} input columns", self.input_dim),
                got: format!("{}", xs.cols()),
            });
        }
        Ok(())
    }

    /// Raw head outputs of the deterministic pass at posterior means.
    pub fn forward_mean_raw(&self, xs: &Matrix) -> Result<Matrix> {
        self.check_input(xs)?;
        let mut act = xs.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            act = layer.forward_mean(&act)?;
            if i + 1 < self.layers.len() {
                act = act.map(|v| leaky_relu(v, LEAKY_SLOPE));
            }
        }
        Ok(act)
    }

    /// Deterministic predictions at the posterior means, one per input row.
    pub fn forward_mean(&self, xs: &Matrix) -> Result<Vec<GaussianPrediction>> {
        let raw = self.forward_mean_raw(xs)?;
        (0..raw.rows())
            .map(|i| GaussianPrediction::from_raw(raw.row(i), self.output_dim))
            .collect()
    }

    /// One batch of Flipout noise per layer, drawn in layer order.
    pub fn draw_flipout_noise(&self, batch: usize, rng: &mut Rng) -> Vec<FlipoutNoise> {
        self.layers.iter().map(|l| l.draw_noise(batch, rng)).collect()
    }

    /// Raw head outputs of one Flipout pass with fresh noise.
    pub fn forward_flipout(&self, xs: &Matrix, rng: &mut Rng) -> Result<Matrix> {
        let noise = self.draw_flipout_noise(xs.rows(), rng);
        self.forward_flipout_with_noise(xs, &noise)
    }

    pub fn forward_flipout_with_noise(&self, xs: &Matrix, noise: &[FlipoutNoise]) -> Result<Matrix> {
        self.check_input(xs)?;
        let mut act = xs.clone();
        for (i, (layer, nz)) in self.layers.iter().zip(noise).enumerate() {
            act = layer.forward_flipout_with_noise(&act, nz)?;
            if i + 1 < self.layers.len() {
                act = act.map(|v| leaky_relu(v, LEAKY_SLOPE));
            }
        }
        Ok(act)
    }

    /// Tape leaves for the trainable parameter slots.
    pub fn bind(&self, tape: &mut Tape, trainable: Trainable) -> ModelBinding {
        let last = self.layers.len() - 1;
        let mut slots = Vec::with_capacity(4 * self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let train = match trainable {
                Trainable::All => true,
                Trainable::LastLayer | Trainable::LastLayerMeanOutputs => i == last,
            };
            for m in [&layer.w_mean, &layer.w_rho, &layer.b_mean, &layer.b_rho] {
                slots.push(if train { Some(tape.leaf(m.clone())) } else { None });
            }
        }
        ModelBinding { slots }
    }

    /// One Flipout pass recorded on the tape, reusing the bound leaves.
    /// Frozen layers run value-level and enter the tape as constants, so
    /// last-layer-only tapes stay small.
    pub fn forward_flipout_tape(
        &self,
        tape: &mut Tape,
        binding: &ModelBinding,
        xs: &Matrix,
        noise: &[FlipoutNoise],
    ) -> Result<Var> {
        self.check_input(xs)?;
        enum Act {
            Value(Matrix),
            Node(Var),
        }
        let mut act = Act::Value(xs.clone());
        for (i, (layer, nz)) in self.layers.iter().zip(noise).enumerate() {
            let slots = binding.layer_slots(i);
            let frozen = slots.iter().all(|s| s.is_none());
            act = match (frozen, act) {
                (true, Act::Value(m)) => Act::Value(layer.forward_flipout_with_noise(&m, nz)?),
                (frozen_now, prev) => {
                    let x = match prev {
                        Act::Node(v) => v,
                        Act::Value(m) => tape.constant(m),
                    };
                    let get = |tape: &mut Tape, idx: usize, m: &Matrix| match slots[idx] {
                        Some(v) => v,
                        None => tape.constant(m.clone()),
                    };
                    let _ = frozen_now;
                    let wm = get(tape, 0, &layer.w_mean);
                    let wr = get(tape, 1, &layer.w_rho);
                    let bm = get(tape, 2, &layer.b_mean);
                    let br = get(tape, 3, &layer.b_rho);
                    let base = tape.matmul(x, wm)?;
                    let sigma_w = tape.softplus(wr)?;
                    let dw = tape.hadamard_const(sigma_w, &nz.e)?;
                    let xs_signed = tape.hadamard_const(x, &nz.s)?;
                    let pert = tape.matmul(xs_signed, dw)?;
                    let pert = tape.hadamard_const(pert, &nz.r)?;
                    let lin = tape.add(base, pert)?;
                    let with_bias = tape.broadcast_row_add(lin, bm)?;
                    let sigma_b = tape.softplus(br)?;
                    let b_noise = tape.hadamard_const(sigma_b, &nz.eps_b)?;
                    Act::Node(tape.broadcast_row_add(with_bias, b_noise)?)
                }
            };
            if i + 1 < self.layers.len() {
                act = match act {
                    Act::Value(m) => Act::Value(m.map(|v| leaky_relu(v, LEAKY_SLOPE))),
                    Act::Node(v) => Act::Node(tape.leaky_relu(v, LEAKY_SLOPE)?),
                };
            }
        }
        Ok(match act {
            Act::Node(v) => v,
            Act::Value(m) => tape.constant(m),
        })
    }

    /// K Flipout predictions for a single input.
    pub fn mc_predict(&self, x: &[f64], k: usize, rng: &mut Rng) -> Result<McPredictionSet> {
        if k == 0 {
            return Err(CoreError::Domain("mc_predict requires k >= 1".to_string()));
        }
        let xs = Matrix::row_vec(x);
        let mut preds = Vec::with_capacity(k);
        for _ in 0..k {
            let raw = self.forward_flipout(&xs, rng)?;
            preds.push(GaussianPrediction::from_raw(raw.row(0), self.output_dim)?);
        }
        McPredictionSet::new(preds)
    }

    /// K Flipout passes over a whole batch; one prediction set per row.
    /// Each pass shares its base perturbation across the batch exactly as in
    /// training.
    pub fn mc_predict_batch(
        &self,
        xs: &Matrix,
        k: usize,
        rng: &mut Rng,
    ) -> Result<Vec<McPredictionSet>> {
        if k == 0 {
            return Err(CoreError::Domain("mc_predict_batch requires k >= 1".to_string()));
        }
        self.check_input(xs)?;
        let b = xs.rows();
        let mut per_row: Vec<Vec<GaussianPrediction>> = vec![Vec::with_capacity(k); b];
        for _ in 0..k {
            let raw = self.forward_flipout(xs, rng)?;
            for i in 0..b {
                per_row[i].push(GaussianPrediction::from_raw(raw.row(i), self.output_dim)?);
            }
        }
        per_row.into_iter().map(McPredictionSet::new).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_model(rng: &mut Rng) -> BnnModel {
        BnnModel::new(3, &[5], 2, 1.0, rng).unwrap()
    }

    /// Collapse every posterior to (nearly) a point mass.
    fn collapse_sigmas(model: &mut BnnModel) {
        for p in model.param_mut_refs().into_iter().skip(1).step_by(2) {
            for v in p.data_mut() {
                *v = -40.0;
            }
        }
    }

    #[test]
    fn zero_variance_flipout_equals_mean_pass() {
        let mut rng = Rng::from_seed(1);
        let mut model = tiny_model(&mut rng);
        collapse_sigmas(&mut model);
        let xs = Matrix::from_fn(4, 3, |_, _| rng.normal());
        let det = model.forward_mean_raw(&xs).unwrap();
        let stoch = model.forward_flipout(&xs, &mut rng).unwrap();
        for (a, b) in det.data().iter().zip(stoch.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn flipout_is_unbiased() {
        let mut rng = Rng::from_seed(2);
        let layer = VariationalLayer::new(4, 3, 1.0, &mut rng);
        let xs = Matrix::from_fn(2, 4, |_, _| rng.normal());
        let det = layer.forward_mean(&xs).unwrap();
        let passes = 10_000;
        let mut acc = Matrix::zeros(2, 3);
        for _ in 0..passes {
            acc = acc.add(&layer.forward_flipout(&xs, &mut rng).unwrap());
        }
        let avg = acc.scale(1.0 / passes as f64);
        let scale = det.max_abs().max(1.0);
        for (a, d) in avg.data().iter().zip(det.data()) {
            assert!((a - d).abs() / scale < 0.02, "avg {a}, deterministic {d}");
        }
    }

    #[test]
    fn flipout_variance_matches_analytic_form() {
        // Var(out_o) = sum_j x_j^2 sigma_w[j,o]^2 + sigma_b[o]^2.
        let mut rng = Rng::from_seed(3);
        let layer = VariationalLayer::new(3, 2, 1.0, &mut rng);
        let xs = Matrix::from_vec(1, 3, vec![0.8, -1.2, 0.4]).unwrap();
        let det = layer.forward_mean(&xs).unwrap();
        let sw = layer.w_sigma();
        let sb = layer.b_sigma();
        let passes = 10_000;
        let mut sq = vec![0.0; 2];
        for _ in 0..passes {
            let out = layer.forward_flipout(&xs, &mut rng).unwrap();
            for o in 0..2 {
                let d = out.at(0, o) - det.at(0, o);
                sq[o] += d * d;
            }
        }
        for o in 0..2 {
            let expected: f64 = (0..3)
                .map(|j| xs.at(0, j).powi(2) * sw.at(j, o).powi(2))
                .sum::<f64>()
                + sb.at(0, o).powi(2);
            let got = sq[o] / passes as f64;
            assert!((got - expected).abs() / expected < 0.05, "got {got}, expected {expected}");
        }
    }

    #[test]
    fn forward_mean_is_deterministic_and_affine() {
        let mut rng = Rng::from_seed(4);
        let model = tiny_model(&mut rng);
        let xs = Matrix::from_fn(3, 3, |_, _| rng.normal());
        let a = model.forward_mean_raw(&xs).unwrap();
        let b = model.forward_mean_raw(&xs).unwrap();
        assert_eq!(a, b);

        // Single linear layer with hand-set means reproduces the affine map.
        let w_mean = Matrix::from_vec(1, 2, vec![2.0, -1.0]).unwrap();
        let rho = Matrix::from_fn(1, 2, |_, _| -40.0);
        let b_mean = Matrix::from_vec(1, 2, vec![0.5, 0.25]).unwrap();
        let b_rho = Matrix::from_fn(1, 2, |_, _| -40.0);
        let layer =
            VariationalLayer::from_parts(w_mean, rho, b_mean, b_rho, 1.0).unwrap();
        let model = BnnModel::from_layers(vec![layer], 1).unwrap();
        let out = model.forward_mean_raw(&Matrix::from_vec(2, 1, vec![1.0, -2.0]).unwrap()).unwrap();
        assert!((out.at(0, 0) - 2.5).abs() < 1e-12);
        assert!((out.at(0, 1) - (-0.75)).abs() < 1e-12);
        assert!((out.at(1, 0) - (-3.5)).abs() < 1e-12);
        assert!((out.at(1, 1) - 2.25).abs() < 1e-12);
    }

    #[test]
    fn mc_predict_fixed_seed_reproducible() {
        let mut rng = Rng::from_seed(5);
        let model = tiny_model(&mut rng);
        let x = [0.3, -0.4, 1.1];
        let a = model.mc_predict(&x, 64, &mut Rng::from_seed(99)).unwrap();
        let b = model.mc_predict(&x, 64, &mut Rng::from_seed(99)).unwrap();
        assert_eq!(a.k(), 64);
        for (p, q) in a.preds().iter().zip(b.preds()) {
            assert_eq!(p, q);
        }
    }

    #[test]
    fn mc_predict_collapsed_posterior_is_deterministic_prediction() {
        let mut rng = Rng::from_seed(6);
        let mut model = tiny_model(&mut rng);
        collapse_sigmas(&mut model);
        let x = [0.5, 0.2, -0.9];
        let set = model.mc_predict(&x, 1, &mut rng).unwrap();
        let det = &model.forward_mean(&Matrix::row_vec(&x)).unwrap()[0];
        for (a, b) in set.preds()[0].mean().iter().zip(det.mean()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn mean_spread_grows_with_posterior_sigma() {
        let mut rng = Rng::from_seed(7);
        let model = tiny_model(&mut rng);
        let mut wide = model.clone();
        for (i, p) in wide.param_mut_refs().into_iter().enumerate() {
            if i % 2 == 1 {
                for v in p.data_mut() {
                    *v = softplus_inv(0.5);
                }
            }
        }
        let x = [0.3, -0.4, 1.1];
        let spread = |m: &BnnModel| {
            let set = m.mc_predict(&x, 256, &mut Rng::from_seed(13)).unwrap();
            let mean = set.mixture_mean();
            set.preds()
                .iter()
                .map(|p| {
                    p.mean().iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                })
                .sum::<f64>()
                / set.k() as f64
        };
        assert!(spread(&wide) > spread(&model) * 2.0);
    }

    #[test]
    fn identical_inputs_have_exchangeable_outputs() {
        let mut rng = Rng::from_seed(8);
        let layer = VariationalLayer::new(3, 2, 1.0, &mut rng);
        let x = [0.4, 0.9, -0.2];
        let xs = Matrix::from_rows(&[x.to_vec(), x.to_vec(), x.to_vec()]).unwrap();
        let passes = 8000;
        let mut sq = vec![0.0; 3];
        let det = layer.forward_mean(&Matrix::row_vec(&x)).unwrap();
        for _ in 0..passes {
            let out = layer.forward_flipout(&xs, &mut rng).unwrap();
            for row in 0..3 {
                let d0 = out.at(row, 0) - det.at(0, 0);
                let d1 = out.at(row, 1) - det.at(0, 1);
                sq[row] += d0 * d0 + d1 * d1;
            }
        }
        let v0 = sq[0] / passes as f64;
        for row in 1..3 {
            let v = sq[row] / passes as f64;
            assert!((v - v0).abs() / v0 < 0.1, "row {row}: {v} vs {v0}");
        }
    }

    #[test]
    fn doubling_k_halves_mixture_mean_variance() {
        let mut rng = Rng::from_seed(9);
        let model = BnnModel::new(2, &[4], 1, 1.0, &mut rng).unwrap();
        let x = [0.7, -0.3];
        let reps = 10_000;
        let var_of = |k: usize, seed: u64| {
            let mut rng = Rng::from_seed(seed);
            let mut vals = Vec::with_capacity(reps);
            for _ in 0..reps {
                let set = model.mc_predict(&x, k, &mut rng).unwrap();
                vals.push(set.mixture_mean()[0]);
            }
            let mean = vals.iter().sum::<f64>() / reps as f64;
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (reps - 1) as f64
        };
        let v_k = var_of(4, 21);
        let v_2k = var_of(8, 22);
        let ratio = v_k / v_2k;
        assert!((ratio - 2.0).abs() < 0.2, "variance ratio {ratio}");
    }

    #[test]
    fn shape_errors_surface() {
        let mut rng = Rng::from_seed(10);
        let model = tiny_model(&mut rng);
        let bad = Matrix::zeros(2, 7);
        assert!(model.forward_mean_raw(&bad).is_err());
        assert!(model.forward_flipout(&bad, &mut rng).is_err());
    }
}
