//! Calibration and accuracy metrics: coverage-probability reliability curves,
//! the signed area between a curve and the diagonal, pooled R^2, predictive
//! NLL, the aleatoric/epistemic decomposition of Monte Carlo prediction sets,
//! and a histogram highest-density-interval coverage check for samples.

use crate::bnn::McPredictionSet;
use crate::error::{CoreError, Result};
use crate::gaussian::GaussianPrediction;
use crate::linalg::Matrix;
use crate::special::{chi2_quantile, hotelling_threshold};

/// Paired (nominal, empirical) coverage probabilities on a fixed grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageCurve {
    points: Vec<(f64, f64)>,
}

impl CoverageCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        let mut prev = 0.0;
        for &(nominal, empirical) in &points {
            if !(nominal > 0.0 && nominal < 1.0) || nominal <= prev {
                return Err(CoreError::Domain(format!(
                    "nominal levels must be strictly increasing inside (0,1); got {nominal}"
                )));
            }
            if !(0.0..=1.0).contains(&empirical) {
                return Err(CoreError::Domain(format!(
                    "empirical coverage must lie in [0,1]; got {empirical}"
                )));
            }
            prev = nominal;
        }
        Ok(CoverageCurve { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// The default evaluation grid: 99 levels 0.01..=0.99.
    pub fn default_grid() -> Vec<f64> {
        (1..=99).map(|i| i as f64 / 100.0).collect()
    }

    /// Rows in the reliability-diagram schema `nominal,empirical,method,alpha`.
    pub fn csv_rows(&self, method: &str, alpha: &str) -> String {
        let mut out = String::new();
        for (n, e) in &self.points {
            out.push_str(&format!("{n},{e},{method},{alpha}\n"));
        }
        out
    }
}

/// How confidence-region thresholds are computed: asymptotic chi-square, or
/// the finite-sample Hotelling form k(d-1)/(d-k) F(k, d-k).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThresholdMode {
    Chi2,
    Hotelling,
}

impl ThresholdMode {
    pub fn threshold(&self, dim: usize, samples: usize, level: f64) -> Result<f64> {
        match self {
            ThresholdMode::Chi2 => chi2_quantile(dim, level),
            ThresholdMode::Hotelling => hotelling_threshold(dim, samples, level),
        }
    }
}

/// Empirical coverage of the nominal confidence ellipsoids: for each grid
/// level, the fraction of targets whose squared Mahalanobis distance falls
/// inside the level's threshold.
pub fn coverage_curve(
    preds: &[GaussianPrediction],
    targets: &Matrix,
    grid: &[f64],
    mode: ThresholdMode,
) -> Result<CoverageCurve> {
    if preds.is_empty() {
        return Err(CoreError::EmptyInput("coverage_curve predictions"));
    }
    if targets.rows() != preds.len() || targets.cols() != preds[0].dim() {
        return Err(CoreError::ShapeMismatch {
            context: "coverage_curve",
            expected: format!("{}x{} targets", preds.len(), preds[0].dim()),
            got: format!("{:?}", targets.shape()),
        });
    }
    let dim = preds[0].dim();
    let d = preds.len();
    let distances: Vec<f64> = preds
        .iter()
        .enumerate()
        .map(|(i, p)| p.mahalanobis_sq(targets.row(i)))
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::with_capacity(grid.len());
    for &level in grid {
        let threshold = mode.threshold(dim, d, level)?;
        let hits = distances.iter().filter(|&&m| m <= threshold).count();
        points.push((level, hits as f64 / d as f64));
    }
    CoverageCurve::new(points)
}

/// Signed trapezoidal integral of (empirical - nominal) over nominal, with
/// the endpoints (0,0) and (1,1) appended. Zero is perfect calibration,
/// negative is overconfident, positive underconfident; |area| <= 0.5.
pub fn area_score(curve: &CoverageCurve) -> Result<f64> {
    if curve.points().len() < 2 {
        return Err(CoreError::Domain("area_score needs at least 2 grid points".to_string()));
    }
    let mut xs = vec![0.0];
    let mut fs = vec![0.0];
    for &(n, e) in curve.points() {
        xs.push(n);
        fs.push(e - n);
    }
    xs.push(1.0);
    fs.push(0.0);
    let mut area = 0.0;
    for i in 0..xs.len() - 1 {
        area += 0.5 * (fs[i] + fs[i + 1]) * (xs[i + 1] - xs[i]);
    }
    Ok(area)
}

/// Coefficient of determination pooled over every output dimension:
/// 1 - sum (pred - y)^2 / sum (y - mean(y))^2, summations over the whole set.
pub fn r_squared(mean_preds: &Matrix, targets: &Matrix) -> Result<f64> {
    if mean_preds.shape() != targets.shape() {
        return Err(CoreError::ShapeMismatch {
            context: "r_squared",
            expected: format!("{:?}", targets.shape()),
            got: format!("{:?}", mean_preds.shape()),
        });
    }
    if targets.rows() < 2 {
        return Err(CoreError::Domain("r_squared needs at least 2 targets".to_string()));
    }
    let (rows, cols) = targets.shape();
    let mut mean = vec![0.0; cols];
    for i in 0..rows {
        for (j, m) in mean.iter_mut().enumerate() {
            *m += targets.at(i, j);
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for i in 0..rows {
        for j in 0..cols {
            ss_res += (mean_preds.at(i, j) - targets.at(i, j)).powi(2);
            ss_tot += (targets.at(i, j) - mean[j]).powi(2);
        }
    }
    if ss_tot == 0.0 {
        return Err(CoreError::Domain("r_squared undefined for zero target variance".to_string()));
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Per-dimension R^2, for diagnostics.
pub fn r_squared_per_dim(mean_preds: &Matrix, targets: &Matrix) -> Result<Vec<f64>> {
    if mean_preds.shape() != targets.shape() {
        return Err(CoreError::ShapeMismatch {
            context: "r_squared_per_dim",
            expected: format!("{:?}", targets.shape()),
            got: format!("{:?}", mean_preds.shape()),
        });
    }
    let (rows, cols) = targets.shape();
    (0..cols)
        .map(|j| {
            let col_pred = Matrix::from_fn(rows, 1, |i, _| mean_preds.at(i, j));
            let col_target = Matrix::from_fn(rows, 1, |i, _| targets.at(i, j));
            r_squared(&col_pred, &col_target)
        })
        .collect()
}

/// Mixture moments of a Monte Carlo prediction set: aleatoric is the average
/// per-sample covariance, epistemic the unbiased covariance of the per-sample
/// means (zero when K = 1), total their sum.
#[derive(Debug, Clone)]
pub struct UncertaintyDecomposition {
    pub aleatoric: Matrix,
    pub epistemic: Matrix,
    pub total: Matrix,
}

impl UncertaintyDecomposition {
    pub fn aleatoric_trace(&self) -> f64 {
        trace(&self.aleatoric)
    }

    pub fn epistemic_trace(&self) -> f64 {
        trace(&self.epistemic)
    }

    pub fn total_trace(&self) -> f64 {
        trace(&self.total)
    }
}

fn trace(m: &Matrix) -> f64 {
    (0..m.rows()).map(|i| m.at(i, i)).sum()
}

pub fn decompose_uncertainty(mc: &McPredictionSet) -> UncertaintyDecomposition {
    let n = mc.dim();
    let k = mc.k();
    let mut aleatoric = Matrix::zeros(n, n);
    for p in mc.preds() {
        aleatoric = aleatoric.add(&p.covariance());
    }
    aleatoric = aleatoric.scale(1.0 / k as f64);

    let mean = mc.mixture_mean();
    let mut epistemic = Matrix::zeros(n, n);
    if k > 1 {
        for p in mc.preds() {
            let d: Vec<f64> = p.mean().iter().zip(&mean).map(|(a, b)| a - b).collect();
            for i in 0..n {
                for j in 0..n {
                    epistemic.set(i, j, epistemic.at(i, j) + d[i] * d[j]);
                }
            }
        }
        epistemic = epistemic.scale(1.0 / (k - 1) as f64);
    }
    let total = aleatoric.add(&epistemic);
    UncertaintyDecomposition { aleatoric, epistemic, total }
}

/// Moment-matched single Gaussian for a Monte Carlo prediction set: mixture
/// mean with the total (aleatoric + epistemic) covariance.
pub fn moment_matched(mc: &McPredictionSet) -> Result<GaussianPrediction> {
    let decomp = decompose_uncertainty(mc);
    let chol = decomp.total.cholesky().map_err(|e| {
        CoreError::Numerical(format!("total covariance not factorizable: {e}; {:?}", decomp.total))
    })?;
    GaussianPrediction::new(mc.mixture_mean(), chol)
}

/// Mean negative log predictive density over single-Gaussian predictions.
pub fn test_nll(preds: &[GaussianPrediction], targets: &Matrix) -> Result<f64> {
    if preds.is_empty() {
        return Err(CoreError::EmptyInput("test_nll predictions"));
    }
    if targets.rows() != preds.len() {
        return Err(CoreError::ShapeMismatch {
            context: "test_nll",
            expected: format!("{} target rows", preds.len()),
            got: format!("{}", targets.rows()),
        });
    }
    let mut total = 0.0;
    for (i, p) in preds.iter().enumerate() {
        total += p.nll(targets.row(i))?;
    }
    Ok(total / preds.len() as f64)
}

/// Mean negative log predictive density where each prediction is the mixture
/// (1/K) sum_k N(mu_k, Sigma_k), aggregated with a stable log-mean-exp.
pub fn test_nll_mc(sets: &[McPredictionSet], targets: &Matrix) -> Result<f64> {
    if sets.is_empty() {
        return Err(CoreError::EmptyInput("test_nll_mc prediction sets"));
    }
    if targets.rows() != sets.len() {
        return Err(CoreError::ShapeMismatch {
            context: "test_nll_mc",
            expected: format!("{} target rows", sets.len()),
            got: format!("{}", targets.rows()),
        });
    }
    let mut total = 0.0;
    for (i, s) in sets.iter().enumerate() {
        total -= s.log_density(targets.row(i))?;
    }
    Ok(total / sets.len() as f64)
}

/// Coverage of highest-density intervals built from histograms of posterior
/// samples, one scalar dimension at a time.
///
/// Per test point: bin the samples (Freedman-Diaconis width), start from the
/// mode bin and grow the interval by repeatedly adding the adjacent bin with
/// the higher mass (ties go right) until the requested mass is reached; the
/// edge of the final bin is interpolated so the interval holds exactly the
/// requested sample mass. The empirical coverage at a level is the fraction
/// of targets inside their interval. Needs at least 100 samples per point.
pub fn hdi_coverage(
    samples: &[Vec<f64>],
    targets: &[f64],
    grid: &[f64],
) -> Result<CoverageCurve> {
    if samples.is_empty() {
        return Err(CoreError::EmptyInput("hdi_coverage samples"));
    }
    if samples.len() != targets.len() {
        return Err(CoreError::ShapeMismatch {
            context: "hdi_coverage",
            expected: format!("{} targets", samples.len()),
            got: format!("{}", targets.len()),
        });
    }
    for s in samples {
        if s.len() < 100 {
            return Err(CoreError::Domain(format!(
                "hdi_coverage needs >= 100 samples per test point, got {}",
                s.len()
            )));
        }
    }
    let histograms: Vec<Histogram> = samples.iter().map(|s| Histogram::build(s)).collect();
    let mut points = Vec::with_capacity(grid.len());
    for &level in grid {
        let mut hits = 0usize;
        for (h, &y) in histograms.iter().zip(targets) {
            let (lo, hi) = h.hdi(level);
            let inside = if lo == hi {
                (y - lo).abs() <= 1e-12
            } else {
                y >= lo && y <= hi
            };
            if inside {
                hits += 1;
            }
        }
        points.push((level, hits as f64 / targets.len() as f64));
    }
    CoverageCurve::new(points)
}

struct Histogram {
    lo: f64,
    width: f64,
    counts: Vec<usize>,
    total: usize,
    degenerate_at: Option<f64>,
}

impl Histogram {
    fn build(samples: &[f64]) -> Histogram {
        let n = samples.len();
        let mut sorted = samples.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let min = sorted[0];
        let max = sorted[n - 1];
        let iqr = sorted[(3 * n) / 4] - sorted[n / 4];
        let width = 2.0 * iqr / (n as f64).cbrt();
        if max == min || width <= 0.0 {
            // All mass effectively at one spot: zero-width interval.
            return Histogram {
                lo: min,
                width: 0.0,
                counts: vec![n],
                total: n,
                degenerate_at: Some(sorted[n / 2]),
            };
        }
        let bins = (((max - min) / width).ceil() as usize).clamp(1, n);
        let width = (max - min) / bins as f64;
        let mut counts = vec![0usize; bins];
        for &s in &sorted {
            let idx = (((s - min) / width) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        Histogram { lo: min, width, counts, total: n, degenerate_at: None }
    }

    /// Interval around the mode bin holding `level` of the sample mass, the
    /// final bin trimmed by linear interpolation.
    fn hdi(&self, level: f64) -> (f64, f64) {
        if let Some(v) = self.degenerate_at {
            return (v, v);
        }
        let mut mode = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[mode] {
                mode = i;
            }
        }
        let (mut lo, mut hi) = (mode, mode);
        let mut mass = self.counts[mode];
        let needed = level * self.total as f64;
        let mut grew_left = false;
        let mut last_count = self.counts[mode];
        while (mass as f64) < needed {
            let left = if lo > 0 { Some(self.counts[lo - 1]) } else { None };
            let right = if hi + 1 < self.counts.len() { Some(self.counts[hi + 1]) } else { None };
            match (left, right) {
                (None, None) => break,
                (Some(l), r) if r.is_none() || l > r.unwrap() => {
                    lo -= 1;
                    mass += self.counts[lo];
                    grew_left = true;
                    last_count = self.counts[lo];
                }
                (_, Some(_)) => {
                    hi += 1;
                    mass += self.counts[hi];
                    grew_left = false;
                    last_count = self.counts[hi];
                }
                _ => unreachable!(),
            }
        }
        let mut lo_edge = self.lo + lo as f64 * self.width;
        let mut hi_edge = self.lo + (hi + 1) as f64 * self.width;
        let excess = mass as f64 - needed;
        if excess > 0.0 && last_count > 0 {
            let trim = (excess / last_count as f64).min(1.0) * self.width;
            if grew_left {
                lo_edge += trim;
            } else {
                hi_edge -= trim;
            }
        }
        (lo_edge, hi_edge)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn exact_gaussian_fixture(
        n_points: usize,
        scale: f64,
        seed: u64,
    ) -> (Vec<GaussianPrediction>, Matrix) {
        // Random 2-d predictions; targets drawn from the prediction scaled by
        // `scale` on the factor (scale=1: exactly specified).
        let mut rng = Rng::from_seed(seed);
        let mut preds = Vec::with_capacity(n_points);
        let mut targets = Matrix::zeros(n_points, 2);
        for i in 0..n_points {
            let chol = Matrix::from_vec(
                2,
                2,
                vec![0.5 + rng.uniform(), 0.0, 0.4 * rng.normal(), 0.5 + rng.uniform()],
            )
            .unwrap();
            let mean = vec![rng.normal(), rng.normal()];
            let truth =
                GaussianPrediction::new(mean.clone(), chol.scale(scale)).unwrap();
            let y = truth.sample(&mut rng);
            targets.set(i, 0, y[0]);
            targets.set(i, 1, y[1]);
            preds.push(GaussianPrediction::new(mean, chol).unwrap());
        }
        (preds, targets)
    }

    #[test]
    fn coverage_exact_targets_is_one_everywhere() {
        let mut rng = Rng::from_seed(1);
        let preds: Vec<GaussianPrediction> = (0..50)
            .map(|_| {
                GaussianPrediction::new(vec![rng.normal(), rng.normal()], Matrix::identity(2))
                    .unwrap()
            })
            .collect();
        let targets = Matrix::from_fn(50, 2, |i, j| preds[i].mean()[j]);
        let curve =
            coverage_curve(&preds, &targets, &CoverageCurve::default_grid(), ThresholdMode::Chi2)
                .unwrap();
        assert!(curve.points().iter().all(|&(_, e)| e == 1.0));
    }

    #[test]
    fn coverage_well_specified_predictions_track_the_diagonal() {
        let (preds, targets) = exact_gaussian_fixture(10_000, 1.0, 2);
        let curve =
            coverage_curve(&preds, &targets, &CoverageCurve::default_grid(), ThresholdMode::Chi2)
                .unwrap();
        for &(n, e) in curve.points() {
            assert!((e - n).abs() <= 0.015, "level {n}: empirical {e}");
        }
        let area = area_score(&curve).unwrap();
        assert!(area.abs() <= 0.01, "area {area}");
    }

    #[test]
    fn coverage_understated_covariance_sits_below_diagonal() {
        // Targets drawn with twice the factor (4x the covariance) the
        // predictions claim: overconfident, curve below the diagonal.
        let (preds, targets) = exact_gaussian_fixture(10_000, 2.0, 3);
        let curve =
            coverage_curve(&preds, &targets, &CoverageCurve::default_grid(), ThresholdMode::Chi2)
                .unwrap();
        for &(n, e) in curve.points() {
            assert!(e < n, "level {n}: empirical {e} not below nominal");
        }
        assert!(area_score(&curve).unwrap() < -0.1);
    }

    #[test]
    fn coverage_is_monotone_in_level() {
        let (preds, targets) = exact_gaussian_fixture(2000, 1.3, 4);
        let curve =
            coverage_curve(&preds, &targets, &CoverageCurve::default_grid(), ThresholdMode::Chi2)
                .unwrap();
        for w in curve.points().windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn coverage_rejects_empty_input() {
        let preds: Vec<GaussianPrediction> = Vec::new();
        let targets = Matrix::zeros(0, 2);
        assert!(matches!(
            coverage_curve(&preds, &targets, &[0.5], ThresholdMode::Chi2),
            Err(CoreError::EmptyInput(_))
        ));
    }

    #[test]
    fn chi2_and_hotelling_agree_for_large_samples() {
        for level in [0.1, 0.5, 0.9, 0.99] {
            let c = ThresholdMode::Chi2.threshold(3, 10_000, level).unwrap();
            let h = ThresholdMode::Hotelling.threshold(3, 10_000, level).unwrap();
            assert!((c - h).abs() / c < 0.01, "level {level}: chi2 {c}, hotelling {h}");
        }
    }

    #[test]
    fn area_score_identity_curve_is_zero() {
        let grid = CoverageCurve::default_grid();
        let curve = CoverageCurve::new(grid.iter().map(|&g| (g, g)).collect()).unwrap();
        assert_eq!(area_score(&curve).unwrap(), 0.0);
    }

    #[test]
    fn area_score_zero_empirical_approaches_negative_half() {
        let grid: Vec<f64> = (1..10_000).map(|i| i as f64 / 10_000.0).collect();
        let curve = CoverageCurve::new(grid.iter().map(|&g| (g, 0.0)).collect()).unwrap();
        let area = area_score(&curve).unwrap();
        assert!((area + 0.5).abs() < 5e-4, "area {area}");
    }

    #[test]
    fn area_score_quadratic_curve() {
        let grid: Vec<f64> = (1..10_000).map(|i| i as f64 / 10_000.0).collect();
        let curve = CoverageCurve::new(grid.iter().map(|&g| (g, g * g)).collect()).unwrap();
        let area = area_score(&curve).unwrap();
        assert!((area + 1.0 / 6.0).abs() < 5e-4, "area {area}");
    }

    #[test]
    fn area_score_is_bounded_by_half() {
        let grid = CoverageCurve::default_grid();
        for fill in [0.0, 1.0] {
            let curve = CoverageCurve::new(grid.iter().map(|&g| (g, fill)).collect()).unwrap();
            assert!(area_score(&curve).unwrap().abs() <= 0.5);
        }
    }

    #[test]
    fn r_squared_cases() {
        let t = Matrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(r_squared(&t.clone(), &t).unwrap(), 1.0);

        let mean_pred = Matrix::from_vec(3, 1, vec![2.0, 2.0, 2.0]).unwrap();
        assert_eq!(r_squared(&mean_pred, &t).unwrap(), 0.0);

        let p = Matrix::from_vec(3, 1, vec![1.0, 2.0, 4.0]).unwrap();
        assert!((r_squared(&p, &t).unwrap() - 0.5).abs() < 1e-12);

        let flat = Matrix::from_vec(2, 1, vec![5.0, 5.0]).unwrap();
        assert!(r_squared(&flat.clone(), &flat).is_err());
    }

    #[test]
    fn r_squared_is_permutation_invariant() {
        let mut rng = Rng::from_seed(5);
        let p = Matrix::from_fn(20, 3, |_, _| rng.normal());
        let t = Matrix::from_fn(20, 3, |_, _| rng.normal());
        let base = r_squared(&p, &t).unwrap();
        let mut order: Vec<usize> = (0..20).collect();
        rng.shuffle(&mut order);
        let permuted = r_squared(&p.take_rows(&order), &t.take_rows(&order)).unwrap();
        assert!((base - permuted).abs() < 1e-12);
    }

    #[test]
    fn decompose_single_sample_has_zero_epistemic() {
        let p = GaussianPrediction::new(vec![0.0], Matrix::from_vec(1, 1, vec![1.5]).unwrap())
            .unwrap();
        let mc = McPredictionSet::new(vec![p.clone()]).unwrap();
        let d = decompose_uncertainty(&mc);
        assert_eq!(d.epistemic.at(0, 0), 0.0);
        assert!((d.total.at(0, 0) - p.covariance().at(0, 0)).abs() < 1e-12);
    }

    #[test]
    fn decompose_two_sample_hand_case() {
        let chol = Matrix::from_vec(1, 1, vec![1.0]).unwrap();
        let mc = McPredictionSet::new(vec![
            GaussianPrediction::new(vec![0.0], chol.clone()).unwrap(),
            GaussianPrediction::new(vec![2.0], chol).unwrap(),
        ])
        .unwrap();
        let d = decompose_uncertainty(&mc);
        assert!((d.epistemic.at(0, 0) - 2.0).abs() < 1e-12); // unbiased var of {0,2}
        assert!((d.aleatoric.at(0, 0) - 1.0).abs() < 1e-12);
        assert!((d.total.at(0, 0) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn decompose_total_matches_pooled_sample_covariance() {
        // Sampling from the mixture should reproduce total = aleatoric +
        // epistemic within Monte Carlo error.
        let mut rng = Rng::from_seed(6);
        let preds: Vec<GaussianPrediction> = (0..64)
            .map(|_| {
                let chol =
                    Matrix::from_vec(2, 2, vec![0.8, 0.0, 0.2 * rng.normal(), 0.6]).unwrap();
                GaussianPrediction::new(vec![rng.normal(), rng.normal()], chol).unwrap()
            })
            .collect();
        let mc = McPredictionSet::new(preds).unwrap();
        let d = decompose_uncertainty(&mc);
        let draws = 10_000;
        let mut mean = vec![0.0; 2];
        let mut samples = Vec::with_capacity(draws);
        for i in 0..draws {
            let comp = &mc.preds()[i % mc.k()];
            let s = comp.sample(&mut rng);
            mean[0] += s[0];
            mean[1] += s[1];
            samples.push(s);
        }
        mean[0] /= draws as f64;
        mean[1] /= draws as f64;
        let mut cov = Matrix::zeros(2, 2);
        for s in &samples {
            let dx = [s[0] - mean[0], s[1] - mean[1]];
            for i in 0..2 {
                for j in 0..2 {
                    cov.set(i, j, cov.at(i, j) + dx[i] * dx[j]);
                }
            }
        }
        cov = cov.scale(1.0 / draws as f64);
        let rel = cov.sub(&d.total).frobenius_norm() / d.total.frobenius_norm();
        assert!(rel < 0.05, "relative error {rel}");
    }

    #[test]
    fn decomposition_parts_are_symmetric_psd() {
        let mut rng = Rng::from_seed(19);
        for _ in 0..20 {
            let preds: Vec<GaussianPrediction> = (0..8)
                .map(|_| {
                    let chol = Matrix::from_fn(3, 3, |i, j| {
                        if i == j {
                            0.2 + rng.uniform()
                        } else if j < i {
                            0.4 * rng.normal()
                        } else {
                            0.0
                        }
                    });
                    GaussianPrediction::new(
                        (0..3).map(|_| rng.normal()).collect(),
                        chol,
                    )
                    .unwrap()
                })
                .collect();
            let d = decompose_uncertainty(&McPredictionSet::new(preds).unwrap());
            for m in [&d.aleatoric, &d.epistemic, &d.total] {
                let asym = m.sub(&m.transpose()).max_abs();
                assert!(asym < 1e-9, "asymmetry {asym}");
                let eps = 1e-9 * m.max_abs().max(1.0);
                let shifted = m.add(&Matrix::identity(3).scale(eps));
                assert!(shifted.cholesky().is_ok(), "not PSD within 1e-9: {m:?}");
            }
            let gap = d.total.sub(&d.aleatoric.add(&d.epistemic)).max_abs();
            assert!(gap < 1e-12);
        }
    }

    #[test]
    fn test_nll_single_identity_prediction() {
        let p = GaussianPrediction::new(vec![0.3, -0.3], Matrix::identity(2)).unwrap();
        let targets = Matrix::from_vec(1, 2, vec![0.3, -0.3]).unwrap();
        let nll = test_nll(&[p], &targets).unwrap();
        assert!((nll - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn mixture_of_identical_components_collapses() {
        let p = GaussianPrediction::new(vec![0.1], Matrix::from_vec(1, 1, vec![0.9]).unwrap())
            .unwrap();
        let mc = McPredictionSet::new(vec![p.clone(); 7]).unwrap();
        let targets = Matrix::from_vec(1, 1, vec![0.6]).unwrap();
        let mixture = test_nll_mc(&[mc], &targets).unwrap();
        let single = test_nll(&[p], &targets).unwrap();
        assert!((mixture - single).abs() < 1e-12);
    }

    #[test]
    fn mixture_nll_never_exceeds_mean_component_nll() {
        let mut rng = Rng::from_seed(7);
        for _ in 0..20 {
            let preds: Vec<GaussianPrediction> = (0..5)
                .map(|_| {
                    GaussianPrediction::new(
                        vec![rng.normal()],
                        Matrix::from_vec(1, 1, vec![0.3 + rng.uniform()]).unwrap(),
                    )
                    .unwrap()
                })
                .collect();
            let y = vec![rng.normal()];
            let mean_nll: f64 =
                preds.iter().map(|p| p.nll(&y).unwrap()).sum::<f64>() / preds.len() as f64;
            let mc = McPredictionSet::new(preds).unwrap();
            let targets = Matrix::from_vec(1, 1, y).unwrap();
            let mixture = test_nll_mc(&[mc], &targets).unwrap();
            assert!(mixture <= mean_nll + 1e-12);
        }
    }

    #[test]
    fn hdi_all_samples_at_target_covers_everything() {
        let samples = vec![vec![1.5; 200]; 10];
        let targets = vec![1.5; 10];
        let curve = hdi_coverage(&samples, &targets, &[0.3, 0.6827, 0.95]).unwrap();
        assert!(curve.points().iter().all(|&(_, e)| e == 1.0));
    }

    #[test]
    fn hdi_standard_normal_recovers_one_sigma_coverage() {
        let mut rng = Rng::from_seed(8);
        let n_points = 10_000;
        let samples: Vec<Vec<f64>> =
            (0..n_points).map(|_| (0..200).map(|_| rng.normal()).collect()).collect();
        let targets: Vec<f64> = (0..n_points).map(|_| rng.normal()).collect();
        let curve = hdi_coverage(&samples, &targets, &[0.6827]).unwrap();
        let (_, e) = curve.points()[0];
        assert!((e - 0.6827).abs() < 0.015, "empirical {e}");
    }

    #[test]
    fn hdi_uniform_half_mass_interval_is_half_width() {
        let mut rng = Rng::from_seed(9);
        let samples: Vec<f64> = (0..20_000).map(|_| rng.uniform()).collect();
        let h = Histogram::build(&samples);
        let (lo, hi) = h.hdi(0.5);
        assert!((hi - lo - 0.5).abs() < 0.06, "width {}", hi - lo);
    }

    #[test]
    fn hdi_requires_enough_samples() {
        let samples = vec![vec![0.0; 50]];
        assert!(matches!(
            hdi_coverage(&samples, &[0.0], &[0.5]),
            Err(CoreError::Domain(_))
        ));
    }
}
