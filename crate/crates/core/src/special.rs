//! Special functions behind the confidence-region thresholds: log-gamma,
//! regularized incomplete gamma and beta, and the chi-square / F / Hotelling
//! quantiles derived from them. Quantiles are found by bisection on the
//! corresponding CDF, which is slow but monotone-safe.

use crate::error::{CoreError, Result};

const MAX_ITER: usize = 300;

/// Natural log of the gamma function (Lanczos approximation, g=7, n=9).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 9] = [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEFFS[0];
    for (i, &c) in COEFFS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized lower incomplete gamma P(a, x).
///
/// Series expansion for x < a + 1, Lentz continued fraction for the upper
/// tail otherwise.
pub fn gamma_p(a: f64, x: f64) -> Result<f64> {
    if a <= 0.0 || x < 0.0 {
        return Err(CoreError::Domain(format!("gamma_p requires a > 0, x >= 0 (a={a}, x={x})")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    let log_prefactor = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // P via series.
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        Ok((log_prefactor.exp() * sum).min(1.0))
    } else {
        // Q via continued fraction, then complement.
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..=MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < 1e-16 {
                break;
            }
        }
        Ok((1.0 - log_prefactor.exp() * h).max(0.0))
    }
}

/// Regularized incomplete beta I_x(a, b) via the Lentz continued fraction.
pub fn beta_inc(a: f64, b: f64, x: f64) -> Result<f64> {
    if a <= 0.0 || b <= 0.0 || !(0.0..=1.0).contains(&x) {
        return Err(CoreError::Domain(format!(
            "beta_inc requires a > 0, b > 0, 0 <= x <= 1 (a={a}, b={b}, x={x})"
        )));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x == 1.0 {
        return Ok(1.0);
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    // Use the symmetry relation to keep the continued fraction convergent.
    if x < (a + 1.0) / (a + b + 2.0) {
        Ok(ln_front.exp() * beta_cf(a, b, x)? / a)
    } else {
        Ok(1.0 - ln_front.exp() * beta_cf(b, a, 1.0 - x)? / b)
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    let tiny = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            return Ok(h);
        }
    }
    Ok(h)
}

/// Chi-square CDF with k degrees of freedom.
pub fn chi2_cdf(k: f64, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    gamma_p(k / 2.0, x / 2.0)
}

/// Chi-square quantile: the x with CDF_k(x) = p, found by bisection.
pub fn chi2_quantile(k: usize, p: f64) -> Result<f64> {
    if k < 1 {
        return Err(CoreError::Domain(format!("chi2_quantile requires k >= 1, got {k}")));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(CoreError::Domain(format!("chi2_quantile requires 0 <= p < 1, got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let kf = k as f64;
    bisect_quantile(p, |x| chi2_cdf(kf, x), kf + 40.0 * (2.0 * kf).sqrt() + 40.0)
}

/// F-distribution CDF with (d1, d2) degrees of freedom.
pub fn f_cdf(d1: f64, d2: f64, x: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    beta_inc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2))
}

/// F-distribution quantile by bisection on `f_cdf`.
pub fn f_quantile(d1: usize, d2: usize, p: f64) -> Result<f64> {
    if d1 < 1 || d2 < 1 {
        return Err(CoreError::Domain(format!("f_quantile requires d1, d2 >= 1, got ({d1}, {d2})")));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(CoreError::Domain(format!("f_quantile requires 0 <= p < 1, got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let (a, b) = (d1 as f64, d2 as f64);
    bisect_quantile(p, |x| f_cdf(a, b, x), 1e6)
}

/// Confidence-ellipsoid threshold for a k-dimensional statistic estimated
/// from d samples: k(d-1)/(d-k) times the F(k, d-k) quantile at p. Converges
/// to the chi-square quantile as d grows.
pub fn hotelling_threshold(k: usize, d: usize, p: f64) -> Result<f64> {
    if k < 1 {
        return Err(CoreError::Domain(format!("hotelling_threshold requires k >= 1, got {k}")));
    }
    if d <= k {
        return Err(CoreError::Domain(format!(
            "hotelling_threshold requires d > k, got d={d}, k={k}"
        )));
    }
    if !(0.0..1.0).contains(&p) {
        return Err(CoreError::Domain(format!("hotelling_threshold requires 0 <= p < 1, got {p}")));
    }
    let scale = (k as f64) * (d as f64 - 1.0) / (d as f64 - k as f64);
    Ok(scale * f_quantile(k, d - k, p)?)
}

/// Bisection for the x with cdf(x) = p on [0, hi0], expanding hi0 if needed.
fn bisect_quantile(p: f64, cdf: impl Fn(f64) -> Result<f64>, hi0: f64) -> Result<f64> {
    let mut lo = 0.0;
    let mut hi = hi0;
    let mut guard = 0;
    while cdf(hi)? < p {
        hi *= 2.0;
        guard += 1;
        if guard > 200 {
            return Err(CoreError::Numerical(format!("quantile bracket failed at p={p}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid)? < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
