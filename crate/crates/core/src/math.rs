//! Small numerical helpers shared across modules.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;
use std::f64::consts::PI;

pub const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// log(1 + exp(x)) without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn std_normal_cdf(x: f64) -> f64 {
    standard_normal().cdf(x)
}

pub fn std_normal_quantile(p: f64) -> f64 {
    standard_normal().inverse_cdf(p)
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid standard normal")
}

/// Normal log density.
pub fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

/// Half-normal log density with scale `phi` at `x >= 0`.
pub fn log_half_normal_pdf(x: f64, phi: f64) -> f64 {
    (2.0 / PI).sqrt().ln() - phi.ln() - 0.5 * (x / phi).powi(2)
}

/// Half-Cauchy log density with scale `scale` at `x >= 0`.
pub fn log_half_cauchy_pdf(x: f64, scale: f64) -> f64 {
    (2.0 / (PI * scale)).ln() - (x / scale).powi(2).ln_1p()
}

/// Inverse-gamma log density with shape `a` and scale `b`.
pub fn log_inv_gamma_pdf(x: f64, a: f64, b: f64) -> f64 {
    a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
}

/// Half Student-t log density with `df` degrees of freedom, location 0 and scale `scale`.
pub fn log_half_student_t_pdf(x: f64, df: f64, scale: f64) -> f64 {
    let z = x / scale;
    std::f64::consts::LN_2 + ln_gamma(0.5 * (df + 1.0))
        - ln_gamma(0.5 * df)
        - 0.5 * (df * PI).ln()
        - scale.ln()
        - 0.5 * (df + 1.0) * (z * z / df).ln_1p()
}

/// d/dx of `log_half_student_t_pdf`.
pub fn d_log_half_student_t_pdf(x: f64, df: f64, scale: f64) -> f64 {
    let z2 = (x / scale).powi(2);
    -(df + 1.0) * x / (scale * scale * df * (1.0 + z2 / df))
}

/// Quantile with linear interpolation between order statistics (R type 7).
/// `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample variance (denominator n - 1).
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Median absolute deviation scaled for consistency with the normal sd (as in R's `mad`).
pub fn mad(values: &[f64]) -> f64 {
    let sorted = sorted_copy(values);
    let med = quantile_sorted(&sorted, 0.5);
    let dev = sorted_copy(&values.iter().map(|v| (v - med).abs()).collect::<Vec<_>>());
    1.4826 * quantile_sorted(&dev, 0.5)
}

/// Pairwise summation for reproducible sums of long vectors.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn quantile_type7_matches_r() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.25), 2.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert_eq!(quantile_sorted(&v, 0.75), 4.0);
        assert_relative_eq!(quantile_sorted(&[0.0, 10.0], 0.3), 3.0);
    }

    #[test]
    fn softplus_is_stable() {
        assert_relative_eq!(softplus(0.0), 2f64.ln());
        assert_relative_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }

    #[test]
    fn half_t_density_at_zero() {
        // 2 * t_3(0) / A with t_3(0) = 2 / (pi * sqrt(3))
        let a = 2.5;
        let expected = 2.0 * (2.0 / (PI * 3f64.sqrt())) / a;
        assert_relative_eq!(
            log_half_student_t_pdf(0.0, 3.0, a).exp(),
            expected,
            max_relative = 1e-12
        );
    }
}
