//! Small descriptive statistics and the normal distribution.

use core::f64::consts::SQRT_2;

/// Standard normal CDF.
#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// P(N(mean, sd²) ≤ x); a zero `sd` is a unit step at `mean`.
pub fn gaussian_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    if sd > 0.0 {
        normal_cdf((x - mean) / sd)
    } else if x >= mean {
        1.0
    } else {
        0.0
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Population variance (divisor n).
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (divisor n - 1); zero for fewer than two values.
pub fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    libm::sqrt(v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64)
}

/// Coefficient of determination of `predicted` against `observed`.
pub fn r_squared(observed: &[f64], predicted: &[f64]) -> f64 {
    let m = mean(observed);
    let ss_tot: f64 = observed.iter().map(|y| (y - m) * (y - m)).sum();
    let ss_res: f64 = observed
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p) * (y - p))
        .sum();
    1.0 - ss_res / ss_tot
}

pub fn mean_squared_error(observed: &[f64], predicted: &[f64]) -> f64 {
    observed
        .iter()
        .zip(predicted)
        .map(|(y, p)| (y - p) * (y - p))
        .sum::<f64>()
        / observed.len() as f64
}

/// Inverts a monotone non-decreasing `cdf` on `[lo, hi]` by bisection.
pub fn bisect_quantile(cdf: impl Fn(f64) -> f64, p: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * (1.0 + libm::fabs(mid)) {
            break;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_reference_points() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        // Φ(1.959963984540054) = 0.975
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-14);
        assert!((normal_cdf(-1.644_853_626_951_472_2) - 0.05).abs() < 1e-14);
        assert!(normal_cdf(-40.0) >= 0.0 && normal_cdf(40.0) <= 1.0);
    }

    #[test]
    fn degenerate_gaussian_is_a_step() {
        assert_eq!(gaussian_cdf(0.99, 1.0, 0.0), 0.0);
        assert_eq!(gaussian_cdf(1.0, 1.0, 0.0), 1.0);
    }

    #[test]
    fn bisection_recovers_normal_quantile() {
        let q = bisect_quantile(normal_cdf, 0.95, -10.0, 10.0);
        assert!((q - 1.644_853_626_951_472_2).abs() < 1e-10);
    }
}
