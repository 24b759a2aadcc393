//! Small numeric helpers shared across fitting, noise, and replay code.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance (divides by n).
pub fn population_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

/// Sample variance (divides by n - 1).
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

/// Nearest-rank quantile of an ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InsufficientData("quantile of empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) || !q.is_finite() {
        return Err(Error::InvalidInput(format!(
            "quantile must lie in [0, 1], got {q}"
        )));
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.max(1).min(sorted.len()) - 1])
}

/// Nearest-rank percentile of unsorted integer samples (latencies).
pub fn percentile_u64(samples: &[u64], q: f64) -> Result<u64> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("percentile of empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) || !q.is_finite() {
        return Err(Error::InvalidInput(format!(
            "percentile must lie in [0, 1], got {q}"
        )));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    let rank = (q * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.max(1).min(sorted.len()) - 1])
}

/// Least-squares line through `(x, y)` points; returns `(slope, intercept)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput(
            "linear fit needs equal-length inputs".into(),
        ));
    }
    if xs.len() < 2 {
        return Err(Error::InsufficientData(
            "linear fit needs at least two points".into(),
        ));
    }
    let mx = mean(xs);
    let my = mean(ys);
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if sxx == 0.0 {
        return Err(Error::InsufficientData(
            "linear fit needs at least two distinct x values".into(),
        ));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Kolmogorov-Smirnov distance between an ascending-sorted sample and a
/// model CDF: the largest gap between empirical and model probability.
pub fn ks_statistic<F>(sorted: &[f64], cdf: F) -> f64
where
    F: Fn(f64) -> f64,
{
    let n = sorted.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    // Unit normal construction cannot fail.
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn moments() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_relative_eq!(mean(&v), 2.5);
        assert_relative_eq!(population_variance(&v), 1.25);
        assert_relative_eq!(sample_variance(&v), 5.0 / 3.0);
    }

    #[test]
    fn nearest_rank_quantile() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile_sorted(&v, 0.5).unwrap(), 3.0);
        assert_eq!(quantile_sorted(&v, 0.9).unwrap(), 5.0);
        assert_eq!(quantile_sorted(&v, 1.0).unwrap(), 5.0);
        assert!(quantile_sorted(&v, 1.5).is_err());
        assert!(quantile_sorted(&[], 0.5).is_err());
    }

    #[test]
    fn integer_percentiles() {
        let v = [10u64, 20, 30, 40, 50, 60, 70, 80, 90, 100];
        assert_eq!(percentile_u64(&v, 0.5).unwrap(), 50);
        assert_eq!(percentile_u64(&v, 0.95).unwrap(), 100);
        assert_eq!(percentile_u64(&v, 0.99).unwrap(), 100);
    }

    #[test]
    fn exact_line_recovered() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [5.0, 3.0, 1.0, -1.0];
        let (slope, intercept) = linear_fit(&xs, &ys).unwrap();
        assert_relative_eq!(slope, -2.0);
        assert_relative_eq!(intercept, 5.0);
        assert!(linear_fit(&[1.0, 1.0], &[2.0, 3.0]).is_err());
    }

    #[test]
    fn ks_against_uniform() {
        let d = ks_statistic(&[0.25, 0.75], |x| x);
        assert_relative_eq!(d, 0.25);
    }

    #[test]
    fn normal_helpers() {
        assert_relative_eq!(standard_normal_cdf(0.0), 0.5);
        assert_relative_eq!(standard_normal_quantile(0.975), 1.959964, epsilon = 1e-5);
        assert_relative_eq!(
            standard_normal_cdf(standard_normal_quantile(0.123)),
            0.123,
            epsilon = 1e-9
        );
    }
}
