//! Summary statistics for simulation output.

use alloc::vec::Vec;

use crate::error::{domain, Result};
use crate::math;

/// Empirical CDF of `samples` at `n_bins` evenly spaced rates between the
/// smallest and largest sample. Each point is `(rate, P(X <= rate))`; the
/// last point is always `(max, 1.0)`.
pub fn rate_cdf(samples: &[f64], n_bins: usize) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(domain("rate_cdf needs at least one sample"));
    }
    if n_bins == 0 {
        return Err(domain("rate_cdf needs at least one bin"));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(domain("rate samples must be finite"));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
    let n = sorted.len() as f64;
    let mut out = Vec::with_capacity(n_bins);
    for i in 0..n_bins {
        let x = if n_bins == 1 || i + 1 == n_bins {
            hi
        } else {
            lo + (hi - lo) * i as f64 / (n_bins - 1) as f64
        };
        let count = sorted.partition_point(|&v| v <= x);
        out.push((x, count as f64 / n));
    }
    Ok(out)
}

/// Fraction of samples `<= x`.
pub fn fraction_at_most(samples: &[f64], x: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|&&v| v <= x).count() as f64 / samples.len() as f64
}

/// Fraction of samples strictly below `x`.
pub fn fraction_below(samples: &[f64], x: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|&&v| v < x).count() as f64 / samples.len() as f64
}

pub fn mean(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().sum::<f64>() / samples.len() as f64
}

/// Standard error of the mean of a correlated series by non-overlapping
/// batch means. Falls back to the i.i.d. formula when there are too few
/// samples for `n_batches` batches of two.
pub fn batch_means_stderr(samples: &[f64], n_batches: usize) -> f64 {
    let n = samples.len();
    if n < 2 {
        return 0.0;
    }
    let (values, count): (Vec<f64>, usize) = if n_batches >= 2 && n >= 2 * n_batches {
        let size = n / n_batches;
        (
            samples[..size * n_batches].chunks(size).map(mean).collect(),
            n_batches,
        )
    } else {
        (samples.to_vec(), n)
    };
    let m = mean(&values);
    let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (count - 1) as f64;
    math::sqrt(var / count as f64)
}

/// Kendall rank correlation (tau-a) between `x` and `y`.
pub fn kendall_tau(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    if n < 2 {
        return 0.0;
    }
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let a = (x[j] - x[i]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            let b = (y[j] - y[i]).partial_cmp(&0.0).map_or(0, |o| o as i64);
            s += a * b;
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn constant_samples_give_a_single_step() {
        let cdf = rate_cdf(&[2.0; 7], 5).unwrap();
        assert!(cdf.iter().all(|&(x, p)| x == 2.0 && p == 1.0));
    }

    #[test]
    fn cdf_is_monotone_and_ends_at_one() {
        let s: Vec<f64> = (0..100).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
        let cdf = rate_cdf(&s, 16).unwrap();
        for w in cdf.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
        assert_eq!(cdf.last().unwrap().1, 1.0);
        assert!(cdf.iter().all(|&(_, p)| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn empty_samples_are_rejected() {
        assert!(rate_cdf(&[], 4).is_err());
    }

    #[test]
    fn fractions() {
        let s = [0.0, 0.0, 0.5, 1.0, 2.0];
        assert_eq!(fraction_at_most(&s, 0.0), 0.4);
        assert_eq!(fraction_below(&s, 1.0), 0.6);
    }

    #[test]
    fn batch_means_of_constant_series_is_zero() {
        assert_eq!(batch_means_stderr(&[1.5; 400], 20), 0.0);
        let alt: Vec<f64> = (0..400).map(|i| (i % 2) as f64).collect();
        assert!(batch_means_stderr(&alt, 20) < 1e-12);
        assert!(batch_means_stderr(&[0.0, 1.0, 0.0], 20) > 0.0);
    }

    #[test]
    fn kendall_of_monotone_sequences() {
        let x = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&x, &[1.0, 5.0, 6.0, 9.0]), 1.0);
        assert_eq!(kendall_tau(&x, &[9.0, 5.0, 2.0, 1.0]), -1.0);
    }
}
