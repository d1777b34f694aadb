//! Small statistics helpers: moments and the Kolmogorov-Smirnov statistic.

use alloc::vec::Vec;

use crate::math::abs;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (n-1 denominator); 0 for fewer than two points.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Population variance (n denominator); 0 for empty input.
pub fn population_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n == 0 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64
}

/// Two-sided KS statistic of `samples` against a reference CDF.
///
/// D_n = sup_x |F_n(x) - F(x)| computed at the jump points of the empirical
/// CDF. The input is copied and sorted; NaNs are a caller bug and panic.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    assert!(!samples.is_empty(), "ks_statistic needs samples");
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("NaN in KS input"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let lo = f - i as f64 / n;
        let hi = (i + 1) as f64 / n - f;
        d = d.max(abs(lo)).max(abs(hi));
    }
    d
}
