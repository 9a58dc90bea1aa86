//! Small numeric helpers shared across modules.

/// Tolerance for "sums to one" checks on probability vectors.
pub const PROB_TOL: f64 = 1e-9;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased (n - 1) sample variance. `NaN` for fewer than two samples.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1) as f64
}

/// Mean and standard error of the mean; the error is `+inf` for a single sample.
pub fn mean_and_std_err(xs: &[f64]) -> (f64, f64) {
    let m = mean(xs);
    if xs.len() < 2 {
        return (m, f64::INFINITY);
    }
    (m, (sample_variance(xs) / xs.len() as f64).sqrt())
}

/// Inverse-CDF draw from a discrete distribution using one uniform `u` in [0, 1).
///
/// Falls back to the last index with positive mass when rounding leaves the
/// cumulative sum just below `u`.
pub fn sample_index(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

pub fn check_distribution(probs: &[f64], what: &str) -> crate::Result<()> {
    if probs.is_empty() {
        return Err(crate::Error::InvalidDistribution(format!("{what}: empty")));
    }
    let mut sum = 0.0;
    for &p in probs {
        if !p.is_finite() || p < 0.0 {
            return Err(crate::Error::InvalidDistribution(format!(
                "{what}: entry {p} is negative or non-finite"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > PROB_TOL {
        return Err(crate::Error::InvalidDistribution(format!(
            "{what}: sums to {sum}"
        )));
    }
    Ok(())
}
