//! Percentile and payload-variance helpers shared by baseline and features.

use crate::error::{Error, Result};
use crate::frame::CanFrame;

/// Nearest-rank percentile: the element at index `ceil(p/100 * n) - 1` of the
/// sorted values, clamped to the valid range.
///
/// `p = 0` yields the minimum and `p = 100` the maximum.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Argument("percentile of an empty list".to_string()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::Argument(format!("percentile rank {p} outside [0, 100]")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::Argument("percentile input contains NaN".to_string()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank_index(sorted.len(), p)])
}

/// Zero-based index selected by the nearest-rank rule for `n` sorted values.
pub fn nearest_rank_index(n: usize, p: f64) -> usize {
    debug_assert!(n > 0);
    let rank = (p * n as f64 / 100.0).ceil() as usize;
    rank.clamp(1, n) - 1
}

/// Population variance of every payload byte (all eight per frame) of `frames`.
///
/// Computed from exact integer sums, so identical inputs give bit-identical
/// results regardless of frame order.
pub fn payload_variance<'a, I>(frames: I) -> f64
where
    I: IntoIterator<Item = &'a CanFrame>,
{
    let (mut n, mut sum, mut sum_sq) = (0u128, 0u128, 0u128);
    for frame in frames {
        for &b in &frame.payload {
            let b = u128::from(b);
            n += 1;
            sum += b;
            sum_sq += b * b;
        }
    }
    if n == 0 {
        return 0.0;
    }
    // Var = (n * sum_sq - sum^2) / n^2, numerator is non-negative.
    let numerator = n * sum_sq - sum * sum;
    numerator as f64 / (n * n) as f64
}
