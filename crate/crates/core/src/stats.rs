//! Order statistics and small regression helpers used throughout the crate.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

fn sorted_copy<T: Scalar>(values: &[T]) -> Vec<T> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    v
}

/// Linear-interpolation quantile of an ascending slice, index `h = (n - 1) p`.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], p: T) -> T {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = T::from_usize_lossy(n - 1) * p;
    let lo = h.floor();
    let lo_idx = lo.to_usize().unwrap_or(0).min(n - 1);
    let hi_idx = (lo_idx + 1).min(n - 1);
    let frac = h - lo;
    let (a, b) = (sorted[lo_idx], sorted[hi_idx]);
    if a == b {
        a
    } else {
        a + (b - a) * frac
    }
}

/// Linear-interpolation quantile of `values` at fraction `p`.
pub fn quantile<T: Scalar>(values: &[T], p: T) -> Result<T> {
    if values.is_empty() {
        return Err(Error::usage("quantile of an empty sequence"));
    }
    if !(p >= T::zero() && p <= T::one()) {
        return Err(Error::usage(format!("quantile fraction {p} outside [0, 1]")));
    }
    Ok(quantile_sorted(&sorted_copy(values), p))
}

pub fn median<T: Scalar>(values: &[T]) -> Result<T> {
    quantile(values, T::lit(0.5))
}

/// Median absolute deviation from the median, without a consistency constant.
pub fn mad<T: Scalar>(values: &[T]) -> Result<T> {
    let m = median(values)?;
    let dev: Vec<T> = values.iter().map(|&v| (v - m).abs()).collect();
    median(&dev)
}

/// Interquartile range `Q(0.75) - Q(0.25)`.
pub fn iqr<T: Scalar>(values: &[T]) -> Result<T> {
    if values.is_empty() {
        return Err(Error::usage("iqr of an empty sequence"));
    }
    let s = sorted_copy(values);
    Ok(quantile_sorted(&s, T::lit(0.75)) - quantile_sorted(&s, T::lit(0.25)))
}

pub fn mean<T: Scalar>(values: &[T]) -> T {
    values.iter().copied().sum::<T>() / T::from_usize_lossy(values.len())
}

/// Least-squares slope of `values` against their sample index.
pub fn ls_slope<T: Scalar>(values: &[T]) -> T {
    let n = values.len();
    if n < 2 {
        return T::zero();
    }
    let t_mean = T::from_usize_lossy(n - 1) / T::lit(2.0);
    let x_mean = mean(values);
    let mut sxy = T::zero();
    let mut sxx = T::zero();
    for (t, &x) in values.iter().enumerate() {
        let dt = T::from_usize_lossy(t) - t_mean;
        sxy = sxy + dt * (x - x_mean);
        sxx = sxx + dt * dt;
    }
    sxy / sxx
}
