//! Log-domain primitives shared across the crate.
//!
//! Probability mass is carried as log-densities everywhere; conversions to
//! linear space happen only inside max-shifted sums, so inputs on the order
//! of +-1e6 stay finite.

use ndarray::ArrayView1;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `ln(sum_i exp(v_i))`, max-shifted. Errors on an empty slice.
///
/// A singleton returns its value exactly; all `-inf` inputs return `-inf`.
pub fn logsumexp<S: Scalar>(values: &[S]) -> Result<S> {
    if values.is_empty() {
        return Err(Error::EmptyInput { what: "logsumexp" });
    }
    let max = values.iter().cloned().fold(S::neg_infinity(), S::max);
    if !max.is_finite() {
        // All -inf (log of zero mass) stays -inf; a NaN or +inf propagates.
        return Ok(max);
    }
    if values.len() == 1 {
        return Ok(values[0]);
    }
    let sum: S = values.iter().map(|&v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

/// `logsumexp` over an ndarray view.
pub fn logsumexp_view<S: Scalar>(values: &ArrayView1<S>) -> Result<S> {
    match values.as_slice() {
        Some(s) => logsumexp(s),
        None => {
            let v: Vec<S> = values.iter().cloned().collect();
            logsumexp(&v)
        }
    }
}

/// Two-term logsumexp, handy for fusing a pair of log-densities.
pub fn logsumexp2<S: Scalar>(a: S, b: S) -> S {
    let max = a.max(b);
    if !max.is_finite() {
        return max;
    }
    max + ((a - max).exp() + (b - max).exp()).ln()
}

/// Numerically stable `ln(1 + exp(x))`.
pub fn softplus<S: Scalar>(x: S) -> S {
    let zero = S::zero();
    x.max(zero) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<S: Scalar>(x: S) -> S {
    let one = S::one();
    if x >= S::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

pub fn mean<S: Scalar>(values: &[S]) -> S {
    if values.is_empty() {
        return S::nan();
    }
    values.iter().cloned().sum::<S>() / S::of_usize(values.len())
}

/// Unbiased sample variance (`n - 1` denominator). NaN below two samples.
pub fn sample_variance<S: Scalar>(values: &[S]) -> S {
    let n = values.len();
    if n < 2 {
        return S::nan();
    }
    let m = mean(values);
    let ss: S = values.iter().map(|&v| (v - m) * (v - m)).sum();
    ss / S::of_usize(n - 1)
}

/// Standard error of the mean for an MC estimate.
pub fn standard_error<S: Scalar>(values: &[S]) -> S {
    let n = values.len();
    if n < 2 {
        return S::nan();
    }
    (sample_variance(values) / S::of_usize(n)).sqrt()
}
