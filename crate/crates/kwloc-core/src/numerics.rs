//! Shared numeric kernels. The tape ops and the standalone model helpers both
//! call these so taped and untaped paths produce bit-identical values.

use crate::scalar::Scalar;

/// Probability clamp applied before logs in the cross-entropy terms.
pub const PROB_EPS: f64 = 1e-7;

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    S::one() / (S::one() + (-x).exp())
}

#[inline]
pub fn sigmoid_grad_from_output<S: Scalar>(y: S) -> S {
    y * (S::one() - y)
}

/// Max-subtracted softmax. The normalizer is accumulated in f64 so the output
/// sums to 1 within one f32 ulp even for long sequences.
pub fn softmax_stable<S: Scalar>(logits: &[S]) -> Vec<S> {
    debug_assert!(!logits.is_empty());
    let max = logits.iter().cloned().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = logits.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().map(|v| v.as_f64()).sum();
    exps.iter().map(|v| S::from_f64(v.as_f64() / z)).collect()
}

/// Log-mean-exp with sharpness r: (1/r)·log[(1/n)·Σ exp(r·x_i)], computed via
/// max subtraction with an f64 accumulator.
pub fn log_mean_exp<S: Scalar>(values: &[S], sharpness: S) -> S {
    debug_assert!(!values.is_empty());
    debug_assert!(sharpness > S::zero());
    let r = sharpness.as_f64();
    let max = values.iter().cloned().fold(S::neg_infinity(), S::max);
    let m = max.as_f64();
    let z: f64 = values
        .iter()
        .map(|&v| (r * (v.as_f64() - m)).exp())
        .sum();
    S::from_f64(m + (z / values.len() as f64).ln() / r)
}

/// Weights of each element in the log-mean-exp gradient: softmax of r·x.
pub fn sharpened_softmax_f64<S: Scalar>(values: &[S], sharpness: S) -> Vec<f64> {
    let r = sharpness.as_f64();
    let m = values
        .iter()
        .map(|v| v.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|&v| (r * (v.as_f64() - m)).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[inline]
pub fn clamp_prob<S: Scalar>(p: S) -> S {
    let lo = S::from_f64(PROB_EPS);
    let hi = S::one() - lo;
    p.max(lo).min(hi)
}

/// −[y·ln p + (1−y)·ln(1−p)] with p clamped away from {0, 1}.
#[inline]
pub fn bce_term<S: Scalar>(p: S, y: S) -> S {
    let p = clamp_prob(p);
    -(y * p.ln() + (S::one() - y) * (S::one() - p).ln())
}

/// Index of the first maximal element.
pub fn argmax_first<S: Scalar>(values: &[S]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
