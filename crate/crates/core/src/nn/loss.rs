//! Plain-number versions of the loss primitives, used outside the tape.

use alloc::vec::Vec;

use crate::error::{Error, Result};

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + libm::log(xs.iter().map(|x| libm::exp(x - max)).sum::<f64>())
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(xs);
    xs.iter().map(|x| libm::exp(x - lse)).collect()
}

/// `-log softmax(logits)[target]` and its gradient with respect to the logits.
pub fn softmax_xent(logits: &[f64], target: usize) -> Result<(f64, Vec<f64>)> {
    if target >= logits.len() {
        return Err(Error::IndexOutOfRange {
            index: target,
            len: logits.len(),
        });
    }
    let lse = log_sum_exp(logits);
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    Ok((lse - logits[target], grad))
}

/// `Σ p ln(p / q)` for strictly positive distributions summing to one
/// (within 1e-6).
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    let valid = |d: &[f64]| {
        !d.is_empty()
            && d.iter().all(|&x| x > 0.0 && x.is_finite())
            && (d.iter().sum::<f64>() - 1.0).abs() <= 1e-6
    };
    if p.len() != q.len() || !valid(p) || !valid(q) {
        return Err(Error::NotADistribution);
    }
    Ok(p.iter().zip(q).map(|(&a, &b)| a * libm::log(a / b)).sum())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    const EPS: f64 = 1e-12;
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = libm::sqrt(a.iter().map(|x| x * x).sum::<f64>()).max(EPS);
    let nb = libm::sqrt(b.iter().map(|x| x * x).sum::<f64>()).max(EPS);
    dot / (na * nb)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}
