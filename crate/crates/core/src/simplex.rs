//! Helpers for weight vectors on the unit simplex `{w >= 0, sum(w) = 1}`.

use crate::error::{Error, Result};

/// Largest deviation from the simplex: negative mass or sum defect.
pub fn simplex_violation(w: &[f64]) -> f64 {
    let sum: f64 = w.iter().sum();
    let neg = w.iter().fold(0.0_f64, |acc, &x| acc.max(-x));
    neg.max((sum - 1.0).abs())
}

pub fn is_on_simplex(w: &[f64], tol: f64) -> bool {
    w.iter().all(|x| x.is_finite()) && simplex_violation(w) <= tol
}

pub fn uniform(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

/// Clip negatives to zero and rescale to unit sum.
pub fn renormalize(w: &mut [f64]) {
    for x in w.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        for x in w.iter_mut() {
            *x /= sum;
        }
    }
}

/// Accept a start vector that is on the simplex up to `slack`, repairing small
/// defects; anything further off is rejected.
pub fn accept_start(w: &[f64], slack: f64) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(Error::shape("empty weight vector"));
    }
    if !w.iter().all(|x| x.is_finite()) {
        return Err(Error::invalid("start vector has non-finite entries"));
    }
    let viol = simplex_violation(w);
    if viol > slack {
        return Err(Error::invalid(format!(
            "start vector is off the simplex by {viol:.3e} (limit {slack:.1e})"
        )));
    }
    let mut out = w.to_vec();
    if viol > 0.0 {
        renormalize(&mut out);
    }
    Ok(out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
