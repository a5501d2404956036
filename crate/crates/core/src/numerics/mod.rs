//! Dense primitives, activations, losses, the AdamW optimizer and a
//! central-difference gradient checker.

mod adamw;
mod gradcheck;
mod matrix;

pub use adamw::{adamw_step, AdamWConfig, OptimizerState};
pub use gradcheck::{finite_diff_check, DEFAULT_FD_EPS};
pub use matrix::{axpy, dot, DenseMatrix};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp applied to a probability before taking its log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Storage precision for trained parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    /// Parameters are rounded to `f32` after every optimizer step.
    F32,
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::invalid("softmax of an empty vector"));
    }
    let mut out = v.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = 1.0 / sum;
    v.iter_mut().for_each(|x| *x *= inv);
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `-ln p[y]` with `p[y]` clamped at [`LOG_FLOOR`].
pub fn cross_entropy(p: &[f64], y: usize) -> Result<f64> {
    cross_entropy_with_floor(p, y, LOG_FLOOR)
}

pub fn cross_entropy_with_floor(p: &[f64], y: usize, floor: f64) -> Result<f64> {
    let py = *p
        .get(y)
        .ok_or_else(|| Error::invalid(format!("class {y} out of range for {} classes", p.len())))?;
    Ok(-(py.max(floor)).ln())
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}
