//! Elementwise and row-wise differentiable operations.

use super::matrix::{check_finite, Matrix};
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(z: &Matrix) -> Result<Matrix> {
    if !z.is_finite() {
        return Err(Error::NonFinite("softmax_rows input"));
    }
    let mut out = z.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    Ok(out)
}

/// Softmax of one row, in place. Returns `log Σ exp(z)` of the original row.
pub(crate) fn softmax_in_place(row: &mut [f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
    max + sum.ln()
}

/// `max(0, z)` plus the 0/1 mask of active units.
pub fn relu_forward(z: &Matrix) -> (Matrix, Matrix) {
    let mut out = z.clone();
    let mut mask = Matrix::zeros(z.rows(), z.cols());
    for (o, m) in out.data_mut().iter_mut().zip(mask.data_mut()) {
        if *o > 0.0 {
            *m = 1.0;
        } else {
            *o = 0.0;
        }
    }
    (out, mask)
}

pub fn relu_backward(grad: &Matrix, mask: &Matrix) -> Result<Matrix> {
    if grad.shape() != mask.shape() {
        return Err(Error::dim(
            "relu_backward",
            format!("grad {:?} vs mask {:?}", grad.shape(), mask.shape()),
        ));
    }
    let mut out = grad.clone();
    for (g, m) in out.data_mut().iter_mut().zip(mask.data()) {
        *g *= m;
    }
    check_finite(out, "relu_backward")
}
