//! Forward kernels shared by the tape and by direct callers.

use super::matrix::{Mask, Matrix};
use crate::error::{Error, Result};

/// Row-wise softmax over the unmasked entries of each row. Masked entries are
/// exactly zero in the output.
pub fn masked_softmax_rows(logits: &Matrix, mask: &Mask) -> Result<Matrix> {
    if logits.shape() != mask.shape() {
        return Err(Error::Shape {
            op: "masked_softmax_rows",
            left: logits.shape(),
            right: mask.shape(),
        });
    }
    let mut out = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let keep = mask.row(r);
        let max = row
            .iter()
            .zip(keep)
            .filter(|(_, &k)| k)
            .map(|(&v, _)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateAttention { row: r });
        }
        let dst = out.row_mut(r);
        let mut total = 0.0;
        for ((d, &v), &k) in dst.iter_mut().zip(row).zip(keep) {
            if k {
                *d = (v - max).exp();
                total += *d;
            }
        }
        let inv = 1.0 / total;
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    Ok(out)
}

/// Unmasked row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mask = Mask::new(logits.rows(), logits.cols(), true);
    masked_softmax_rows(logits, &mask).expect("full mask is never degenerate")
}

/// `gamma ⊙ (x − mean) / sqrt(var + eps) + beta` for a single vector.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let (xhat, _) = normalize(x, eps);
    xhat.iter()
        .zip(gamma)
        .zip(beta)
        .map(|((h, g), b)| g * h + b)
        .collect()
}

/// Returns the standardized vector and `1 / sqrt(var + eps)`.
pub(crate) fn normalize(x: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let d = x.len() as f64;
    let mean = x.iter().sum::<f64>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
    let inv_std = 1.0 / (var + eps).sqrt();
    (x.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}
