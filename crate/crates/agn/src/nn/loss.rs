//! Softmax and cross-entropy helpers on logit matrices (B, classes).

use ndarray::Array2;

use crate::scalar::Scalar;

/// Row-wise softmax with max-shift stabilization.
pub fn softmax_rows<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    out
}

pub fn log_softmax_rows<F: Scalar>(logits: &Array2<F>) -> Array2<F> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
        let logsum = row
            .iter()
            .fold(F::zero(), |acc, &v| acc + (v - max).exp())
            .ln()
            + max;
        for v in row.iter_mut() {
            *v = *v - logsum;
        }
    }
    out
}

/// Mean cross-entropy over the batch.
pub fn cross_entropy_loss<F: Scalar>(logits: &Array2<F>, labels: &[usize]) -> F {
    let logp = log_softmax_rows(logits);
    let mut total = F::zero();
    for (i, &l) in labels.iter().enumerate() {
        total = total - logp[[i, l]];
    }
    total / F::from_f64(labels.len() as f64)
}

/// Gradient of mean cross-entropy w.r.t. logits: (softmax - onehot)/B.
pub fn cross_entropy_grad<F: Scalar>(logits: &Array2<F>, labels: &[usize]) -> Array2<F> {
    let mut g = softmax_rows(logits);
    let inv_b = F::one() / F::from_f64(labels.len() as f64);
    for (i, &l) in labels.iter().enumerate() {
        g[[i, l]] = g[[i, l]] - F::one();
    }
    g.mapv_inplace(|v| v * inv_b);
    g
}
