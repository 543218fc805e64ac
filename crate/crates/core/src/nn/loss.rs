use crate::error::{Error, Result};
use crate::scalar::{cast, to_f64, Scalar};
use crate::tensor::Tensor;

/// Mean softmax cross-entropy over the batch and its gradient w.r.t. the logits.
///
/// `logits` has shape `(n, classes, 1, 1)` (any trailing extent is flattened).
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let n = logits.n();
    let k = logits.item_len();
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {bad} outside [0, {k})")));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0f64;
    let inv_n = 1.0 / n.max(1) as f64;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * k..(i + 1) * k];
        let max = row.iter().map(|&v| to_f64(v)).fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (to_f64(v) - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() + max - to_f64(row[label]);
        let g = &mut grad.data_mut()[i * k..(i + 1) * k];
        for (j, gj) in g.iter_mut().enumerate() {
            let p = exps[j] / z;
            let target = if j == label { 1.0 } else { 0.0 };
            *gj = cast((p - target) * inv_n);
        }
    }
    Ok((total * inv_n, grad))
}

/// Index of the largest logit per item.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.item_len();
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
