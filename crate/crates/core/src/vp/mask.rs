//! Element-wise masks from information-dropout noise levels.

use crate::error::{Error, Result};
use crate::nn::layer::{Layer, LayerKind};
use crate::nn::model::{info_noise_std, Model};
use crate::scalar::{to_f64, Scalar};
use crate::tensor::Tensor;

/// Number of weights removed for `fraction` of `total` (at least one when `fraction > 0`).
pub fn prune_count(total: usize, fraction: f64) -> usize {
    if fraction <= 0.0 {
        0
    } else {
        ((fraction * total as f64).round() as usize).clamp(1, total)
    }
}

/// Mask removing the lowest-scoring `fraction` of weights.
///
/// Ties go to smaller `|w|`, then to the lower flat index. Each output unit
/// keeps its best-ranked weight even if that leaves fewer weights pruned.
pub fn mask_from_scores<T: Scalar>(weight: &Tensor<T>, scores: &[f64], fraction: f64) -> Result<Tensor<T>> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid(format!("prune fraction {fraction} outside [0, 1)")));
    }
    if scores.len() != weight.len() {
        return Err(Error::shape(format!("{} scores for {} weights", scores.len(), weight.len())));
    }
    let w = weight.data();
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&i, &j| {
        scores[i]
            .total_cmp(&scores[j])
            .then(to_f64(w[i].abs()).total_cmp(&to_f64(w[j].abs())))
            .then(i.cmp(&j))
    });
    let mut mask = vec![T::one(); w.len()];
    for &i in &order[..prune_count(w.len(), fraction)] {
        mask[i] = T::zero();
    }
    let rows = weight.n().max(1);
    let row_len = w.len() / rows;
    let mut rank = vec![0usize; w.len()];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r;
    }
    for row in 0..rows {
        let span = row * row_len..(row + 1) * row_len;
        if row_len > 0 && mask[span.clone()].iter().all(|&m| m == T::zero()) {
            let best = span.max_by_key(|&i| rank[i]).expect("nonempty row");
            mask[best] = T::one();
        }
    }
    Tensor::from_vec(weight.shape(), mask)
}

/// Magnitude scores `|w|`.
pub fn magnitude_scores<T: Scalar>(weight: &Tensor<T>) -> Vec<f64> {
    weight.data().iter().map(|&v| to_f64(v.abs())).collect()
}

/// Importance of each weight of layer `idx`: the batch mean of `1/a` over the
/// input activations the weight touches. Layers not preceded by an
/// information-dropout layer fall back to weight magnitude.
pub fn noise_scores<T: Scalar>(model: &Model<T>, idx: usize, calib: &Tensor<T>) -> Result<Vec<f64>> {
    let layer = model
        .layers
        .get(idx)
        .filter(|l| l.is_compressible())
        .ok_or_else(|| Error::invalid(format!("layer {idx} is not a conv/fc layer")))?;
    if idx == 0 || model.layers[idx - 1].kind != LayerKind::InfoDrop {
        return Ok(magnitude_scores(&layer.weight));
    }
    let (h, _) = model.forward_to(calib, idx - 1)?;
    let a = info_noise_std(&model.layers[idx - 1], &h);
    let inv: Vec<f64> = a.data().iter().map(|&v| 1.0 / to_f64(v).max(crate::vp::loss::STD_FLOOR)).collect();
    Ok(scores_from_inverse_std(layer, &inv, a.shape()))
}

fn scores_from_inverse_std<T: Scalar>(layer: &Layer<T>, inv: &[f64], shape: [usize; 4]) -> Vec<f64> {
    let [n, c, h, w] = shape;
    let [nout, _, kh, kw] = layer.weight.shape();
    let (ho, wo, s) = match layer.kind {
        LayerKind::Conv => ((h - kh) / layer.stride + 1, (w - kw) / layer.stride + 1, layer.stride),
        _ => (1, 1, 1),
    };
    let mut per_input = vec![0.0; c * kh * kw];
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let mut acc = 0.0;
                for img in 0..n {
                    let base = (img * c + ci) * h * w;
                    for oy in 0..ho {
                        for ox in 0..wo {
                            acc += inv[base + (oy * s + i) * w + ox * s + j];
                        }
                    }
                }
                per_input[(ci * kh + i) * kw + j] = acc / (n * ho * wo) as f64;
            }
        }
    }
    (0..nout).flat_map(|_| per_input.iter().copied()).collect()
}

/// Mask for layer `idx` pruning the `fraction` of weights with the noisiest inputs.
pub fn extract_mask<T: Scalar>(model: &Model<T>, idx: usize, calib: &Tensor<T>, fraction: f64) -> Result<Tensor<T>> {
    let scores = noise_scores(model, idx, calib)?;
    mask_from_scores(&model.layers[idx].weight, &scores, fraction)
}

/// Combine a new mask with any existing one and zero the pruned weights.
pub fn apply_layer_mask<T: Scalar>(layer: &mut Layer<T>, mask: Tensor<T>) -> Result<()> {
    mask.expect_shape(layer.weight.shape())?;
    let merged = match layer.mask.take() {
        Some(old) => old.zip_map(&mask, |a, b| a * b)?,
        None => mask,
    };
    layer.mask = Some(merged);
    layer.apply_mask();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_fraction_keeps_everything() {
        let w = Tensor::from_vec([1, 1, 2, 2], vec![0.1f32, -0.2, 0.3, 0.4]).unwrap();
        let m = mask_from_scores(&w, &[1.0, 2.0, 3.0, 4.0], 0.0).unwrap();
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn noisier_weight_goes_first() {
        let w = Tensor::from_vec([1, 2, 1, 1], vec![1.0f32, 1.0]).unwrap();
        let scores = [1.0 / 0.01, 1.0 / 0.79];
        let m = mask_from_scores(&w, &scores, 0.5).unwrap();
        assert_eq!(m.data(), &[1.0, 0.0]);
    }

    #[test]
    fn every_row_keeps_a_weight() {
        let w = Tensor::from_vec([2, 2, 1, 1], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let m = mask_from_scores(&w, &[0.0, 0.1, 5.0, 6.0], 0.75).unwrap();
        assert_eq!(m.data(), &[0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn rejects_full_fraction() {
        let w = Tensor::from_vec([1, 1, 1, 1], vec![1.0f32]).unwrap();
        assert!(mask_from_scores(&w, &[1.0], 1.0).is_err());
    }
}
