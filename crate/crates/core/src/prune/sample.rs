//! Building LASSO problems from sampled layer inputs and outputs.

use log::warn;
use rand::seq::index;
use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::nn::layer::LayerKind;
use crate::nn::model::Model;
use crate::prune::lasso::LassoProblem;
use crate::scalar::{to_f64, Scalar};
use crate::tensor::Tensor;

/// Forward passes are chunked to bound memory.
const CHUNK: usize = 250;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleSpec {
    pub images: usize,
    /// Spatial positions per image for conv layers (fc layers use one).
    pub positions: usize,
}

/// Sample `(X, Y)` for layer `idx` of `model` over `images`.
///
/// Returns the problem and a list of warnings (e.g. sampling with replacement).
pub fn sample_patches<T: Scalar>(
    model: &Model<T>,
    idx: usize,
    images: &Tensor<T>,
    spec: SampleSpec,
    keep_k: usize,
    rng: &mut dyn RngCore,
) -> Result<(LassoProblem, Vec<String>)> {
    let layer = model
        .layers
        .get(idx)
        .filter(|l| l.is_compressible())
        .ok_or_else(|| Error::invalid(format!("layer {idx} is not a conv/fc layer")))?;
    let positions = if layer.kind == LayerKind::Fc { 1 } else { spec.positions };
    if spec.images == 0 || positions == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    if images.n() == 0 {
        return Err(Error::Data("no images to sample from".into()));
    }
    let mut warnings = Vec::new();
    let chosen: Vec<usize> = if images.n() >= spec.images {
        let mut v = index::sample(rng, images.n(), spec.images).into_vec();
        v.sort_unstable();
        v
    } else {
        let msg = format!("layer {}: {} images requested, {} available; sampling with replacement", layer.name, spec.images, images.n());
        warn!("{msg}");
        warnings.push(msg);
        (0..spec.images).map(|_| rng.random_range(0..images.n())).collect()
    };
    let samples = spec.images * positions;
    if samples < 10 * layer.in_channels {
        let msg = format!("layer {}: {samples} samples for {} channels", layer.name, layer.in_channels);
        warn!("{msg}");
        warnings.push(msg);
    }
    let [nout, c, kh, kw] = layer.weight.shape();
    let k = kh * kw;
    let f = c * k;
    let mut x = Vec::with_capacity(samples * f);
    let mut y = Vec::with_capacity(samples * nout);
    for batch in chosen.chunks(CHUNK) {
        let (input, pre) = model.forward_to(&images.gather_items(batch), idx)?;
        let [_, _, h, w] = input.shape();
        let [_, _, ho, wo] = pre.shape();
        for img in 0..batch.len() {
            for _ in 0..positions {
                let (oy, ox) = if layer.kind == LayerKind::Fc { (0, 0) } else { (rng.random_range(0..ho), rng.random_range(0..wo)) };
                for ci in 0..c {
                    for i in 0..kh {
                        for j in 0..kw {
                            let (sy, sx) = if layer.kind == LayerKind::Fc { (i, j) } else { (oy * layer.stride + i, ox * layer.stride + j) };
                            x.push(to_f64(input.data()[((img * c + ci) * h + sy) * w + sx]));
                        }
                    }
                }
                for o in 0..nout {
                    y.push(to_f64(pre.get(img, o, oy, ox)) - to_f64(layer.bias[o]));
                }
            }
        }
    }
    let problem = LassoProblem {
        samples,
        channels: c,
        k,
        outputs: nout,
        x,
        y,
        weight: layer.weight.data().iter().map(|&v| to_f64(v)).collect(),
        keep_k,
    };
    problem.validate()?;
    Ok((problem, warnings))
}
