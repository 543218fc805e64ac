//! Structural surgery: removing input channels of a layer and the matching
//! outputs upstream.

use crate::error::{Error, Result};
use crate::nn::layer::LayerKind;
use crate::nn::model::Model;
use crate::scalar::{cast, Scalar};
use crate::tensor::Tensor;

/// Keep only `kept` input channels of layer `idx`.
///
/// `new_weight`, if given, replaces the sliced weights (`N × |kept|·kh·kw`,
/// e.g. from a least-squares refit); an existing mask is sliced and
/// re-applied. Information-dropout heads between the layer and its producer
/// are sliced on both sides, and the producer loses the same output channels.
/// With no producer the model's input channel selection is narrowed instead.
pub fn apply_channel_prune<T: Scalar>(model: &mut Model<T>, idx: usize, kept: &[usize], new_weight: Option<&[f64]>) -> Result<()> {
    let layer = model
        .layers
        .get(idx)
        .filter(|l| l.is_compressible())
        .ok_or_else(|| Error::invalid(format!("layer {idx} is not a conv/fc layer")))?;
    let c = layer.in_channels;
    if kept.is_empty() || kept.windows(2).any(|w| w[0] >= w[1]) || kept.iter().any(|&i| i >= c) {
        return Err(Error::invalid(format!("kept channels must be a strictly increasing nonempty subset of 0..{c}")).at_layer(idx));
    }
    if kept.len() == c {
        if let Some(w) = new_weight {
            set_weight(model, idx, w)?;
        }
        return Ok(());
    }
    let layer = &mut model.layers[idx];
    layer.weight = layer.weight.select_channels(kept);
    layer.mask = layer.mask.as_ref().map(|m| m.select_channels(kept));
    layer.in_channels = kept.len();
    if let Some(w) = new_weight {
        set_weight(model, idx, w)?;
    }
    let mut j = idx;
    while j > 0 {
        j -= 1;
        let l = &mut model.layers[j];
        match l.kind {
            LayerKind::InfoDrop => {
                l.weight = l.weight.gather_items(kept).select_channels(kept);
                l.bias = kept.iter().map(|&i| l.bias[i]).collect();
                l.in_channels = kept.len();
                l.out_channels = kept.len();
            }
            _ => {
                l.weight = l.weight.gather_items(kept);
                l.bias = kept.iter().map(|&i| l.bias[i]).collect();
                l.mask = l.mask.as_ref().map(|m| m.gather_items(kept));
                l.out_channels = kept.len();
                return model.validate();
            }
        }
    }
    model.input_select = kept.iter().map(|&i| model.input_select[i]).collect();
    model.validate()
}

fn set_weight<T: Scalar>(model: &mut Model<T>, idx: usize, w: &[f64]) -> Result<()> {
    let layer = &mut model.layers[idx];
    if w.len() != layer.weight.len() {
        return Err(Error::shape(format!("replacement weight has {} values, layer needs {}", w.len(), layer.weight.len())).at_layer(idx));
    }
    layer.weight = Tensor::from_vec(layer.weight.shape(), w.iter().map(|&v| cast(v)).collect())?;
    layer.apply_mask();
    Ok(())
}
