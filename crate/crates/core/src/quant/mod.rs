//! Symmetric uniform weight quantization.
//!
//! For `b ≥ 2` bits the grid is `{−q, …, q}·Δ` with `q = 2^(b−1) − 1` and
//! `Δ = max|w| / q`; codes are rounded half to even. One bit uses the sign
//! grid `{−Δ, +Δ}` with `Δ = mean|w|`. Scales are stored as `f32`.

pub mod finetune;
pub mod pack;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::model::Model;
use crate::scalar::{cast, to_f64, Scalar};
use crate::tensor::Tensor;

pub use finetune::{finetune_quantized, QuantFinetuneConfig};
pub use pack::{load_quantized, model_bits, save_quantized};

pub const MAX_BITS: u32 = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedTensor {
    pub shape: [usize; 4],
    pub bits: u32,
    pub scale: f32,
    /// Signed integer codes; `±1` on the one-bit sign grid.
    pub codes: Vec<i32>,
}

pub fn quantize_uniform<T: Scalar>(w: &Tensor<T>, bits: u32) -> Result<QuantizedTensor> {
    if bits == 0 || bits > MAX_BITS {
        return Err(Error::invalid(format!("bit width {bits} outside [1, {MAX_BITS}]")));
    }
    if !w.all_finite() {
        return Err(Error::invalid("cannot quantize non-finite weights"));
    }
    let max = to_f64(w.max_abs());
    if max == 0.0 {
        return Ok(QuantizedTensor {
            shape: w.shape(),
            bits,
            scale: 1.0,
            codes: vec![0; w.len()],
        });
    }
    if bits == 1 {
        let mean = w.data().iter().map(|&v| to_f64(v.abs())).sum::<f64>() / w.len() as f64;
        let codes = w.data().iter().map(|&v| if v < T::zero() { -1 } else { 1 }).collect();
        return Ok(QuantizedTensor {
            shape: w.shape(),
            bits,
            scale: mean as f32,
            codes,
        });
    }
    let q = ((1i64 << (bits - 1)) - 1) as f64;
    let scale = (max / q) as f32;
    let d = scale as f64;
    let codes = w
        .data()
        .iter()
        .map(|&v| (to_f64(v).clamp(-max, max) / d).round_ties_even().clamp(-q, q) as i32)
        .collect();
    Ok(QuantizedTensor {
        shape: w.shape(),
        bits,
        scale,
        codes,
    })
}

impl QuantizedTensor {
    pub fn dequantize<T: Scalar>(&self) -> Tensor<T> {
        let d = self.scale as f64;
        let data = self.codes.iter().map(|&c| cast(c as f64 * d)).collect();
        Tensor::from_vec(self.shape, data).expect("codes match shape")
    }
}

/// `b = round(b_min + a·(b_max − b_min))`, clamped to the range.
pub fn quant_action_to_bits(a: f64, b_min: u32, b_max: u32) -> u32 {
    let (lo, hi) = (b_min.min(b_max) as f64, b_max.max(b_min) as f64);
    (lo + a * (hi - lo)).round().clamp(lo, hi) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteMode {
    /// Gradient passes only where the argument is strictly positive.
    PositiveGate,
    /// Gradient passes everywhere.
    PassThrough,
}

pub fn ste_backward<T: Scalar>(grad_out: &[T], argument: &[T], mode: SteMode) -> Result<Vec<T>> {
    if grad_out.len() != argument.len() {
        return Err(Error::shape(format!("STE: {} gradients for {} arguments", grad_out.len(), argument.len())));
    }
    Ok(match mode {
        SteMode::PassThrough => grad_out.to_vec(),
        SteMode::PositiveGate => grad_out
            .iter()
            .zip(argument)
            .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
            .collect(),
    })
}

/// Bit widths for each conv/fc layer, in model order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantSpec {
    pub bits: Vec<u32>,
}

/// Replace every conv/fc weight by its dequantized value (masks re-applied).
pub fn quantize_model<T: Scalar>(model: &Model<T>, spec: &QuantSpec) -> Result<Model<T>> {
    let idx = model.compressible_layers();
    if spec.bits.len() != idx.len() {
        return Err(Error::invalid(format!("spec has {} bit widths for {} layers", spec.bits.len(), idx.len())));
    }
    let mut out = model.clone();
    for (&i, &b) in idx.iter().zip(&spec.bits) {
        quantize_layer(&mut out, i, b)?;
    }
    Ok(out)
}

/// Quantize one layer in place.
pub fn quantize_layer<T: Scalar>(model: &mut Model<T>, idx: usize, bits: u32) -> Result<QuantizedTensor> {
    let layer = &mut model.layers[idx];
    let q = quantize_uniform(&layer.weight, bits).map_err(|e| e.at_layer(idx))?;
    layer.weight = q.dequantize();
    layer.apply_mask();
    Ok(q)
}
