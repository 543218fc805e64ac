//! Packed quantized checkpoints.
//!
//! The blob is one little-endian bitstream (least significant bit first).
//! Each quantized layer contributes its `f32` scale (32 bits) followed by
//! `count` codes of `b` bits each in two's complement; one-bit layers store
//! 1 for `+Δ` and 0 for `−Δ`. Blob size is `ceil(Σ(count·b + 32) / 8)` bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::Activation;
use crate::nn::layer::{Layer, LayerKind};
use crate::nn::model::Model;
use crate::quant::{quantize_uniform, QuantSpec, QuantizedTensor};
use crate::scalar::{cast, to_f64, Scalar};
use crate::tensor::Tensor;

pub const QUANT_CHECKPOINT_VERSION: u32 = 1;
pub const SCALE_BITS: u64 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantLayerEntry {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub stride: usize,
    pub shape: [usize; 4],
    pub bias: Vec<f32>,
    /// Present for conv/fc layers.
    pub bits: Option<u32>,
    pub scale: Option<f32>,
    /// Bit offset of the codes (after the scale) in the blob.
    pub code_offset: Option<u64>,
    pub count: u64,
    /// Full-precision values for layers that are not quantized.
    pub values: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantManifest {
    pub version: u32,
    pub model: String,
    pub input_shape: [usize; 3],
    pub input_select: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Option<Activation>,
    pub blob: String,
    pub total_bits: u64,
    pub layers: Vec<QuantLayerEntry>,
}

/// `Σ (weights·b + 32)` over conv/fc layers.
pub fn model_bits<T: Scalar>(model: &Model<T>, spec: &QuantSpec) -> u64 {
    model
        .compressible_layers()
        .iter()
        .zip(&spec.bits)
        .map(|(&i, &b)| model.layers[i].weight.len() as u64 * b as u64 + SCALE_BITS)
        .sum()
}

#[derive(Default)]
struct BitWriter {
    bytes: Vec<u8>,
    len: u64,
}

impl BitWriter {
    fn push(&mut self, value: u64, bits: u32) {
        for k in 0..bits {
            if self.len.is_multiple_of(8) {
                self.bytes.push(0);
            }
            if (value >> k) & 1 == 1 {
                *self.bytes.last_mut().expect("pushed above") |= 1 << (self.len % 8);
            }
            self.len += 1;
        }
    }
}

fn read_bits(bytes: &[u8], at: u64, bits: u32) -> u64 {
    let mut v = 0u64;
    for k in 0..bits as u64 {
        let p = at + k;
        if (bytes[(p / 8) as usize] >> (p % 8)) & 1 == 1 {
            v |= 1 << k;
        }
    }
    v
}

fn code_to_bits(code: i32, bits: u32) -> u64 {
    if bits == 1 {
        (code > 0) as u64
    } else {
        (code as i64 as u64) & ((1u64 << bits) - 1)
    }
}

fn bits_to_code(raw: u64, bits: u32) -> i32 {
    if bits == 1 {
        if raw == 1 { 1 } else { -1 }
    } else {
        let sign = 1u64 << (bits - 1);
        ((raw ^ sign) as i64 - sign as i64) as i32
    }
}

/// Encode a model with per-layer bit widths into a manifest and blob.
pub fn encode_quantized<T: Scalar>(model: &Model<T>, spec: &QuantSpec, blob_name: &str) -> Result<(QuantManifest, Vec<u8>)> {
    let idx = model.compressible_layers();
    if spec.bits.len() != idx.len() {
        return Err(Error::invalid(format!("spec has {} bit widths for {} layers", spec.bits.len(), idx.len())));
    }
    let mut w = BitWriter::default();
    let mut bits_iter = spec.bits.iter();
    let mut layers = Vec::new();
    for (i, l) in model.layers.iter().enumerate() {
        let bias = l.bias.iter().map(|&b| to_f64(b) as f32).collect();
        let mut entry = QuantLayerEntry {
            name: l.name.clone(),
            kind: l.kind,
            in_channels: l.in_channels,
            out_channels: l.out_channels,
            kernel: [l.kernel.0, l.kernel.1],
            stride: l.stride,
            shape: l.weight.shape(),
            bias,
            bits: None,
            scale: None,
            code_offset: None,
            count: l.weight.len() as u64,
            values: None,
        };
        if l.is_compressible() {
            let b = *bits_iter.next().expect("length checked");
            let q = quantize_uniform(&l.weight, b).map_err(|e| e.at_layer(i))?;
            w.push(q.scale.to_bits() as u64, SCALE_BITS as u32);
            entry.code_offset = Some(w.len);
            for &c in &q.codes {
                w.push(code_to_bits(c, b), b);
            }
            entry.bits = Some(b);
            entry.scale = Some(q.scale);
        } else {
            entry.values = Some(l.weight.data().iter().map(|&v| to_f64(v) as f32).collect());
        }
        layers.push(entry);
    }
    let manifest = QuantManifest {
        version: QUANT_CHECKPOINT_VERSION,
        model: model.name.clone(),
        input_shape: model.input_shape,
        input_select: model.input_select.clone(),
        hidden_activation: model.hidden_activation,
        output_activation: model.output_activation,
        blob: blob_name.to_string(),
        total_bits: w.len,
        layers,
    };
    Ok((manifest, w.bytes))
}

/// Decode into the dequantized model and the per-layer quantized tensors.
pub fn decode_quantized<T: Scalar>(m: &QuantManifest, blob: &[u8], path: &Path) -> Result<(Model<T>, Vec<QuantizedTensor>)> {
    if m.version != QUANT_CHECKPOINT_VERSION {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("unsupported quantized checkpoint version {}", m.version),
        });
    }
    if (blob.len() as u64) * 8 < m.total_bits {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: blob.len() as u64,
            message: format!("blob holds {} bits, manifest needs {}", blob.len() * 8, m.total_bits),
        });
    }
    let mut layers = Vec::new();
    let mut tensors = Vec::new();
    for e in &m.layers {
        let weight = match (e.bits, e.scale, e.code_offset, &e.values) {
            (Some(b), Some(scale), Some(off), _) => {
                if off + e.count * b as u64 > m.total_bits {
                    return Err(Error::Format {
                        path: path.to_path_buf(),
                        offset: off / 8,
                        message: format!("codes of layer {} run past the blob", e.name),
                    });
                }
                let codes = (0..e.count).map(|k| bits_to_code(read_bits(blob, off + k * b as u64, b), b)).collect();
                let q = QuantizedTensor { shape: e.shape, bits: b, scale, codes };
                let w = q.dequantize();
                tensors.push(q);
                w
            }
            (_, _, _, Some(values)) => Tensor::from_vec(e.shape, values.iter().map(|&v| cast(v as f64)).collect())?,
            _ => return Err(Error::Format {
                path: path.to_path_buf(),
                offset: 0,
                message: format!("layer {} has neither codes nor values", e.name),
            }),
        };
        layers.push(Layer {
            name: e.name.clone(),
            kind: e.kind,
            in_channels: e.in_channels,
            out_channels: e.out_channels,
            kernel: (e.kernel[0], e.kernel[1]),
            stride: e.stride,
            weight,
            bias: e.bias.iter().map(|&b| cast(b as f64)).collect(),
            mask: None,
        });
    }
    let model = Model {
        name: m.model.clone(),
        input_shape: m.input_shape,
        input_select: m.input_select.clone(),
        hidden_activation: m.hidden_activation,
        output_activation: m.output_activation,
        layers,
    };
    model.validate()?;
    Ok((model, tensors))
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    let s = stem.to_string_lossy();
    (PathBuf::from(format!("{s}.json")), PathBuf::from(format!("{s}.qbin")))
}

/// Write `<stem>.json` and `<stem>.qbin`; returns the blob size in bytes.
pub fn save_quantized<T: Scalar>(model: &Model<T>, spec: &QuantSpec, stem: &Path) -> Result<u64> {
    let (json, bin) = paths(stem);
    let name = bin.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let (manifest, blob) = encode_quantized(model, spec, &name)?;
    fs::write(&json, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&json, e))?;
    fs::write(&bin, &blob).map_err(|e| Error::io(&bin, e))?;
    Ok(blob.len() as u64)
}

pub fn load_quantized<T: Scalar>(stem: &Path) -> Result<(Model<T>, Vec<QuantizedTensor>)> {
    let (json, _) = paths(stem);
    let text = fs::read(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: QuantManifest = serde_json::from_slice(&text)?;
    let bin = json.parent().unwrap_or(Path::new(".")).join(&manifest.blob);
    let blob = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    decode_quantized(&manifest, &blob, &bin)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twos_complement_round_trip() {
        for bits in 2..=8 {
            let q = (1i32 << (bits - 1)) - 1;
            for c in -q..=q {
                assert_eq!(bits_to_code(code_to_bits(c, bits), bits), c);
            }
        }
        assert_eq!(bits_to_code(code_to_bits(-1, 1), 1), -1);
        assert_eq!(bits_to_code(code_to_bits(1, 1), 1), 1);
    }

    #[test]
    fn bit_writer_is_lsb_first() {
        let mut w = BitWriter::default();
        w.push(0b101, 3);
        w.push(0b11111, 5);
        w.push(1, 1);
        assert_eq!(w.bytes, vec![0b1111_1101, 1]);
        assert_eq!(read_bits(&w.bytes, 3, 5), 0b11111);
    }
}
