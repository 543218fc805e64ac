//! Checkpoint format: a JSON manifest plus a blob of little-endian `f32`
//! values, one run per tensor, concatenated in manifest order. Element masks
//! go to a second blob as packed little-endian bit arrays (bit `i` of byte `j`
//! is element `8j + i`).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::Activation;
use crate::nn::layer::{Layer, LayerKind};
use crate::nn::model::Model;
use crate::scalar::{cast, to_f64, Scalar};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the value blob.
    pub offset: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskEntry {
    /// Byte offset into the mask blob.
    pub offset: u64,
    pub bits: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub stride: usize,
    pub weight: TensorEntry,
    pub bias: TensorEntry,
    pub mask: Option<MaskEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub model: String,
    pub input_shape: [usize; 3],
    pub input_select: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Option<Activation>,
    pub blob: String,
    pub mask_blob: Option<String>,
    pub layers: Vec<LayerEntry>,
}

/// Paths `<stem>.json`, `<stem>.bin`, `<stem>.mask.bin`.
pub fn checkpoint_paths(stem: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let s = stem.to_string_lossy();
    (
        PathBuf::from(format!("{s}.json")),
        PathBuf::from(format!("{s}.bin")),
        PathBuf::from(format!("{s}.mask.bin")),
    )
}

fn push_values<T: Scalar>(blob: &mut Vec<u8>, name: &str, shape: Vec<usize>, values: &[T]) -> TensorEntry {
    let offset = blob.len() as u64;
    for &v in values {
        blob.extend_from_slice(&(to_f64(v) as f32).to_le_bytes());
    }
    TensorEntry {
        name: name.to_string(),
        shape,
        offset,
        count: values.len() as u64,
    }
}

/// Pack a 0/1 mask, least-significant bit first.
pub fn pack_bits(bits: impl Iterator<Item = bool>) -> Vec<u8> {
    let mut out = Vec::new();
    for (i, b) in bits.enumerate() {
        if i % 8 == 0 {
            out.push(0u8);
        }
        if b {
            *out.last_mut().expect("pushed above") |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], count: usize) -> Vec<bool> {
    (0..count).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

/// Serialize a model into manifest + blobs (in memory).
pub fn encode<T: Scalar>(model: &Model<T>, blob_name: &str, mask_name: &str) -> (Manifest, Vec<u8>, Vec<u8>) {
    let mut blob = Vec::new();
    let mut masks = Vec::new();
    let layers = model
        .layers
        .iter()
        .map(|l| {
            let weight = push_values(&mut blob, "weight", l.weight.shape().to_vec(), l.weight.data());
            let bias = push_values(&mut blob, "bias", vec![l.bias.len()], &l.bias);
            let mask = l.mask.as_ref().map(|m| {
                let offset = masks.len() as u64;
                masks.extend(pack_bits(m.data().iter().map(|&v| v != T::zero())));
                MaskEntry {
                    offset,
                    bits: m.len() as u64,
                }
            });
            LayerEntry {
                name: l.name.clone(),
                kind: l.kind,
                in_channels: l.in_channels,
                out_channels: l.out_channels,
                kernel: [l.kernel.0, l.kernel.1],
                stride: l.stride,
                weight,
                bias,
                mask,
            }
        })
        .collect::<Vec<_>>();
    let has_masks = layers.iter().any(|l| l.mask.is_some());
    let manifest = Manifest {
        version: CHECKPOINT_VERSION,
        model: model.name.clone(),
        input_shape: model.input_shape,
        input_select: model.input_select.clone(),
        hidden_activation: model.hidden_activation,
        output_activation: model.output_activation,
        blob: blob_name.to_string(),
        mask_blob: has_masks.then(|| mask_name.to_string()),
        layers,
    };
    (manifest, blob, masks)
}

fn read_values<T: Scalar>(blob: &[u8], e: &TensorEntry, path: &Path) -> Result<Vec<T>> {
    let start = e.offset as usize;
    let end = start + 4 * e.count as usize;
    if end > blob.len() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: blob.len() as u64,
            message: format!("tensor {} needs bytes {start}..{end}", e.name),
        });
    }
    Ok(blob[start..end]
        .chunks_exact(4)
        .map(|b| cast(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
        .collect())
}

/// Rebuild a model from manifest + blobs.
pub fn decode<T: Scalar>(manifest: &Manifest, blob: &[u8], masks: &[u8], blob_path: &Path) -> Result<Model<T>> {
    if manifest.version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            path: blob_path.to_path_buf(),
            offset: 0,
            message: format!("unsupported checkpoint version {}", manifest.version),
        });
    }
    let mut layers = Vec::with_capacity(manifest.layers.len());
    for e in &manifest.layers {
        let shape: [usize; 4] = e
            .weight
            .shape
            .clone()
            .try_into()
            .map_err(|_| Error::shape(format!("layer {} weight is not rank 4", e.name)))?;
        let weight = Tensor::from_vec(shape, read_values(blob, &e.weight, blob_path)?)?;
        let bias = read_values(blob, &e.bias, blob_path)?;
        let mask = match &e.mask {
            None => None,
            Some(m) => {
                let start = m.offset as usize;
                let nbytes = (m.bits as usize).div_ceil(8);
                if start + nbytes > masks.len() || m.bits as usize != weight.len() {
                    return Err(Error::Format {
                        path: blob_path.to_path_buf(),
                        offset: masks.len() as u64,
                        message: format!("mask of layer {} is truncated or mis-sized", e.name),
                    });
                }
                let bits = unpack_bits(&masks[start..start + nbytes], m.bits as usize);
                Some(Tensor::from_vec(shape, bits.into_iter().map(|b| if b { T::one() } else { T::zero() }).collect())?)
            }
        };
        layers.push(Layer {
            name: e.name.clone(),
            kind: e.kind,
            in_channels: e.in_channels,
            out_channels: e.out_channels,
            kernel: (e.kernel[0], e.kernel[1]),
            stride: e.stride,
            weight,
            bias,
            mask,
        });
    }
    let model = Model {
        name: manifest.model.clone(),
        input_shape: manifest.input_shape,
        input_select: manifest.input_select.clone(),
        hidden_activation: manifest.hidden_activation,
        output_activation: manifest.output_activation,
        layers,
    };
    model.validate()?;
    Ok(model)
}

pub fn save<T: Scalar>(model: &Model<T>, stem: &Path) -> Result<()> {
    let (json, bin, mask) = checkpoint_paths(stem);
    let file_name = |p: &Path| p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let (manifest, blob, masks) = encode(model, &file_name(&bin), &file_name(&mask));
    if let Some(parent) = json.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(&json, serde_json::to_vec_pretty(&manifest)?).map_err(|e| Error::io(&json, e))?;
    fs::write(&bin, blob).map_err(|e| Error::io(&bin, e))?;
    if manifest.mask_blob.is_some() {
        fs::write(&mask, masks).map_err(|e| Error::io(&mask, e))?;
    }
    Ok(())
}

pub fn load<T: Scalar>(stem: &Path) -> Result<Model<T>> {
    let (json, _, _) = checkpoint_paths(stem);
    let text = fs::read(&json).map_err(|e| Error::io(&json, e))?;
    let manifest: Manifest = serde_json::from_slice(&text)?;
    let dir = json.parent().unwrap_or(Path::new("."));
    let blob_path = dir.join(&manifest.blob);
    let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
    let masks = match &manifest.mask_blob {
        Some(m) => {
            let p = dir.join(m);
            fs::read(&p).map_err(|e| Error::io(&p, e))?
        }
        None => Vec::new(),
    };
    decode(&manifest, &blob, &masks, &blob_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn manifest_offsets_are_contiguous() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut c = Layer::<f32>::conv("c", 1, 2, (2, 2), 1, 2.0, &mut rng);
        c.mask = Some(Tensor::from_vec([2, 1, 2, 2], vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]).unwrap());
        c.apply_mask();
        let f = Layer::<f32>::fc("f", 2, (2, 2), 3, 1.0, &mut rng);
        let m = Model::new("m", [1, 3, 3], Activation::Relu, vec![c, f]);
        let (man, blob, masks) = encode(&m, "m.bin", "m.mask.bin");
        assert_eq!(man.layers[0].weight.offset, 0);
        assert_eq!(man.layers[0].bias.offset, 8 * 4);
        assert_eq!(man.layers[1].weight.offset, 10 * 4);
        assert_eq!(blob.len(), (10 + 24 + 3) * 4);
        assert_eq!(masks, vec![0b1100_1101]);
        let back: Model<f32> = decode(&man, &blob, &masks, Path::new("m.bin")).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn truncated_blob_is_a_format_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Model::new("m", [1, 2, 2], Activation::Relu, vec![Layer::<f32>::conv("c", 1, 1, (2, 2), 1, 2.0, &mut rng)]);
        let (man, blob, masks) = encode(&m, "b", "k");
        let err = decode::<f32>(&man, &blob[..blob.len() - 1], &masks, Path::new("b")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }
}
