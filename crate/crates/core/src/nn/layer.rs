//! Convolution, fully-connected and information-dropout layer definitions.
//!
//! Fully-connected layers are dense `out × in` matrices. The matrix is stored
//! as a rank-4 tensor `(out, C, gh, gw)` where `(gh, gw)` is the spatial
//! extent of each input channel (1×1 when the producer is itself fully
//! connected). In memory this is exactly the row-major `out × (C·gh·gw)`
//! matrix; the grouping lets channel pruning remove whole producer channels.

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cast, Scalar};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    Fc,
    InfoDrop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub name: String,
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Kernel extent for conv; per-channel input extent for fc; 1×1 for info dropout.
    pub kernel: (usize, usize),
    pub stride: usize,
    /// Conv/fc: `(N, C, kh, kw)`. Info dropout: the 1×1 variance head `(C, C, 1, 1)`.
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
    /// Element-wise 0/1 mask over `weight`; pruned entries stay zero.
    pub mask: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads<T> {
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> LayerGrads<T> {
    pub fn zeros_like(layer: &Layer<T>) -> Self {
        LayerGrads {
            weight: Tensor::zeros(layer.weight.shape()),
            bias: vec![T::zero(); layer.bias.len()],
        }
    }
}

/// Initial bias of the variance head: `a ≈ cap·sigmoid(-2) ≈ 0.12·cap`.
pub const INFO_HEAD_BIAS_INIT: f64 = -2.0;

fn kaiming<T: Scalar>(shape: [usize; 4], fan_in: usize, gain: f64, rng: &mut dyn RngCore) -> Tensor<T> {
    let std = (gain / fan_in.max(1) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            cast(z * std)
        })
        .collect();
    Tensor::from_vec(shape, data).expect("length matches shape")
}

impl<T: Scalar> Layer<T> {
    /// Convolution with Kaiming fan-in initialization (`gain` 2 for ReLU, 1 otherwise).
    pub fn conv(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        gain: f64,
        rng: &mut dyn RngCore,
    ) -> Self {
        let shape = [out_channels, in_channels, kernel.0, kernel.1];
        Layer {
            name: name.to_string(),
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            kernel,
            stride: stride.max(1),
            weight: kaiming(shape, in_channels * kernel.0 * kernel.1, gain, rng),
            bias: vec![T::zero(); out_channels],
            mask: None,
        }
    }

    /// Fully-connected layer reading `in_channels` groups of `group.0 × group.1` inputs.
    pub fn fc(
        name: &str,
        in_channels: usize,
        group: (usize, usize),
        out_channels: usize,
        gain: f64,
        rng: &mut dyn RngCore,
    ) -> Self {
        let shape = [out_channels, in_channels, group.0, group.1];
        Layer {
            name: name.to_string(),
            kind: LayerKind::Fc,
            in_channels,
            out_channels,
            kernel: group,
            stride: 1,
            weight: kaiming(shape, in_channels * group.0 * group.1, gain, rng),
            bias: vec![T::zero(); out_channels],
            mask: None,
        }
    }

    /// Information-dropout layer over `channels` feature maps with a 1×1 variance head.
    pub fn info_drop(name: &str, channels: usize, rng: &mut dyn RngCore) -> Self {
        let mut weight = kaiming([channels, channels, 1, 1], channels, 1.0, rng);
        // Small head weights keep the initial noise level near the bias-defined value.
        for w in weight.data_mut() {
            *w *= cast(0.1);
        }
        Layer {
            name: name.to_string(),
            kind: LayerKind::InfoDrop,
            in_channels: channels,
            out_channels: channels,
            kernel: (1, 1),
            stride: 1,
            weight,
            bias: vec![cast(INFO_HEAD_BIAS_INIT); channels],
            mask: None,
        }
    }

    pub fn is_compressible(&self) -> bool {
        self.kind != LayerKind::InfoDrop
    }

    pub fn weight_count(&self) -> usize {
        self.weight.len()
    }

    pub fn nonzero_weights(&self) -> usize {
        self.weight.data().iter().filter(|w| **w != T::zero()).count()
    }

    /// Output shape for an input of shape `input`, validating compatibility.
    pub fn output_shape(&self, input: [usize; 4]) -> Result<[usize; 4]> {
        let [n, c, h, w] = input;
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "layer {} expects {} input channels, got {c}",
                self.name, self.in_channels
            )));
        }
        match self.kind {
            LayerKind::Conv => {
                let (kh, kw) = self.kernel;
                if h < kh || w < kw {
                    return Err(Error::shape(format!(
                        "layer {}: input {h}×{w} smaller than kernel {kh}×{kw}",
                        self.name
                    )));
                }
                Ok([n, self.out_channels, (h - kh) / self.stride + 1, (w - kw) / self.stride + 1])
            }
            LayerKind::Fc => {
                if (h, w) != self.kernel {
                    return Err(Error::shape(format!(
                        "layer {}: fc expects per-channel extent {:?}, got ({h}, {w})",
                        self.name, self.kernel
                    )));
                }
                Ok([n, self.out_channels, 1, 1])
            }
            LayerKind::InfoDrop => Ok(input),
        }
    }

    /// Zero masked weights.
    pub fn apply_mask(&mut self) {
        if let Some(mask) = &self.mask {
            for (w, &m) in self.weight.data_mut().iter_mut().zip(mask.data()) {
                if m == T::zero() {
                    *w = T::zero();
                }
            }
        }
    }
}

/// Lower `x` into a `(C·kh·kw) × (n·Ho·Wo)` column matrix.
fn im2col<T: Scalar>(x: &Tensor<T>, kernel: (usize, usize), stride: usize, out_hw: (usize, usize)) -> Vec<T> {
    let [n, c, h, w] = x.shape();
    let (kh, kw) = kernel;
    let (ho, wo) = out_hw;
    let p = ho * wo;
    let cols_n = n * p;
    let mut cols = vec![T::zero(); c * kh * kw * cols_n];
    let xd = x.data();
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                let dst_row = &mut cols[row * cols_n..(row + 1) * cols_n];
                for img in 0..n {
                    let src = &xd[(img * c + ci) * h * w..(img * c + ci + 1) * h * w];
                    let dst = &mut dst_row[img * p..(img + 1) * p];
                    for oy in 0..ho {
                        let sy = oy * stride + i;
                        let srow = &src[sy * w..(sy + 1) * w];
                        let drow = &mut dst[oy * wo..(oy + 1) * wo];
                        if stride == 1 {
                            drow.copy_from_slice(&srow[j..j + wo]);
                        } else {
                            for (ox, d) in drow.iter_mut().enumerate() {
                                *d = srow[ox * stride + j];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add a column matrix back into an input-shaped tensor.
fn col2im<T: Scalar>(cols: &[T], shape: [usize; 4], kernel: (usize, usize), stride: usize, out_hw: (usize, usize)) -> Tensor<T> {
    let [n, c, h, w] = shape;
    let (kh, kw) = kernel;
    let (ho, wo) = out_hw;
    let p = ho * wo;
    let cols_n = n * p;
    let mut gx = Tensor::zeros(shape);
    let gd = gx.data_mut();
    for ci in 0..c {
        for i in 0..kh {
            for j in 0..kw {
                let row = (ci * kh + i) * kw + j;
                let src_row = &cols[row * cols_n..(row + 1) * cols_n];
                for img in 0..n {
                    let dst = &mut gd[(img * c + ci) * h * w..(img * c + ci + 1) * h * w];
                    let src = &src_row[img * p..(img + 1) * p];
                    for oy in 0..ho {
                        let sy = oy * stride + i;
                        for ox in 0..wo {
                            dst[sy * w + ox * stride + j] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
    gx
}

/// Linear map of a conv or fc layer: the direct convolution sum plus bias.
///
/// Information-dropout layers are the identity here (evaluation mode).
pub fn forward<T: Scalar>(layer: &Layer<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let out_shape = layer.output_shape(x.shape())?;
    match layer.kind {
        LayerKind::InfoDrop => Ok(x.clone()),
        LayerKind::Fc => {
            let n = x.n();
            let fan_in = x.item_len();
            let mut out = vec![T::zero(); n * layer.out_channels];
            for chunk in out.chunks_mut(layer.out_channels) {
                chunk.copy_from_slice(&layer.bias);
            }
            // out (n×N) += x (n×in) · Wᵀ (in×N)
            T::gemm(n, fan_in, layer.out_channels, x.data(), (fan_in, 1), layer.weight.data(), (1, fan_in), T::one(), &mut out);
            Tensor::from_vec(out_shape, out)
        }
        LayerKind::Conv => Ok(conv_forward(&layer.weight, &layer.bias, layer.stride, x, out_shape)),
    }
}

/// Direct convolution of `x` with `weight` `(N, C, kh, kw)`; `out_shape` must already be validated.
pub(crate) fn conv_forward<T: Scalar>(weight: &Tensor<T>, bias: &[T], stride: usize, x: &Tensor<T>, out_shape: [usize; 4]) -> Tensor<T> {
    let [n, nout, ho, wo] = out_shape;
    let [_, cin, kh, kw] = weight.shape();
    let k = cin * kh * kw;
    let cols = im2col(x, (kh, kw), stride, (ho, wo));
    let cols_n = n * ho * wo;
    let mut prod = vec![T::zero(); nout * cols_n];
    T::gemm(nout, k, cols_n, weight.data(), (k, 1), &cols, (cols_n, 1), T::zero(), &mut prod);
    let p = ho * wo;
    let mut out = Tensor::zeros(out_shape);
    let od = out.data_mut();
    for o in 0..nout {
        let b = bias[o];
        for img in 0..n {
            let src = &prod[o * cols_n + img * p..o * cols_n + (img + 1) * p];
            let dst = &mut od[(img * nout + o) * p..(img * nout + o + 1) * p];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s + b;
            }
        }
    }
    out
}

/// Gradients of the linear map with respect to input, weight and bias.
pub fn backward<T: Scalar>(layer: &Layer<T>, x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, LayerGrads<T>)> {
    let out_shape = layer.output_shape(x.shape())?;
    grad_out.expect_shape(out_shape)?;
    match layer.kind {
        LayerKind::InfoDrop => Ok((grad_out.clone(), LayerGrads::zeros_like(layer))),
        LayerKind::Fc => {
            let n = x.n();
            let fan_in = x.item_len();
            let nout = layer.out_channels;
            let g = grad_out.data();
            let mut gw = Tensor::zeros(layer.weight.shape());
            // gW (N×in) = gᵀ (N×n) · x (n×in)
            T::gemm(nout, n, fan_in, g, (1, nout), x.data(), (fan_in, 1), T::zero(), gw.data_mut());
            let mut gb = vec![T::zero(); nout];
            for row in g.chunks(nout) {
                for (b, &v) in gb.iter_mut().zip(row) {
                    *b += v;
                }
            }
            let mut gx = Tensor::zeros(x.shape());
            // gx (n×in) = g (n×N) · W (N×in)
            T::gemm(n, nout, fan_in, g, (nout, 1), layer.weight.data(), (fan_in, 1), T::zero(), gx.data_mut());
            Ok((gx, LayerGrads { weight: gw, bias: gb }))
        }
        LayerKind::Conv => Ok(conv_backward(&layer.weight, layer.stride, x, grad_out)),
    }
}

pub(crate) fn conv_backward<T: Scalar>(weight: &Tensor<T>, stride: usize, x: &Tensor<T>, grad_out: &Tensor<T>) -> (Tensor<T>, LayerGrads<T>) {
    let [n, nout, ho, wo] = grad_out.shape();
    let [_, cin, kh, kw] = weight.shape();
    let p = ho * wo;
    let cols_n = n * p;
    let k = cin * kh * kw;
    let gd = grad_out.data();
    let mut gmat = vec![T::zero(); nout * cols_n];
    let mut gb = vec![T::zero(); nout];
    for o in 0..nout {
        let mut acc = 0.0f64;
        for img in 0..n {
            let src = &gd[(img * nout + o) * p..(img * nout + o + 1) * p];
            gmat[o * cols_n + img * p..o * cols_n + (img + 1) * p].copy_from_slice(src);
            acc += crate::scalar::sum_f64(src);
        }
        gb[o] = cast(acc);
    }
    let cols = im2col(x, (kh, kw), stride, (ho, wo));
    let mut gw = Tensor::zeros(weight.shape());
    // gW (N×K) = gmat (N×nP) · colsᵀ (nP×K)
    T::gemm(nout, cols_n, k, &gmat, (cols_n, 1), &cols, (1, cols_n), T::zero(), gw.data_mut());
    // gcols (K×nP) = Wᵀ (K×N) · gmat (N×nP)
    let mut gcols = vec![T::zero(); k * cols_n];
    T::gemm(k, nout, cols_n, weight.data(), (1, k), &gmat, (cols_n, 1), T::zero(), &mut gcols);
    let gx = col2im(&gcols, x.shape(), (kh, kw), stride, (ho, wo));
    (gx, LayerGrads { weight: gw, bias: gb })
}

/// Multiply-accumulate count of a direct scalar convolution, for cross-checking FLOP formulas.
pub fn reference_mac_count<T: Scalar>(layer: &Layer<T>, input: [usize; 4]) -> Result<u64> {
    let [n, nout, ho, wo] = layer.output_shape(input)?;
    let mut macs = 0u64;
    for _img in 0..n {
        for _o in 0..nout {
            for _y in 0..ho {
                for _x in 0..wo {
                    for _c in 0..layer.in_channels {
                        for _i in 0..layer.kernel.0 {
                            for _j in 0..layer.kernel.1 {
                                macs += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(macs)
}
