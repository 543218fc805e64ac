//! Sequential networks of conv / fc / information-dropout layers.

use rand::RngCore;

use crate::error::{Error, Result};
use crate::nn::activation::{sigmoid, Activation};
use crate::nn::layer::{self, conv_backward, conv_forward, Layer, LayerGrads, LayerKind};
use crate::scalar::{cast, Scalar};
use crate::tensor::Tensor;
use crate::vp::noise::{noise_from_normal, standard_normals, NOISE_STD_CAP};

/// A feed-forward stack. Every conv/fc layer except the last is followed by
/// `hidden_activation`; the last one by `output_activation` (logits when `None`).
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub name: String,
    /// Raw input item shape `(C, H, W)`.
    pub input_shape: [usize; 3],
    /// Raw input channels consumed by the first layer (pruning the first layer slices these).
    pub input_select: Vec<usize>,
    pub hidden_activation: Activation,
    pub output_activation: Option<Activation>,
    pub layers: Vec<Layer<T>>,
}

/// How information-dropout layers draw their noise during a training pass.
pub enum NoiseMode<'a, T> {
    /// Evaluation mode: `ξ ≡ 1`.
    Off,
    Sample(&'a mut dyn RngCore),
    /// Pre-drawn standard normals, one tensor per information-dropout layer.
    Fixed(&'a [Tensor<T>]),
}

#[derive(Debug, Clone)]
enum StepCache<T> {
    Linear {
        input: Tensor<T>,
        pre: Tensor<T>,
        out: Tensor<T>,
        act: Option<Activation>,
    },
    Noise {
        input: Tensor<T>,
        a: Tensor<T>,
        g: Tensor<T>,
        xi: Tensor<T>,
    },
    Identity,
}

/// Cached intermediates of a training forward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    steps: Vec<StepCache<T>>,
    pub output: Tensor<T>,
}

impl<T: Scalar> Trace<T> {
    /// Per-activation noise std of each information-dropout layer that was active.
    pub fn noise_stds(&self) -> Vec<&Tensor<T>> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                StepCache::Noise { a, .. } => Some(a),
                _ => None,
            })
            .collect()
    }

    /// The standard-normal draws used, for replaying the same noise.
    pub fn normals(&self) -> Vec<Tensor<T>> {
        self.steps
            .iter()
            .filter_map(|s| match s {
                StepCache::Noise { g, .. } => Some(g.clone()),
                _ => None,
            })
            .collect()
    }
}

/// Output of the variance head: `a = cap·sigmoid(W·x + b)` per activation.
pub fn info_noise_std<T: Scalar>(layer: &Layer<T>, x: &Tensor<T>) -> Tensor<T> {
    let u = conv_forward(&layer.weight, &layer.bias, 1, x, x.shape());
    let cap: T = cast(NOISE_STD_CAP);
    u.map(|v| cap * sigmoid(v))
}

impl<T: Scalar> Model<T> {
    pub fn new(name: &str, input_shape: [usize; 3], hidden: Activation, layers: Vec<Layer<T>>) -> Self {
        Model {
            name: name.to_string(),
            input_shape,
            input_select: (0..input_shape[0]).collect(),
            hidden_activation: hidden,
            output_activation: None,
            layers,
        }
    }

    pub fn compressible_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.layers[i].is_compressible()).collect()
    }

    fn last_linear(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.is_compressible())
    }

    /// Activation applied after layer `idx` (None for info dropout and logit layers).
    pub fn activation_after(&self, idx: usize) -> Option<Activation> {
        if !self.layers[idx].is_compressible() {
            None
        } else if Some(idx) == self.last_linear() {
            self.output_activation
        } else {
            Some(self.hidden_activation)
        }
    }

    /// Input shape `(C, H, W)` seen by every layer, for a single item.
    pub fn layer_input_shapes(&self) -> Result<Vec<[usize; 3]>> {
        let mut shape = [1, self.input_select.len(), self.input_shape[1], self.input_shape[2]];
        let mut out = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            out.push([shape[1], shape[2], shape[3]]);
            shape = l.output_shape(shape)?;
        }
        Ok(out)
    }

    /// Check that consecutive layers agree on shapes.
    pub fn validate(&self) -> Result<()> {
        self.layer_input_shapes().map(|_| ())
    }

    /// Weights plus biases of the conv/fc layers.
    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.is_compressible())
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Nonzero weights plus biases of the conv/fc layers.
    pub fn nonzero_params(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| l.is_compressible())
            .map(|l| l.nonzero_weights() + l.bias.len())
            .sum()
    }

    fn prepare_input(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, c, h, w] = x.shape();
        if [c, h, w] != self.input_shape {
            return Err(Error::shape(format!(
                "model {} expects items of shape {:?}, got {:?}",
                self.name,
                self.input_shape,
                [c, h, w]
            )));
        }
        if self.input_select.len() == c && self.input_select.iter().enumerate().all(|(i, &s)| i == s) {
            Ok(x.clone())
        } else {
            Ok(x.select_channels(&self.input_select))
        }
    }

    /// Evaluation-mode forward pass.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = self.prepare_input(x)?;
        for (i, l) in self.layers.iter().enumerate() {
            if !l.is_compressible() {
                continue;
            }
            h = layer::forward(l, &h)?;
            if let Some(act) = self.activation_after(i) {
                h = act.forward(&h);
            }
        }
        Ok(h)
    }

    /// Evaluation-mode output of layer `idx` before its activation, plus that layer's input.
    pub fn forward_to(&self, x: &Tensor<T>, idx: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut h = self.prepare_input(x)?;
        for (i, l) in self.layers.iter().enumerate() {
            if i == idx {
                let pre = layer::forward(l, &h)?;
                return Ok((h, pre));
            }
            if !l.is_compressible() {
                continue;
            }
            h = layer::forward(l, &h)?;
            if let Some(act) = self.activation_after(i) {
                h = act.forward(&h);
            }
        }
        Err(Error::invalid(format!("layer index {idx} out of range")))
    }

    /// Forward pass caching everything needed by [`Model::backward`].
    pub fn forward_trace(&self, x: &Tensor<T>, mut noise: NoiseMode<'_, T>) -> Result<Trace<T>> {
        let mut h = self.prepare_input(x)?;
        let mut steps = Vec::with_capacity(self.layers.len());
        let mut noise_idx = 0;
        for (i, l) in self.layers.iter().enumerate() {
            match l.kind {
                LayerKind::InfoDrop => {
                    let g = match &mut noise {
                        NoiseMode::Off => {
                            steps.push(StepCache::Identity);
                            continue;
                        }
                        NoiseMode::Sample(rng) => standard_normals(h.shape(), &mut **rng),
                        NoiseMode::Fixed(gs) => {
                            let g = gs.get(noise_idx).cloned().ok_or_else(|| {
                                Error::invalid("fewer fixed noise draws than information-dropout layers")
                            })?;
                            g.expect_shape(h.shape())?;
                            g
                        }
                    };
                    noise_idx += 1;
                    l.output_shape(h.shape())?;
                    let a = info_noise_std(l, &h);
                    let xi = a.zip_map(&g, noise_from_normal)?;
                    let out = h.zip_map(&xi, |x, s| x * s)?;
                    steps.push(StepCache::Noise { input: h, a, g, xi });
                    h = out;
                }
                _ => {
                    let pre = layer::forward(l, &h)?;
                    let act = self.activation_after(i);
                    let out = match act {
                        Some(a) => a.forward(&pre),
                        None => pre.clone(),
                    };
                    steps.push(StepCache::Linear {
                        input: h,
                        pre,
                        out: out.clone(),
                        act,
                    });
                    h = out;
                }
            }
        }
        Ok(Trace { steps, output: h })
    }

    /// Backpropagate `grad_out` through a trace.
    ///
    /// `noise_std_grads` optionally adds a direct gradient on each active
    /// information-dropout layer's noise std (the variational penalty term).
    /// Returns per-layer parameter gradients and the gradient w.r.t. the
    /// (channel-selected) input.
    pub fn backward(
        &self,
        trace: &Trace<T>,
        grad_out: &Tensor<T>,
        noise_std_grads: &[Option<Tensor<T>>],
    ) -> Result<(Vec<LayerGrads<T>>, Tensor<T>)> {
        grad_out.expect_shape(trace.output.shape())?;
        let mut grads: Vec<LayerGrads<T>> = self.layers.iter().map(LayerGrads::zeros_like).collect();
        let n_noise = trace.noise_stds().len();
        let mut noise_idx = n_noise;
        let mut g = grad_out.clone();
        for (i, step) in trace.steps.iter().enumerate().rev() {
            let l = &self.layers[i];
            match step {
                StepCache::Identity => {}
                StepCache::Linear { input, pre, out, act } => {
                    let gpre = match act {
                        Some(a) => a.backward(pre, out, &g),
                        None => g,
                    };
                    let (gx, lg) = layer::backward(l, input, &gpre)?;
                    grads[i] = lg;
                    g = gx;
                }
                StepCache::Noise { input, a, g: normal, xi } => {
                    noise_idx -= 1;
                    let cap: T = cast(NOISE_STD_CAP);
                    let extra = noise_std_grads.get(noise_idx).and_then(|o| o.as_ref());
                    let mut gx = g.zip_map(xi, |gy, s| gy * s)?;
                    let mut gu = Tensor::zeros(a.shape());
                    for (k, gu_k) in gu.data_mut().iter_mut().enumerate() {
                        let (ak, xk, sk, nk) = (a.data()[k], input.data()[k], xi.data()[k], normal.data()[k]);
                        let mut ga = g.data()[k] * xk * sk * (nk - ak);
                        if let Some(e) = extra {
                            ga += e.data()[k];
                        }
                        // a = cap·σ(u) ⇒ da/du = a·(1 − a/cap)
                        *gu_k = ga * ak * (T::one() - ak / cap);
                    }
                    let (gx_head, lg) = conv_backward(&l.weight, 1, input, &gu);
                    for (d, &s) in gx.data_mut().iter_mut().zip(gx_head.data()) {
                        *d += s;
                    }
                    grads[i] = lg;
                    g = gx;
                }
            }
        }
        Ok((grads, g))
    }

    /// Kernel `(N, C, kh, kw)` summary of each conv/fc layer, for logging.
    pub fn describe(&self) -> String {
        self.layers
            .iter()
            .map(|l| format!("{}:{:?}{:?}", l.name, l.kind, l.weight.shape()))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Flat views of all parameters (weights then bias, layer by layer), for
/// finite-difference checks and target-network averaging.
impl<T: Scalar> Model<T> {
    pub fn params_flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params_flat(&mut self, values: &[T]) -> Result<()> {
        let total: usize = self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum();
        if values.len() != total {
            return Err(Error::shape(format!("expected {total} parameters, got {}", values.len())));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weight.len();
            l.weight.data_mut().copy_from_slice(&values[at..at + w]);
            at += w;
            let b = l.bias.len();
            l.bias.copy_from_slice(&values[at..at + b]);
            at += b;
        }
        Ok(())
    }
}

/// Concatenate gradients in [`Model::params_flat`] order.
pub fn grads_flat<T: Scalar>(grads: &[LayerGrads<T>]) -> Vec<T> {
    let mut out = Vec::new();
    for g in grads {
        out.extend_from_slice(g.weight.data());
        out.extend_from_slice(&g.bias);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(rng: &mut ChaCha8Rng) -> Model<f64> {
        let layers = vec![
            Layer::conv("c1", 2, 3, (3, 3), 1, 1.0, rng),
            Layer::info_drop("d1", 3, rng),
            Layer::fc("f1", 3, (3, 3), 4, 1.0, rng),
        ];
        Model::new("small", [2, 5, 5], Activation::Softplus, layers)
    }

    #[test]
    fn eval_forward_ignores_info_dropout() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = small(&mut rng);
        let x = standard_normals::<f64>([2, 2, 5, 5], &mut rng);
        let y = m.forward(&x).unwrap();
        let t = m.forward_trace(&x, NoiseMode::Off).unwrap();
        assert_eq!(y, t.output);
        assert_eq!(y.shape(), [2, 4, 1, 1]);
        assert!(t.noise_stds().is_empty());
    }

    #[test]
    fn noisy_forward_is_reproducible_with_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = small(&mut rng);
        let x = standard_normals::<f64>([2, 2, 5, 5], &mut rng);
        let mut r1 = ChaCha8Rng::seed_from_u64(42);
        let mut r2 = ChaCha8Rng::seed_from_u64(42);
        let a = m.forward_trace(&x, NoiseMode::Sample(&mut r1)).unwrap();
        let b = m.forward_trace(&x, NoiseMode::Sample(&mut r2)).unwrap();
        assert_eq!(a.output, b.output);
        assert_ne!(a.output, m.forward(&x).unwrap());
        let replay = m.forward_trace(&x, NoiseMode::Fixed(&a.normals())).unwrap();
        assert_eq!(replay.output, a.output);
    }

    #[test]
    fn zero_input_gives_zero_noisy_activation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Layer::<f64>::info_drop("d", 2, &mut rng);
        let m = Model::new("d", [2, 3, 3], Activation::Relu, vec![d]);
        let x = Tensor::zeros([1, 2, 3, 3]);
        let t = m.forward_trace(&x, NoiseMode::Sample(&mut rng)).unwrap();
        assert!(t.output.data().iter().all(|&v| v == 0.0));
        assert!(t.noise_stds()[0].data().iter().all(|&a| a > 0.0 && a <= NOISE_STD_CAP));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = small(&mut rng);
        assert!(m.forward(&Tensor::zeros([1, 2, 6, 5])).is_err());
    }
}
