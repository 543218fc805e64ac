//! Momentum SGD and Adam over flat parameter buffers.

use crate::nn::layer::LayerGrads;
use crate::nn::model::Model;
use crate::scalar::{cast, Scalar};

/// A parameter array with its gradient and momentum buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamState<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub momentum: Vec<T>,
}

impl<T: Scalar> ParamState<T> {
    pub fn new(value: Vec<T>) -> Self {
        let n = value.len();
        ParamState {
            value,
            grad: vec![T::zero(); n],
            momentum: vec![T::zero(); n],
        }
    }

    /// `v ← μ·v + g; θ ← θ − lr·v`.
    pub fn sgd_momentum_step(&mut self, lr: f64, momentum_coef: f64) {
        sgd_momentum_update(&mut self.value, &self.grad, &mut self.momentum, lr, momentum_coef);
    }
}

pub fn sgd_momentum_update<T: Scalar>(value: &mut [T], grad: &[T], velocity: &mut [T], lr: f64, momentum_coef: f64) {
    debug_assert!(lr > 0.0 && (0.0..1.0).contains(&momentum_coef));
    let lr: T = cast(lr);
    let mu: T = cast(momentum_coef);
    for ((x, &g), v) in value.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = mu * *v + g;
        *x -= lr * *v;
    }
}

fn masked_grad<T: Scalar>(g: &LayerGrads<T>, mask: Option<&crate::tensor::Tensor<T>>) -> Vec<T> {
    let mut gw = g.weight.data().to_vec();
    if let Some(m) = mask {
        for (gi, &mi) in gw.iter_mut().zip(m.data()) {
            *gi *= mi;
        }
    }
    gw
}

/// Momentum SGD over every layer of a model. Masked weights receive no update.
#[derive(Debug, Clone)]
pub struct SgdMomentum<T> {
    pub lr: f64,
    pub momentum: f64,
    velocity: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> SgdMomentum<T> {
    pub fn new(lr: f64, momentum: f64) -> Self {
        SgdMomentum {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    fn sync(&mut self, model: &Model<T>) {
        let stale = self.velocity.len() != model.layers.len()
            || self
                .velocity
                .iter()
                .zip(&model.layers)
                .any(|(v, l)| v.0.len() != l.weight.len() || v.1.len() != l.bias.len());
        if stale {
            self.velocity = model
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.weight.len()], vec![T::zero(); l.bias.len()]))
                .collect();
        }
    }

    pub fn step(&mut self, model: &mut Model<T>, grads: &[LayerGrads<T>]) {
        self.sync(model);
        for ((layer, g), (vw, vb)) in model.layers.iter_mut().zip(grads).zip(self.velocity.iter_mut()) {
            let gw = masked_grad(g, layer.mask.as_ref());
            sgd_momentum_update(layer.weight.data_mut(), &gw, vw, self.lr, self.momentum);
            sgd_momentum_update(&mut layer.bias, &g.bias, vb, self.lr, self.momentum);
            layer.apply_mask();
        }
    }
}

/// Adam with bias correction; used for the agent networks.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: i32,
    moments: Vec<[Vec<T>; 4]>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            moments: Vec::new(),
        }
    }

    fn update(&self, value: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], sign: f64) {
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..value.len() {
            let g = crate::scalar::to_f64(grad[i]);
            let mi = b1 * crate::scalar::to_f64(m[i]) + (1.0 - b1) * g;
            let vi = b2 * crate::scalar::to_f64(v[i]) + (1.0 - b2) * g * g;
            m[i] = cast(mi);
            v[i] = cast(vi);
            let step = self.lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
            value[i] -= cast::<T>(sign * step);
        }
    }

    /// Descend along `grads` (pass `ascend = true` to maximize).
    pub fn step(&mut self, model: &mut Model<T>, grads: &[LayerGrads<T>], ascend: bool) {
        if self.moments.len() != model.layers.len() {
            self.moments = model
                .layers
                .iter()
                .map(|l| {
                    let (w, b) = (l.weight.len(), l.bias.len());
                    [vec![T::zero(); w], vec![T::zero(); w], vec![T::zero(); b], vec![T::zero(); b]]
                })
                .collect();
        }
        self.t += 1;
        let sign = if ascend { -1.0 } else { 1.0 };
        let mut moments = std::mem::take(&mut self.moments);
        for ((layer, g), mom) in model.layers.iter_mut().zip(grads).zip(moments.iter_mut()) {
            let [mw, vw, mb, vb] = mom;
            self.update(layer.weight.data_mut(), g.weight.data(), mw, vw, sign);
            self.update(&mut layer.bias, &g.bias, mb, vb, sign);
        }
        self.moments = moments;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_sgd_when_momentum_zero() {
        let mut p = ParamState::new(vec![1.0f64, -2.0]);
        p.grad = vec![0.5, -1.0];
        p.sgd_momentum_step(0.1, 0.0);
        assert!((p.value[0] - 0.95).abs() < 1e-12);
        assert!((p.value[1] + 1.9).abs() < 1e-12);
    }

    #[test]
    fn zero_grad_zero_velocity_is_noop() {
        let mut p = ParamState::new(vec![3.0f32]);
        p.sgd_momentum_step(0.5, 0.9);
        assert_eq!(p.value, vec![3.0]);
    }

    #[test]
    fn two_momentum_steps_hand_iteration() {
        let mut p = ParamState::new(vec![0.0f64]);
        p.grad = vec![1.0];
        p.sgd_momentum_step(0.1, 0.9);
        p.sgd_momentum_step(0.1, 0.9);
        assert!((p.value[0] + 0.29).abs() < 1e-12);
        assert_eq!(p.value.len(), p.grad.len());
        assert_eq!(p.value.len(), p.momentum.len());
    }
}
