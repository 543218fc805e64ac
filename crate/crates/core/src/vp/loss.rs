//! The variational objective: cross-entropy plus a weighted penalty on each
//! information-dropout layer's noise std.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layer::{LayerGrads, LayerKind};
use crate::nn::loss::cross_entropy;
use crate::nn::model::{Model, NoiseMode};
use crate::scalar::{cast, to_f64, Scalar};
use crate::tensor::Tensor;

/// Noise std floor applied before taking logarithms.
pub const STD_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlForm {
    /// `(a² + μ²)/(2σ²) − ln(a²/σ) − 1/2`.
    AsPrinted,
    /// Textbook log-normal KL: `ln(σ/a) + (a² + μ²)/(2σ²) − 1/2`.
    Standard,
}

/// Hyperparameters of the penalty and of the fine-tune loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VpConfig {
    pub alpha: f64,
    pub prior_mu: f64,
    pub prior_sigma: f64,
    pub kl: KlForm,
    /// Fine-tune iterations per pruned layer.
    pub steps: usize,
    pub lr: f64,
    /// Per-step learning-rate decay.
    pub decay: f64,
    pub momentum: f64,
    pub batch_size: usize,
}

impl Default for VpConfig {
    fn default() -> Self {
        VpConfig {
            alpha: 1.0,
            prior_mu: 0.0,
            prior_sigma: 1.0,
            kl: KlForm::AsPrinted,
            steps: 100,
            lr: 0.005,
            decay: 0.995,
            momentum: 0.9,
            batch_size: 32,
        }
    }
}

impl VpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("vp.decay must be in (0, 1], got {}", self.decay)));
        }
        if !(self.prior_sigma > 0.0) || self.alpha < 0.0 || !(self.lr > 0.0) {
            return Err(Error::Config("vp: need prior_sigma > 0, alpha >= 0, lr > 0".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.batch_size == 0 {
            return Err(Error::Config("vp: need 0 <= momentum < 1 and batch_size >= 1".into()));
        }
        Ok(())
    }

    /// Per-activation penalty at noise std `a`.
    pub fn penalty(&self, a: f64) -> f64 {
        let a = a.max(STD_FLOOR);
        let (mu, s) = (self.prior_mu, self.prior_sigma);
        let quad = (a * a + mu * mu) / (2.0 * s * s);
        match self.kl {
            KlForm::AsPrinted => quad - (a * a / s).ln() - 0.5,
            KlForm::Standard => (s / a).ln() + quad - 0.5,
        }
    }

    /// Derivative of [`VpConfig::penalty`] with respect to `a` (zero below the floor).
    pub fn penalty_grad(&self, a: f64) -> f64 {
        if a < STD_FLOOR {
            return 0.0;
        }
        let s2 = self.prior_sigma * self.prior_sigma;
        match self.kl {
            KlForm::AsPrinted => a / s2 - 2.0 / a,
            KlForm::Standard => a / s2 - 1.0 / a,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VpLoss<T> {
    pub loss: f64,
    pub cross_entropy: f64,
    pub penalty: f64,
    pub grads: Vec<LayerGrads<T>>,
}

/// Loss and parameter gradients on one batch.
///
/// The penalty is averaged over the activations (and batch) of each active
/// information-dropout layer and summed over layers; with `NoiseMode::Off`
/// it vanishes and the loss is plain cross-entropy.
pub fn vp_loss<T: Scalar>(
    model: &Model<T>,
    x: &Tensor<T>,
    labels: &[usize],
    cfg: &VpConfig,
    noise: NoiseMode<'_, T>,
) -> Result<VpLoss<T>> {
    if cfg.alpha > 0.0 && !matches!(noise, NoiseMode::Off) && !model.layers.iter().any(|l| l.kind == LayerKind::InfoDrop) {
        return Err(Error::invalid(format!("model {} has no information-dropout layer", model.name)));
    }
    let trace = model.forward_trace(x, noise)?;
    let (ce, grad_logits) = cross_entropy(&trace.output, labels)?;
    let mut penalty = 0.0;
    let mut std_grads = Vec::new();
    for a in trace.noise_stds() {
        let count = a.len() as f64;
        penalty += cfg.alpha * a.data().iter().map(|&v| cfg.penalty(to_f64(v))).sum::<f64>() / count;
        let scale = cfg.alpha / count;
        std_grads.push(if cfg.alpha == 0.0 {
            None
        } else {
            Some(a.map(|v| cast(scale * cfg.penalty_grad(to_f64(v)))))
        });
    }
    let (grads, _) = model.backward(&trace, &grad_logits, &std_grads)?;
    Ok(VpLoss {
        loss: ce + penalty,
        cross_entropy: ce,
        penalty,
        grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prior_matching_penalty_is_zero() {
        let mut cfg = VpConfig::default();
        assert!(cfg.penalty(1.0).abs() < 1e-15);
        cfg.kl = KlForm::Standard;
        assert!(cfg.penalty(1.0).abs() < 1e-15);
    }

    #[test]
    fn printed_form_value() {
        let cfg = VpConfig::default();
        // a = 0.5: 0.125 − ln 0.25 − 0.5
        assert!((cfg.penalty(0.5) - (0.125 - 0.25f64.ln() - 0.5)).abs() < 1e-12);
        assert!(cfg.penalty(0.0).is_finite());
    }

    #[test]
    fn penalty_grad_matches_difference() {
        for kl in [KlForm::AsPrinted, KlForm::Standard] {
            let cfg = VpConfig { kl, prior_mu: 0.3, prior_sigma: 0.7, ..VpConfig::default() };
            for a in [0.05, 0.3, 0.8] {
                let h = 1e-6;
                let fd = (cfg.penalty(a + h) - cfg.penalty(a - h)) / (2.0 * h);
                assert!((fd - cfg.penalty_grad(a)).abs() < 1e-6);
            }
        }
    }
}
