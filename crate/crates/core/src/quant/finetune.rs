//! Quantization-aware fine-tuning with full-precision shadow weights.

use log::warn;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::nn::model::{Model, NoiseMode};
use crate::nn::optim::SgdMomentum;
use crate::quant::{quantize_model, ste_backward, QuantSpec, SteMode};
use crate::vp::finetune::{is_divergent, FinetuneOutcome};
use crate::vp::loss::{vp_loss, VpConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantFinetuneConfig {
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub ste: SteMode,
}

impl Default for QuantFinetuneConfig {
    fn default() -> Self {
        QuantFinetuneConfig {
            steps: 2000,
            lr: 0.002,
            momentum: 0.9,
            batch_size: 32,
            ste: SteMode::PositiveGate,
        }
    }
}

/// `steps` updates of the shadow weights through the quantized forward pass;
/// on return `model` holds the re-quantized shadow weights.
pub fn finetune_quantized(
    model: &mut Model<f32>,
    spec: &QuantSpec,
    ds: &Dataset,
    cfg: &QuantFinetuneConfig,
    rng: &mut dyn RngCore,
) -> Result<FinetuneOutcome> {
    if cfg.steps > 0 && ds.is_empty() {
        return Err(Error::Data("empty fine-tuning set".into()));
    }
    let plain = VpConfig { alpha: 0.0, ..VpConfig::default() };
    let mut shadow = model.clone();
    let mut opt = SgdMomentum::new(cfg.lr, cfg.momentum);
    let mut sampler = BatchSampler::new(ds.len(), cfg.batch_size);
    let mut out = FinetuneOutcome {
        steps_run: 0,
        initial_loss: None,
        final_loss: None,
        final_lr: cfg.lr,
        diverged: false,
    };
    for _ in 0..cfg.steps {
        let q = quantize_model(&shadow, spec)?;
        let idx = sampler.next(rng);
        let (x, y) = ds.batch(&idx);
        let mut l = vp_loss(&q, &x, &y, &plain, NoiseMode::Off)?;
        if !l.loss.is_finite() {
            out.diverged = true;
            break;
        }
        for (g, layer) in l.grads.iter_mut().zip(&shadow.layers) {
            if layer.is_compressible() {
                let gated = ste_backward(g.weight.data(), layer.weight.data(), cfg.ste)?;
                g.weight.data_mut().copy_from_slice(&gated);
            }
        }
        opt.step(&mut shadow, &l.grads);
        let initial = *out.initial_loss.get_or_insert(l.loss);
        out.final_loss = Some(l.loss);
        out.steps_run += 1;
        if is_divergent(l.loss, initial) {
            warn!("quantized fine-tune diverged: loss {} vs initial {initial}", l.loss);
            out.diverged = true;
            break;
        }
    }
    *model = quantize_model(&shadow, spec)?;
    Ok(out)
}
