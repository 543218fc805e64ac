//! Supervised training and evaluation loops.

use log::{debug, info};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{random_shift, BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::nn::loss::argmax_rows;
use crate::nn::model::{Model, NoiseMode};
use crate::nn::optim::SgdMomentum;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vp::loss::{vp_loss, VpConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate decay applied after each epoch.
    pub lr_decay: f64,
    pub momentum: f64,
    /// Maximum random translation in pixels (0 disables augmentation).
    pub augment_shift: usize,
    /// Train with information-dropout noise and the variational penalty.
    pub info_dropout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 32,
            lr: 0.02,
            lr_decay: 0.9,
            momentum: 0.9,
            augment_shift: 2,
            info_dropout: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.lr_decay > 0.0) {
            return Err(Error::Config("train: need batch_size >= 1, lr > 0, 0 <= momentum < 1, lr_decay > 0".into()));
        }
        Ok(())
    }
}

/// One momentum-SGD step on a batch; returns the pre-step loss.
pub fn sgd_step<T: Scalar>(
    model: &mut Model<T>,
    opt: &mut SgdMomentum<T>,
    x: &Tensor<T>,
    labels: &[usize],
    vp: &VpConfig,
    noise: Option<&mut dyn RngCore>,
) -> Result<f64> {
    let mode = match noise {
        Some(rng) => NoiseMode::Sample(rng),
        None => NoiseMode::Off,
    };
    let out = vp_loss(model, x, labels, vp, mode)?;
    if !out.loss.is_finite() {
        return Err(Error::Diverged(format!("non-finite loss {}", out.loss)));
    }
    opt.step(model, &out.grads);
    Ok(out.loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
}

/// Train from the current parameters.
pub fn train(model: &mut Model<f32>, ds: &Dataset, cfg: &TrainConfig, vp: &VpConfig, rng: &mut dyn RngCore) -> Result<TrainLog> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let mut opt = SgdMomentum::new(cfg.lr, cfg.momentum);
    let mut sampler = BatchSampler::new(ds.len(), cfg.batch_size);
    let mut log = TrainLog { epoch_loss: Vec::new() };
    for epoch in 0..cfg.epochs {
        let steps = sampler.batches_per_epoch();
        let mut total = 0.0;
        for _ in 0..steps {
            let idx = sampler.next(rng);
            let (x, y) = ds.batch(&idx);
            let x = random_shift(&x, cfg.augment_shift, rng);
            let noise: Option<&mut dyn RngCore> = if cfg.info_dropout { Some(&mut *rng) } else { None };
            total += sgd_step(model, &mut opt, &x, &y, vp, noise)?;
        }
        let mean = total / steps as f64;
        info!("epoch {} loss {:.4} lr {:.5}", epoch + 1, mean, opt.lr);
        log.epoch_loss.push(mean);
        opt.lr *= cfg.lr_decay;
    }
    Ok(log)
}

/// Evaluation-mode predictions.
pub fn predict<T: Scalar>(model: &Model<T>, images: &Tensor<T>, batch: usize) -> Result<Vec<usize>> {
    let n = images.n();
    let mut out = Vec::with_capacity(n);
    let mut start = 0;
    while start < n {
        let end = (start + batch.max(1)).min(n);
        let logits = model.forward(&images.slice_items(start, end))?;
        out.extend(argmax_rows(&logits));
        start = end;
    }
    Ok(out)
}

/// Top-1 accuracy in `[0, 1]`.
pub fn evaluate(model: &Model<f32>, ds: &Dataset, batch: usize) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Data("empty evaluation set".into()));
    }
    let pred = predict(model, &ds.images, batch)?;
    let correct = pred.iter().zip(&ds.labels).filter(|(p, l)| p == l).count();
    debug!("evaluated {} items: {} correct", ds.len(), correct);
    Ok(correct as f64 / ds.len() as f64)
}
