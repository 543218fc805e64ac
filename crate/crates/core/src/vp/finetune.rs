//! Fine-tuning under the variational objective with a decaying step size.

use log::warn;
use rand::RngCore;

use crate::data::{BatchSampler, Dataset};
use crate::error::{Error, Result};
use crate::nn::model::Model;
use crate::nn::optim::SgdMomentum;
use crate::train::sgd_step;
use crate::vp::loss::VpConfig;

/// Loss growth factor over the first step that aborts fine-tuning.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// Lower bound on the reference loss, so a near-zero first batch on a
/// trained network does not make ordinary batch noise look like divergence.
pub const DIVERGENCE_LOSS_FLOOR: f64 = 0.5;

pub fn is_divergent(loss: f64, initial: f64) -> bool {
    !loss.is_finite() || loss > DIVERGENCE_FACTOR * initial.abs().max(DIVERGENCE_LOSS_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub steps_run: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    pub final_lr: f64,
    pub diverged: bool,
}

/// Run exactly `cfg.steps` minibatch steps with `lr_k = lr·decay^k`, noise on.
pub fn vp_finetune(model: &mut Model<f32>, ds: &Dataset, cfg: &VpConfig, rng: &mut dyn RngCore) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if cfg.steps > 0 && ds.is_empty() {
        return Err(Error::Data("empty fine-tuning set".into()));
    }
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
        let idx = sampler.next(rng);
        let (x, y) = ds.batch(&idx);
        let loss = match sgd_step(model, &mut opt, &x, &y, cfg, Some(&mut *rng)) {
            Ok(l) => l,
            Err(Error::Diverged(msg)) => {
                warn!("variational fine-tune stopped: {msg}");
                out.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let initial = *out.initial_loss.get_or_insert(loss);
        out.final_loss = Some(loss);
        out.steps_run += 1;
        opt.lr *= cfg.decay;
        out.final_lr = opt.lr;
        if is_divergent(loss, initial) {
            warn!("variational fine-tune diverged: loss {loss} vs initial {initial}");
            out.diverged = true;
            break;
        }
    }
    Ok(out)
}
