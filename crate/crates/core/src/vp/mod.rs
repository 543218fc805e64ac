//! Element-wise variational pruning through information dropout.

pub mod finetune;
pub mod loss;
pub mod mask;
pub mod noise;

pub use finetune::{vp_finetune, FinetuneOutcome};
pub use loss::{vp_loss, KlForm, VpConfig, VpLoss};
pub use mask::{extract_mask, mask_from_scores};
pub use noise::{noise_sample, NOISE_STD_CAP};
