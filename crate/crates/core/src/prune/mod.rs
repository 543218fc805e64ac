//! Channel pruning: LASSO selection of input channels plus least-squares
//! reconstruction of the surviving weights.

pub mod apply;
pub mod lasso;
pub mod linalg;
pub mod sample;

pub use apply::apply_channel_prune;
pub use lasso::{keep_count, lasso_channel_select, reconstruct_weights, LassoProblem, PruneDecision, Refit};
pub use sample::{sample_patches, SampleSpec};
