//! Two-stage model compression driven by an actor-critic agent.
//!
//! The pruning stage walks the conv/fc layers of a trained network and, per
//! layer, removes input channels chosen by LASSO regression (with a
//! least-squares refit) and then individual weights ranked by the noise
//! levels of information-dropout layers. The quantization stage picks a bit
//! width per layer for a symmetric uniform quantizer and fine-tunes with a
//! straight-through estimator. [`pipeline::run_pipeline`] runs both stages and
//! writes a [`report::CompressionReport`].
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` and `f64`); the
//! aliases below name the `f32` instantiation used for real networks.

pub mod agent;
pub mod arch;
pub mod data;
pub mod diagnostics;
pub mod env;
pub mod error;
pub mod nn;
pub mod pipeline;
pub mod prune;
pub mod quant;
pub mod report;
pub mod scalar;
pub mod tensor;
pub mod train;
pub mod vp;

pub use error::{Error, Result};
pub use pipeline::{run_pipeline, RunConfig};
pub use report::CompressionReport;
pub use scalar::Scalar;

/// Activations and weights of production networks.
pub type Tensor4 = tensor::Tensor<f32>;
pub type Network = nn::Model<f32>;
pub type NetworkLayer = nn::Layer<f32>;
/// Double-precision instantiations for gradient checks and the agent.
pub type Tensor4d = tensor::Tensor<f64>;
pub type Network64 = nn::Model<f64>;
