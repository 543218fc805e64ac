//! Minimal differentiable-network substrate.

pub mod activation;
pub mod checkpoint;
pub mod gradcheck;
pub mod layer;
pub mod loss;
pub mod model;
pub mod optim;

pub use activation::{sigmoid, softplus, Activation};
pub use layer::{backward, forward, Layer, LayerGrads, LayerKind};
pub use loss::cross_entropy;
pub use model::{grads_flat, Model, NoiseMode, Trace};
pub use optim::{sgd_momentum_update, Adam, ParamState, SgdMomentum};
