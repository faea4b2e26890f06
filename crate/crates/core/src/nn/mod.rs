//! Minimal convolutional / fully connected regression engine: Euclidean loss,
//! momentum SGD with step decay and L2 weight decay, Gaussian initialization,
//! flip/rotation augmentation and a finite-difference gradient checker.

mod augment;
mod gradcheck;
mod layer;
mod loss;
mod network;
mod serialize;
mod sgd;
mod tensor;

use thiserror::Error;

pub use augment::{
    apply, augment, flip_horizontal, flip_vertical, rotate90, AugmentSpec, Rotation, Transform,
};
pub use gradcheck::{
    grad_check, grad_check_against, objective_gradients, GradCheckOptions, GradCheckReport,
};
pub use layer::{LayerSpec, DEFAULT_INIT_STD};
pub use loss::{euclidean_loss, regularized_objective, row_losses};
pub use network::{
    Architecture, Gradients, MicroNetOptions, Mode, Network, ParamGrad, Params,
};
pub use serialize::{FORMAT, VERSION};
pub use sgd::SgdConfig;
pub use tensor::Tensor;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid layer {index}: {reason}")]
    Specification { index: usize, reason: String },
    #[error("invalid optimizer configuration: {0}")]
    Config(String),
    #[error("non-finite gradient in layer {layer}")]
    NonFinite { layer: usize },
    #[error("malformed network container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Initialize a network for `arch`; deterministic per seed.
pub fn init_network(arch: Architecture, seed: u64) -> Result<Network, NnError> {
    Network::init(arch, seed)
}
