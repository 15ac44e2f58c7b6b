//! Quaternion-valued neural networks with structured-sparsity regularizers.
//!
//! Layers, manual reverse-mode gradients, group-sparse penalties on whole
//! quaternion weights and on batch-norm scales, channel pruning, an Adam
//! training loop, dataset loaders and a binary model format.

pub mod autograd;
pub mod cli;
pub mod data;
pub mod error;
pub mod io;
mod kernels;
pub mod layers;
pub mod model;
pub mod optim;
pub mod presets;
pub mod quat;
pub mod regularizers;
pub mod sparsity;
pub mod train;

pub use error::{QvnnError, Result};
pub use model::Model;
pub use quat::{QTensor, Quaternion};
