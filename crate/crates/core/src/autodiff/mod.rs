//! Reverse-mode automatic differentiation over dense f64 tensors.
//!
//! The operation set is exactly what the surrogate and the adaptation
//! loop need: 3-D convolution, voxel shuffle, batch normalization,
//! leaky ReLU, trilinear upsampling, and a pointwise/reduction suite.
//! A [`Graph`] records ops dynamically and replays them in reverse on
//! [`Graph::backward`]; gradients accumulate additively so several
//! forward/backward passes can feed one optimizer update.

mod conv;
mod gradcheck;
mod graph;
mod norm;
mod resample;
mod tensor;

pub use gradcheck::grad_check;
pub use graph::Graph;
pub use norm::{BatchNormMode, BatchNormState};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
