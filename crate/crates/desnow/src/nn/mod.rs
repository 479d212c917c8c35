//! Minimal deterministic neural engine: f64 tensors with reverse-mode
//! gradients, GEMM-backed convolution with circular horizontal padding,
//! residual stacks, Adam, and checkpoint IO. Sized for CPU training of
//! range-image models, not generality.

pub mod adam;
pub mod blocks;
pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod tensor;

pub use adam::Adam;
pub use blocks::{Backbone, DecoderHead, ResidualBlock, LEAKY_SLOPE};
pub use conv::ConvLayer;
pub use tensor::Tensor;
