//! Forward and backward numerical kernels. Every function here is pure; the
//! autodiff tape in [`crate::autodiff`] wires them together.

pub mod activation;
pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod reshape;

pub use activation::{gelu, relu, sigmoid, Activation};
pub use conv::{conv1d_channels, conv3d, conv3d_direct, ConvGeom};
pub use elementwise::{binary, concat_channels, split_channels, Binary};
pub use linear::linear;
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use norm::{batchnorm, layernorm};
pub use pool::{avgpool3d, global_avg_pool, maxpool3d};
pub use reshape::{mean_tokens, patchify, unpatchify};
