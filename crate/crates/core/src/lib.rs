//! A volumetric spatial-frequency network laboratory.
//!
//! The crate carries its own tensor and reverse-mode autodiff engine, radix-2
//! 3D FFTs, the dense-attention backbone and global-filter frequency blocks,
//! a synthetic data generator, and the training/evaluation harness.

pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod param;
pub mod spectral;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::{ComplexTensor, Scalar, Tensor};
