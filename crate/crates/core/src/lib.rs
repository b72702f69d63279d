//! A from-scratch CPU implementation of a two-branch fingerprint / finger-vein
//! recognition network with channel-spatial attention fusion, plus the
//! tooling to train, evaluate and verify it.
//!
//! All tensors are NCHW. Layers are generic over [`tensor::Scalar`] so the
//! same code runs in `f32` for training and `f64` for gradient checks.
// `!(x > 0.0)` style checks are there to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod oracle;
pub mod parallel;
pub mod params;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use fusion::FusionVariant;
pub use model::{FpvCsafmModel, ModelConfig, Network};
pub use tensor::{Dims, Rng, Tensor};
