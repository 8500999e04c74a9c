//! Traffic frame forecasting with a dense-block U-Net.
//!
//! The pipeline stacks one hour of 5-minute traffic frames into channels,
//! predicts six future frames (5, 10, 15, 30, 45 and 60 minutes ahead),
//! clamps the result and multiplies it by per-direction road masks learned
//! from where traffic has ever been observed. Training runs in two stages:
//! pretraining on one regime and a short fine-tune on data closer to the
//! evaluation regime. Synthetic cities stand in for recorded data.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the two
//! precisions in use.

mod binfmt;
pub mod data;
pub mod error;
pub mod roadmask;
pub mod scalar;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::adam::{Adam, AdamConfig};
pub use tensor::graph::{Graph, Var};
pub use tensor::Tensor;

/// Training precision.
pub type Tensor32 = Tensor<f32>;
/// Verification precision.
pub type Tensor64 = Tensor<f64>;
pub type Graph32 = Graph<f32>;
pub type Graph64 = Graph<f64>;

pub use roadmask::RoadMasks;
pub use unet::{ArchConfig, ModelParams};
