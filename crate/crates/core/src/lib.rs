//! Audio-visual synchronization classification with soft attention.
//!
//! The crate is organized bottom-up:
//!
//! - [`tensor`], [`ops`], [`autograd`], [`params`], [`gradcheck`]: a small
//!   dense-tensor library with reverse-mode differentiation and Adam.
//! - [`model`]: early-fusion block encoder with uniform, temporal and
//!   spatio-temporal pooling heads.
//! - [`data`]: synthetic event streams and audio-shift negatives.
//! - [`train`], [`checkpoint`]: training loop, metrics and persistence.
//! - [`config`], [`cli`]: text run configs and the command-line front end.

pub mod autograd;
pub mod checkpoint;
pub mod cli;
pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{FusionConfig, SyncModel, Variant};
pub use rng::Rng;
pub use tensor::Tensor;
