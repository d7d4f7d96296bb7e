//! SA-CT few-shot action recognition on patch features: a small tensor
//! library with reverse-mode differentiation, the spatial cross-attention
//! network with its temporal mixer, episodic sampling, feature providers,
//! and the training/evaluation harness.

pub mod autodiff;
pub mod episodes;
pub mod error;
pub mod features;
pub mod model;
pub mod tensor;
pub mod training;

pub use error::{ConfigError, DataError, Error, Result, TensorError};
