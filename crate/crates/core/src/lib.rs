//! Residual vector-quantized sequence autoencoder for monolingual paraphrasing.

mod error;
pub mod evalsuite;
pub mod numcore;
pub mod quantizer;
pub mod seqcoder;
pub mod training;

pub use error::{Error, Result};
