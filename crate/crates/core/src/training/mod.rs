//! Loss composition, input noising for the denoising baseline, and the
//! training loop.

mod config;
mod loss;
mod model;
mod noise;
mod trainer;

pub use config::{AlphaMode, TrainConfig, Variant};
pub use loss::nll_loss;
pub use model::{gate_mode, Bottleneck, ForwardLoss, Model};
pub use noise::{drop_tokens, noise_sequence, shuffle_local};
pub use trainer::{stream_rng, TrainRecord, TrainReport, Trainer};

#[cfg(test)]
mod tests;
