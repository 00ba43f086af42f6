//! Sequence encoder/decoder with a fixed-size multi-head latent.

mod coder;
mod config;
mod vocab;

pub use coder::SeqCoder;
pub use config::ModelConfig;
pub use vocab::{split, TokenSequence, TokenizerKind, Vocabulary, BOS, EOS, PAD, UNK};

/// Whether a latent was taken before or after the quantization bottleneck.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentStage {
    Pre,
    Post,
}

/// `heads` rows of `dim` values: the decoder's attention memory.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMatrix {
    pub heads: usize,
    pub dim: usize,
    pub data: Vec<f32>,
    pub stage: LatentStage,
}

impl LatentMatrix {
    pub fn new(heads: usize, dim: usize, data: Vec<f32>, stage: LatentStage) -> Self {
        assert_eq!(data.len(), heads * dim, "latent size");
        Self { heads, dim, data, stage }
    }

    pub fn row(&self, h: usize) -> &[f32] {
        &self.data[h * self.dim..(h + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests;
