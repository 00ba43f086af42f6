use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Architecture of the encoder, latent bottleneck and decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub layers: usize,
    pub attn_heads: usize,
    pub ffn_dim: usize,
    /// Fixed positions appended to every encoder input.
    pub latent_positions: usize,
    /// Number of sub-vectors the latent is split into for quantization.
    pub quant_heads: usize,
    pub codebook_size: usize,
    /// Initial residual weight in (0, 1).
    pub gate_init: f64,
    pub per_head_gate: bool,
    pub max_len: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            d_model: 64,
            layers: 2,
            attn_heads: 4,
            ffn_dim: 256,
            latent_positions: 4,
            quant_heads: 2,
            codebook_size: 256,
            gate_init: 0.5,
            per_head_gate: false,
            max_len: 32,
        }
    }
}

impl ModelConfig {
    pub fn d_head(&self) -> usize {
        self.latent_positions * self.d_model / self.quant_heads.max(1)
    }

    pub fn latent_len(&self) -> usize {
        self.latent_positions * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.vocab_size < 5 {
            return fail(format!("vocab_size {} leaves no corpus tokens", self.vocab_size));
        }
        if self.d_model == 0 || self.layers == 0 || self.ffn_dim == 0 || self.max_len == 0 {
            return fail("d_model, layers, ffn_dim and max_len must be positive".into());
        }
        if self.attn_heads == 0 || !self.d_model.is_multiple_of(self.attn_heads) {
            return fail(format!("d_model {} not divisible by {} attention heads", self.d_model, self.attn_heads));
        }
        if self.latent_positions == 0 || self.quant_heads == 0 {
            return fail("latent_positions and quant_heads must be at least 1".into());
        }
        if !self.latent_len().is_multiple_of(self.quant_heads) {
            return fail(format!(
                "latent of {} values does not split into {} heads",
                self.latent_len(),
                self.quant_heads
            ));
        }
        if self.codebook_size < 2 {
            return fail(format!("codebook_size {} < 2", self.codebook_size));
        }
        if !(self.gate_init > 0.0 && self.gate_init < 1.0) {
            return fail(format!("gate_init {} outside (0, 1)", self.gate_init));
        }
        Ok(())
    }
}
