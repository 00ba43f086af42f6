use serde::{Deserialize, Serialize};

use crate::numcore::{AdamConfig, ScheduleConfig};
use crate::quantizer::EmaConfig;
use crate::{Error, Result};

/// Which bottleneck sits between encoder and decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// `z = alpha e + (1 - alpha) q(e)` with a learned `alpha`.
    #[default]
    ResidualVqvae,
    /// Quantized path only (`alpha = 0`).
    PlainVqvae,
    /// Continuous latent, noised inputs, no codebook.
    DnAe,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::ResidualVqvae => "residual-vqvae",
            Variant::PlainVqvae => "plain-vqvae",
            Variant::DnAe => "dn-ae",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "residual-vqvae" => Ok(Variant::ResidualVqvae),
            "plain-vqvae" => Ok(Variant::PlainVqvae),
            "dn-ae" => Ok(Variant::DnAe),
            _ => Err(Error::Config(format!("unknown variant `{s}`"))),
        }
    }
}

/// Override of the residual weight for ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AlphaMode {
    #[default]
    Free,
    Zero,
    One,
}

impl std::str::FromStr for AlphaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "free" => Ok(AlphaMode::Free),
            "0" | "zero" => Ok(AlphaMode::Zero),
            "1" | "one" => Ok(AlphaMode::One),
            _ => Err(Error::Config(format!("--alpha-fixed expects 0, 1 or free, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u64,
    pub schedule: ScheduleConfig,
    pub adam: AdamConfig,
    pub ema: EmaConfig,
    /// Commitment weight on the squared distance summed over the `d_head`
    /// coordinates of each head; 0 disables the term.
    pub beta: f64,
    /// Weight of the `alpha^2` penalty.
    pub lambda: f64,
    pub variant: Variant,
    pub alpha_fixed: AlphaMode,
    pub drop_p: f64,
    pub shuffle_window: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Sentences whose encodings set the scale of the initial codebook.
    pub codebook_init_sentences: usize,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 20,
            steps: 2000,
            schedule: ScheduleConfig { d_model: 64, warmup: 200, scale: 1.0 },
            adam: AdamConfig::default(),
            ema: EmaConfig::default(),
            beta: 0.002,
            lambda: 1.0,
            variant: Variant::ResidualVqvae,
            alpha_fixed: AlphaMode::Free,
            drop_p: 0.1,
            shuffle_window: 3,
            seed: 0,
            clip_norm: 1.0,
            codebook_init_sentences: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.drop_p) {
            return Err(Error::Config(format!("drop_p {} outside [0, 1)", self.drop_p)));
        }
        if self.beta < 0.0 || self.lambda < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.ema.decay > 0.0 && self.ema.decay < 1.0) || !(self.ema.count_floor > 0.0) {
            return Err(Error::Config(format!("invalid EMA settings {:?}", self.ema)));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.variant == Variant::PlainVqvae && self.alpha_fixed == AlphaMode::One {
            return Err(Error::Config("plain-vqvae cannot force alpha to 1".into()));
        }
        Ok(())
    }
}
