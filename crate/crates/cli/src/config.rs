use std::path::Path;

use anyhow::{Context, Result};
use monopara::evalsuite::{CalibrationConfig, FeatureMode, LatentSource, LogisticConfig, NbSvmConfig};
use monopara::seqcoder::{ModelConfig, TokenizerKind};
use monopara::training::{AlphaMode, TrainConfig, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VocabConfig {
    pub tokenizer: TokenizerKind,
    pub min_count: usize,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self { tokenizer: TokenizerKind::Word, min_count: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub negatives: usize,
    /// Sampling temperature; absent means greedy decoding.
    pub temperature: Option<f64>,
    pub target_bleu: f64,
    pub tolerance: f64,
    /// Drops generations whose length ratio to the input is not below this.
    pub max_len_ratio: Option<f64>,
    pub features: FeatureMode,
    pub latent_source: LatentSource,
    pub length_normalize: bool,
    pub ridge_l2: f64,
    pub logistic: LogisticConfig,
    pub calibration: CalibrationConfig,
    pub nbsvm: NbSvmConfig,
    /// Longest generated output, in tokens.
    pub max_output_len: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            negatives: 100,
            temperature: None,
            target_bleu: 20.9,
            tolerance: 0.5,
            max_len_ratio: None,
            features: FeatureMode::ScoreOnly,
            latent_source: LatentSource::PreBottleneck,
            length_normalize: false,
            ridge_l2: 1e-3,
            logistic: LogisticConfig::default(),
            calibration: CalibrationConfig::default(),
            nbsvm: NbSvmConfig::default(),
            max_output_len: 32,
        }
    }
}

/// Effective configuration of a run: defaults, then the config file, then
/// command-line overrides.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub vocab: VocabConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub alpha_fixed: Option<AlphaMode>,
    pub steps: Option<u64>,
    pub temperature: Option<f64>,
    pub target_bleu: Option<f64>,
    pub tolerance: Option<f64>,
    pub max_len_ratio: Option<f64>,
    pub features: Option<FeatureMode>,
    pub length_normalize: bool,
    pub negatives: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).context("parsing config")
    }

    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(v) = o.variant {
            self.train.variant = v;
        }
        if let Some(a) = o.alpha_fixed {
            self.train.alpha_fixed = a;
        }
        if let Some(s) = o.steps {
            self.train.steps = s;
        }
        if let Some(t) = o.temperature {
            self.eval.temperature = Some(t);
        }
        if let Some(t) = o.target_bleu {
            self.eval.target_bleu = t;
        }
        if let Some(t) = o.tolerance {
            self.eval.tolerance = t;
        }
        if let Some(r) = o.max_len_ratio {
            self.eval.max_len_ratio = Some(r);
        }
        if let Some(f) = o.features {
            self.eval.features = f;
        }
        if o.length_normalize {
            self.eval.length_normalize = true;
        }
        if let Some(n) = o.negatives {
            self.eval.negatives = n;
        }
        // the run seed drives training and every evaluation
        self.train.seed = self.seed;
        self.eval.nbsvm.seed = self.seed;
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Provenance line written at the top of every report.
    pub fn header(&self) -> String {
        format!("config_hash={} seed={}", self.hash(), self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_precedence() {
        let text = "seed = 3\n[train]\nsteps = 50\nvariant = \"plain-vqvae\"\n[model]\nd_model = 32\n";
        let mut cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!((cfg.seed, cfg.train.steps, cfg.model.d_model), (3, 50, 32));
        assert_eq!(cfg.train.variant, Variant::PlainVqvae);
        assert_eq!(cfg.model.layers, ModelConfig::default().layers);
        cfg.apply(&Overrides { seed: Some(9), variant: Some(Variant::DnAe), ..Default::default() });
        assert_eq!((cfg.seed, cfg.train.seed, cfg.train.variant), (9, 9, Variant::DnAe));
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.eval.negatives = 50;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }

    #[test]
    fn unknown_keys_are_rejected_by_type() {
        assert!(RunConfig::from_toml("[train]\nsteps = \"many\"\n").is_err());
    }
}
