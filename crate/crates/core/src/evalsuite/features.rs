use serde::{Deserialize, Serialize};

use crate::seqcoder::LatentMatrix;
use crate::training::Model;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeatureMode {
    #[default]
    #[serde(rename = "score-only")]
    ScoreOnly,
    #[serde(rename = "score+latent")]
    ScoreLatent,
}

impl std::str::FromStr for FeatureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "score-only" => Ok(FeatureMode::ScoreOnly),
            "score+latent" => Ok(FeatureMode::ScoreLatent),
            _ => Err(Error::Config(format!("unknown feature mode `{s}`"))),
        }
    }
}

/// Which encoder output feeds the latent features.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentSource {
    #[default]
    PreBottleneck,
    PostBottleneck,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPair {
    pub x: Vec<u32>,
    pub y: Vec<u32>,
    pub log_p_y_given_x: f64,
    pub log_p_x_given_y: f64,
    pub latent_x: LatentMatrix,
    pub latent_y: LatentMatrix,
}

/// Scores a pair in both directions; with `length_normalize` each score is
/// divided by the number of predicted tokens (target length plus EOS).
pub fn score_pair(
    model: &Model,
    x: &[u32],
    y: &[u32],
    length_normalize: bool,
    source: LatentSource,
) -> Result<ScoredPair> {
    let ex = model.latent(x)?;
    let ey = model.latent(y)?;
    let zx = model.bottleneck_latent(&ex)?;
    let zy = model.bottleneck_latent(&ey)?;
    let norm = |lp: f64, len: usize| if length_normalize { lp / (len + 1) as f64 } else { lp };
    let log_p_y_given_x = norm(model.coder.sequence_log_prob(&model.params, &zx, y)?, y.len());
    let log_p_x_given_y = norm(model.coder.sequence_log_prob(&model.params, &zy, x)?, x.len());
    let (latent_x, latent_y) = match source {
        LatentSource::PreBottleneck => (ex, ey),
        LatentSource::PostBottleneck => (zx, zy),
    };
    Ok(ScoredPair { x: x.to_vec(), y: y.to_vec(), log_p_y_given_x, log_p_x_given_y, latent_x, latent_y })
}

/// `[lp(y|x), lp(x|y), sum, |diff|]`, followed in score+latent mode by the
/// cosine of the flattened latents, `|ex - ey|` and `ex * ey`.
pub fn identification_features(pair: &ScoredPair, mode: FeatureMode) -> Vec<f64> {
    let (a, b) = (pair.log_p_y_given_x, pair.log_p_x_given_y);
    let mut f = vec![a, b, a + b, (a - b).abs()];
    if mode == FeatureMode::ScoreLatent {
        let ex = &pair.latent_x.data;
        let ey = &pair.latent_y.data;
        let dot: f64 = ex.iter().zip(ey).map(|(&u, &v)| u as f64 * v as f64).sum();
        let nx: f64 = ex.iter().map(|&u| (u as f64).powi(2)).sum::<f64>().sqrt();
        let ny: f64 = ey.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        f.push(if nx > 0.0 && ny > 0.0 { dot / (nx * ny) } else { 0.0 });
        f.extend(ex.iter().zip(ey).map(|(&u, &v)| (u as f64 - v as f64).abs()));
        f.extend(ex.iter().zip(ey).map(|(&u, &v)| u as f64 * v as f64));
    }
    f
}

pub fn feature_len(mode: FeatureMode, heads: usize, d_head: usize) -> usize {
    match mode {
        FeatureMode::ScoreOnly => 4,
        FeatureMode::ScoreLatent => 4 + 2 * heads * d_head + 1,
    }
}
