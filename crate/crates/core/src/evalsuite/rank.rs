use rand::seq::index::sample;

use crate::training::{stream_rng, Model};
use crate::{Error, Result};

/// Anything that scores candidate continuations `ys` of a source `x`.
pub trait PairScorer {
    fn score_candidates(&self, x: &[u32], ys: &[&[u32]]) -> Result<Vec<f64>>;
}

/// `log P(y | x)` under a trained model, optionally per predicted token.
pub struct ModelScorer<'a> {
    pub model: &'a Model,
    pub length_normalize: bool,
}

impl PairScorer for ModelScorer<'_> {
    fn score_candidates(&self, x: &[u32], ys: &[&[u32]]) -> Result<Vec<f64>> {
        let mut s = self.model.score_many(x, ys)?;
        if self.length_normalize {
            for (v, y) in s.iter_mut().zip(ys) {
                *v /= (y.len() + 1) as f64;
            }
        }
        Ok(s)
    }
}

/// Pseudo-random score in [0, 1) that depends only on `(seed, x, y)`.
pub struct RandomScorer {
    pub seed: u64,
}

fn mix(mut h: u64, v: u64) -> u64 {
    // splitmix64 finalizer over a running hash
    h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(h << 6).wrapping_add(h >> 2);
    h = (h ^ (h >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    h = (h ^ (h >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    h ^ (h >> 31)
}

impl PairScorer for RandomScorer {
    fn score_candidates(&self, x: &[u32], ys: &[&[u32]]) -> Result<Vec<f64>> {
        let hx = x.iter().fold(mix(self.seed, x.len() as u64), |h, &t| mix(h, t as u64));
        Ok(ys
            .iter()
            .map(|y| {
                let h = y.iter().fold(mix(hx, u64::MAX - y.len() as u64), |h, &t| mix(h, t as u64));
                (h >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect())
    }
}

/// A positive pair compared against `negatives` distractors from a pool.
#[derive(Clone, Debug, PartialEq)]
pub struct RankTask {
    pub x: Vec<u32>,
    pub y: Vec<u32>,
    pub negatives: usize,
    pub seed: u64,
}

impl RankTask {
    pub fn new(x: Vec<u32>, y: Vec<u32>, seed: u64) -> Self {
        Self { x, y, negatives: 100, seed }
    }

    /// Pool indices of the distractors: drawn without replacement among
    /// entries equal to neither `x` nor `y`.
    pub fn sample_negatives(&self, pool: &[Vec<u32>]) -> Result<Vec<usize>> {
        let eligible: Vec<usize> = (0..pool.len()).filter(|&i| pool[i] != self.x && pool[i] != self.y).collect();
        if eligible.len() < self.negatives {
            return Err(Error::Data(format!(
                "distractor pool too small: {} eligible sentences for {} negatives",
                eligible.len(),
                self.negatives
            )));
        }
        let mut rng = stream_rng(self.seed, 0);
        Ok(sample(&mut rng, eligible.len(), self.negatives).into_iter().map(|i| eligible[i]).collect())
    }
}

/// Fraction of (positive, negative) comparisons where the positive scores
/// strictly higher; ties count as failures.
pub fn rank_eval(scorer: &dyn PairScorer, tasks: &[RankTask], pool: &[Vec<u32>]) -> Result<f64> {
    if tasks.is_empty() {
        return Err(Error::Empty("ranking tasks".into()));
    }
    let mut wins = 0usize;
    let mut comparisons = 0usize;
    for t in tasks {
        let neg = t.sample_negatives(pool)?;
        let mut cands: Vec<&[u32]> = Vec::with_capacity(neg.len() + 1);
        cands.push(&t.y);
        cands.extend(neg.iter().map(|&i| pool[i].as_slice()));
        let s = scorer.score_candidates(&t.x, &cands)?;
        wins += s[1..].iter().filter(|&&n| s[0] > n).count();
        comparisons += neg.len();
    }
    Ok(if comparisons == 0 { 0.0 } else { wins as f64 / comparisons as f64 })
}
