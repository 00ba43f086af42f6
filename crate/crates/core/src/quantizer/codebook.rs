use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numcore::Real;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmaConfig {
    pub decay: f64,
    pub count_floor: f64,
    /// Decay accumulators even when a batch assigns nothing.
    pub decay_on_empty: bool,
    /// Codes idle for this many updates are reseeded from recent inputs.
    pub dead_code_steps: u64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        Self { decay: 0.99, count_floor: 1e-3, decay_on_empty: false, dead_code_steps: 1000 }
    }
}

/// `K` code vectors of dimension `dim`, shared by every quantizer head,
/// with exponential-moving-average count and sum accumulators.
#[derive(Debug)]
pub struct Codebook {
    size: usize,
    dim: usize,
    codes: Vec<f32>,
    counts: Vec<f32>,
    sums: Vec<f32>,
    idle: Vec<u64>,
    ema: EmaConfig,
    lookups: AtomicU64,
}

impl Clone for Codebook {
    fn clone(&self) -> Self {
        Self {
            size: self.size,
            dim: self.dim,
            codes: self.codes.clone(),
            counts: self.counts.clone(),
            sums: self.sums.clone(),
            idle: self.idle.clone(),
            ema: self.ema,
            lookups: AtomicU64::new(self.lookups()),
        }
    }
}

impl PartialEq for Codebook {
    fn eq(&self, o: &Self) -> bool {
        self.size == o.size
            && self.dim == o.dim
            && self.codes == o.codes
            && self.counts == o.counts
            && self.sums == o.sums
            && self.idle == o.idle
            && self.ema == o.ema
    }
}

impl Codebook {
    /// Codes given row-major; accumulators start empty (no history).
    pub fn new(size: usize, dim: usize, codes: Vec<f32>, ema: EmaConfig) -> Result<Self> {
        if size == 0 || dim == 0 || codes.len() != size * dim {
            return Err(Error::Shape(format!("{} values for a {size}x{dim} codebook", codes.len())));
        }
        if !(ema.decay > 0.0 && ema.decay < 1.0) || ema.count_floor <= 0.0 {
            return Err(Error::Config(format!("invalid EMA settings {ema:?}")));
        }
        Ok(Self {
            size,
            dim,
            codes,
            counts: vec![0.0; size],
            sums: vec![0.0; size * dim],
            idle: vec![0; size],
            ema,
            lookups: AtomicU64::new(0),
        })
    }

    pub fn gaussian<R: Rng>(size: usize, dim: usize, std: f64, ema: EmaConfig, rng: &mut R) -> Result<Self> {
        let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
        Self::new(size, dim, (0..size * dim).map(|_| dist.sample(rng) as f32).collect(), ema)
    }

    /// Restores a codebook including its accumulators.
    pub fn from_state(
        size: usize,
        dim: usize,
        codes: Vec<f32>,
        counts: Vec<f32>,
        sums: Vec<f32>,
        idle: Vec<u64>,
        ema: EmaConfig,
    ) -> Result<Self> {
        let mut cb = Self::new(size, dim, codes, ema)?;
        if counts.len() != size || sums.len() != size * dim || idle.len() != size {
            return Err(Error::Shape("codebook accumulator sizes".into()));
        }
        cb.counts = counts;
        cb.sums = sums;
        cb.idle = idle;
        Ok(cb)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ema(&self) -> &EmaConfig {
        &self.ema
    }

    pub fn code(&self, i: usize) -> &[f32] {
        &self.codes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn codes(&self) -> &[f32] {
        &self.codes
    }

    pub fn counts(&self) -> &[f32] {
        &self.counts
    }

    pub fn sums(&self) -> &[f32] {
        &self.sums
    }

    pub fn idle(&self) -> &[u64] {
        &self.idle
    }

    /// Number of vectors quantized through [`Codebook::lookup`] so far.
    pub fn lookups(&self) -> u64 {
        self.lookups.load(Ordering::Relaxed)
    }

    /// Index of the nearest code in squared Euclidean distance, lowest index on ties.
    pub fn nearest_code<T: Real>(&self, e: &[T]) -> (usize, f64) {
        assert_eq!(e.len(), self.dim, "head vector dimension");
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.codes.chunks(self.dim).enumerate() {
            let mut d = 0.0;
            for (&x, &y) in e.iter().zip(c) {
                let diff = x.wide() - y as f64;
                d += diff * diff;
            }
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// [`Codebook::nearest_code`] for each row of `rows`, counted as quantizer use.
    pub fn lookup<T: Real>(&self, rows: &[T]) -> Vec<(usize, f64)> {
        let out: Vec<_> = rows.chunks(self.dim).map(|r| self.nearest_code(r)).collect();
        self.lookups.fetch_add(out.len() as u64, Ordering::Relaxed);
        out
    }

    /// One EMA step over `(code index, assigned vector)` pairs.
    pub fn ema_update(&mut self, assignments: &[(usize, &[f32])]) -> Result<()> {
        if let Some((_, e)) = assignments.iter().find(|(_, e)| e.len() != self.dim) {
            return Err(Error::Shape(format!("assigned vector of dimension {}, codebook has {}", e.len(), self.dim)));
        }
        if let Some((i, _)) = assignments.iter().find(|(i, _)| *i >= self.size) {
            return Err(Error::Shape(format!("code index {i} out of {}", self.size)));
        }
        if assignments.is_empty() && !self.ema.decay_on_empty {
            return Ok(());
        }
        let dim = self.dim;
        let mut n = vec![0f64; self.size];
        let mut s = vec![0f64; self.size * dim];
        for &(i, e) in assignments {
            n[i] += 1.0;
            for (acc, &x) in s[i * dim..(i + 1) * dim].iter_mut().zip(e) {
                *acc += x as f64;
            }
        }
        let g = self.ema.decay;
        for i in 0..self.size {
            let fresh = n[i] > 0.0;
            if fresh {
                self.idle[i] = 0;
            } else {
                self.idle[i] += 1;
            }
            if !fresh && self.counts[i] == 0.0 {
                continue;
            }
            let count = g * self.counts[i] as f64 + (1.0 - g) * n[i];
            self.counts[i] = count as f32;
            let denom = count.max(self.ema.count_floor);
            for j in i * dim..(i + 1) * dim {
                let m = g * self.sums[j] as f64 + (1.0 - g) * s[j];
                self.sums[j] = m as f32;
                self.codes[j] = (m / denom) as f32;
            }
        }
        Ok(())
    }

    /// Replaces codes idle for at least `dead_code_steps` updates with random
    /// vectors from `recent`; returns the reseeded indices.
    pub fn reseed_dead<R: Rng>(&mut self, recent: &[&[f32]], rng: &mut R) -> Vec<usize> {
        if recent.is_empty() {
            return Vec::new();
        }
        let mut reseeded = Vec::new();
        for i in 0..self.size {
            if self.idle[i] >= self.ema.dead_code_steps {
                let src = recent[rng.random_range(0..recent.len())];
                self.codes[i * self.dim..(i + 1) * self.dim].copy_from_slice(src);
                self.sums[i * self.dim..(i + 1) * self.dim].iter_mut().for_each(|v| *v = 0.0);
                self.counts[i] = 0.0;
                self.idle[i] = 0;
                reseeded.push(i);
            }
        }
        if !reseeded.is_empty() {
            log::info!("reseeded {} dead codes", reseeded.len());
        }
        reseeded
    }
}

/// Entropy (nats) of the empirical distribution of code indices.
pub fn usage_entropy(indices: &[usize]) -> f64 {
    if indices.is_empty() {
        return 0.0;
    }
    let mut counts = std::collections::BTreeMap::new();
    for &i in indices {
        *counts.entry(i).or_insert(0usize) += 1;
    }
    let n = indices.len() as f64;
    counts.values().map(|&c| c as f64 / n).map(|p| -p * p.ln()).sum::<f64>().max(0.0)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn two_codes() -> Codebook {
        Codebook::new(2, 2, vec![0.0, 0.0, 1.0, 0.0], EmaConfig::default()).unwrap()
    }

    #[test]
    fn nearest_code_examples() {
        let cb = two_codes();
        let (i, d) = cb.nearest_code(&[0.9f32, 0.1]);
        assert_eq!(i, 1);
        assert!((d - 0.02).abs() < 1e-6);
        assert_eq!(cb.nearest_code(&[0.0f32, 0.0]), (0, 0.0));
        assert_eq!(cb.nearest_code(&[0.5f32, 0.0]).0, 0);
    }

    #[test]
    fn ema_hand_example() {
        let mut cb = Codebook::from_state(
            1,
            2,
            vec![1.0, 0.0],
            vec![1.0],
            vec![1.0, 0.0],
            vec![0],
            EmaConfig { decay: 0.9, ..Default::default() },
        )
        .unwrap();
        cb.ema_update(&[(0, &[0.0, 0.0]), (0, &[0.0, 2.0])]).unwrap();
        assert!((cb.counts()[0] - 1.1).abs() < 1e-6);
        assert!((cb.sums()[0] - 0.9).abs() < 1e-6 && (cb.sums()[1] - 0.2).abs() < 1e-6);
        assert!((cb.code(0)[0] - 0.8182).abs() < 1e-4 && (cb.code(0)[1] - 0.1818).abs() < 1e-4);
    }

    #[test]
    fn empty_batch_changes_nothing_by_default() {
        let mut cb = two_codes();
        cb.ema_update(&[(1, &[2.0, 2.0])]).unwrap();
        let before = cb.clone();
        cb.ema_update(&[]).unwrap();
        assert_eq!(cb, before);

        let mut decaying = before.clone();
        decaying.ema.decay_on_empty = true;
        decaying.ema_update(&[]).unwrap();
        assert!(decaying.counts()[1] < before.counts()[1]);
        assert_eq!(decaying.code(0), before.code(0));
    }

    #[test]
    fn unused_codes_without_history_stay_put() {
        let mut cb = two_codes();
        cb.ema_update(&[(1, &[3.0, 1.0])]).unwrap();
        assert_eq!(cb.code(0), &[0.0, 0.0]);
        // first update with empty history lands exactly on the batch mean
        assert!((cb.code(1)[0] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut cb = two_codes();
        assert!(cb.ema_update(&[(0, &[1.0, 2.0, 3.0])]).is_err());
    }

    #[test]
    fn dead_codes_are_reseeded_from_recent_inputs() {
        let ema = EmaConfig { dead_code_steps: 3, ..Default::default() };
        let mut cb = Codebook::new(2, 2, vec![0.0, 0.0, 9.0, 9.0], ema).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..3 {
            cb.ema_update(&[(0, &[0.1, 0.1])]).unwrap();
        }
        let recent: [&[f32]; 1] = [&[0.5, -0.5]];
        assert_eq!(cb.reseed_dead(&recent, &mut rng), vec![1]);
        assert_eq!(cb.code(1), &[0.5, -0.5]);
        assert_eq!(cb.idle()[1], 0);
    }

    #[test]
    fn usage_entropy_bounds() {
        assert_eq!(usage_entropy(&[3, 3, 3]), 0.0);
        assert!((usage_entropy(&[0, 1, 2, 3]) - 4f64.ln()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn counts_and_codes_stay_consistent(batches in prop::collection::vec(
            prop::collection::vec((0usize..4, -5.0f32..5.0, -5.0f32..5.0), 0..6), 1..20)) {
            let mut cb = Codebook::new(4, 2, vec![0.0; 8], EmaConfig::default()).unwrap();
            for b in &batches {
                let vecs: Vec<[f32; 2]> = b.iter().map(|&(_, x, y)| [x, y]).collect();
                let asg: Vec<(usize, &[f32])> = b.iter().zip(&vecs).map(|(&(i, _, _), v)| (i, &v[..])).collect();
                cb.ema_update(&asg).unwrap();
            }
            for i in 0..4 {
                let n = cb.counts()[i];
                prop_assert!(n >= 0.0);
                if n as f64 >= cb.ema().count_floor {
                    for j in 0..2 {
                        let want = cb.sums()[i * 2 + j] / n;
                        prop_assert!((cb.code(i)[j] - want).abs() <= 1e-5 * (1.0 + want.abs()));
                    }
                }
                // codes are weighted averages of bounded inputs
                prop_assert!(cb.code(i).iter().all(|v| v.abs() <= 5.0 + 1e-3));
            }
        }

        #[test]
        fn nearest_code_is_the_brute_force_argmin(
            codes in prop::collection::vec(-2.0f32..2.0, 3 * 5),
            e in prop::collection::vec(-2.0f32..2.0, 3),
        ) {
            let cb = Codebook::new(5, 3, codes.clone(), EmaConfig::default()).unwrap();
            let dists: Vec<f64> = codes.chunks(3)
                .map(|c| c.iter().zip(&e).map(|(a, b)| ((*a as f64) - (*b as f64)).powi(2)).sum())
                .collect();
            let min = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let want = dists.iter().position(|&d| d == min).unwrap();
            prop_assert_eq!(cb.nearest_code(&e).0, want);
        }
    }
}
