use serde::{Deserialize, Serialize};

use super::{bleu, generate_batch, BleuConfig, DecodeMode};
use crate::seqcoder::{TokenSequence, Vocabulary};
use crate::training::Model;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationConfig {
    pub low: f64,
    pub high: f64,
    pub max_iters: usize,
    /// Smallest sample accepted by [`calibrate_model`].
    pub min_sample: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { low: 0.1, high: 3.0, max_iters: 20, min_sample: 50 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub temperature: f64,
    pub overlap: f64,
    /// Bisection steps taken (endpoint evaluations not counted).
    pub iterations: usize,
    pub converged: bool,
}

/// Bisection on `overlap(temperature)` over `[low, high]` toward `target`.
/// The endpoints are evaluated first; a target outside the range they span
/// is reported with that range.
pub fn calibrate_temperature(
    mut overlap: impl FnMut(f64) -> Result<f64>,
    target: f64,
    tolerance: f64,
    cfg: &CalibrationConfig,
) -> Result<Calibration> {
    if !(target > 0.0 && target < 100.0) {
        return Err(Error::Config(format!("target overlap {target} outside (0, 100)")));
    }
    if !(cfg.low > 0.0 && cfg.low < cfg.high) || tolerance < 0.0 {
        return Err(Error::Config("invalid calibration range or tolerance".into()));
    }
    let done = |t: f64, o: f64, iterations, converged| Ok(Calibration { temperature: t, overlap: o, iterations, converged });
    let (mut lo, mut hi) = (cfg.low, cfg.high);
    let f_lo = overlap(lo)?;
    if (f_lo - target).abs() <= tolerance {
        return done(lo, f_lo, 0, true);
    }
    let f_hi = overlap(hi)?;
    if (f_hi - target).abs() <= tolerance {
        return done(hi, f_hi, 0, true);
    }
    let (min, max) = (f_lo.min(f_hi), f_lo.max(f_hi));
    if target < min || target > max {
        return Err(Error::Unreachable { target, low: min, high: max });
    }
    let lo_above = f_lo > target;
    let mut best = if (f_lo - target).abs() <= (f_hi - target).abs() { (lo, f_lo) } else { (hi, f_hi) };
    for it in 1..=cfg.max_iters {
        let mid = 0.5 * (lo + hi);
        let f = overlap(mid)?;
        if (f - target).abs() < (best.1 - target).abs() {
            best = (mid, f);
        }
        if (f - target).abs() <= tolerance {
            return done(mid, f, it, true);
        }
        if (f > target) == lo_above {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    done(best.0, best.1, cfg.max_iters, false)
}

/// Mean sentence BLEU of sampled outputs against their own inputs.
pub fn self_bleu(
    model: &Model,
    vocab: &Vocabulary,
    sample: &[TokenSequence],
    temperature: f64,
    max_len: usize,
    seed: u64,
    bleu_cfg: &BleuConfig,
) -> Result<f64> {
    if sample.is_empty() {
        return Err(Error::Empty("calibration sample".into()));
    }
    let xs: Vec<&[u32]> = sample.iter().map(|s| s.ids.as_slice()).collect();
    let gens = generate_batch(model, &xs, DecodeMode::Sample { temperature }, max_len, seed)?;
    let total: f64 = sample
        .iter()
        .zip(&gens)
        .map(|(x, g)| {
            let out = vocab.decode(&g.ids);
            let input = vocab.decode(&x.ids);
            if out.trim().is_empty() { 0.0 } else { bleu(&out, &[&input], bleu_cfg) }
        })
        .sum();
    Ok(total / sample.len() as f64)
}

/// Calibrates a model's sampling temperature so the mean self-BLEU of
/// `sample` hits `target`.
#[allow(clippy::too_many_arguments)]
pub fn calibrate_model(
    model: &Model,
    vocab: &Vocabulary,
    sample: &[TokenSequence],
    target: f64,
    tolerance: f64,
    max_len: usize,
    seed: u64,
    cfg: &CalibrationConfig,
) -> Result<Calibration> {
    if sample.len() < cfg.min_sample {
        return Err(Error::Data(format!("calibration needs at least {} sentences, got {}", cfg.min_sample, sample.len())));
    }
    let bleu_cfg = BleuConfig::default();
    calibrate_temperature(|t| self_bleu(model, vocab, sample, t, max_len, seed, &bleu_cfg), target, tolerance, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn converges_on_monotone_function() {
        let mut calls = 0;
        let f = |t: f64| {
            calls += 1;
            Ok(60.0 * (-t).exp())
        };
        let c = calibrate_temperature(f, 20.9, 0.01, &CalibrationConfig::default()).unwrap();
        assert!(c.converged && c.iterations <= 20);
        assert!((c.overlap - 20.9).abs() <= 0.01);
        assert!((c.temperature - (60.0f64 / 20.9).ln()).abs() < 1e-3);
        assert!(calls <= 22);
    }

    #[test]
    fn vacuous_tolerance_returns_at_once() {
        let mut calls = 0;
        let c = calibrate_temperature(
            |_| {
                calls += 1;
                Ok(3.0)
            },
            20.9,
            100.0,
            &CalibrationConfig::default(),
        )
        .unwrap();
        assert_eq!((calls, c.iterations), (1, 0));
    }

    #[test]
    fn unreachable_reports_interval() {
        let err = calibrate_temperature(|t| Ok(10.0 - t), 20.9, 0.5, &CalibrationConfig::default()).unwrap_err();
        match err {
            Error::Unreachable { low, high, .. } => {
                assert!((low - 7.0).abs() < 1e-12 && (high - 9.9).abs() < 1e-12);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn increasing_functions_work_too() {
        let c = calibrate_temperature(|t| Ok(10.0 * t), 20.9, 0.05, &CalibrationConfig::default()).unwrap();
        assert!((c.overlap - 20.9).abs() <= 0.05);
    }
}
