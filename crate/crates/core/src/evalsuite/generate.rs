use rand::Rng;

use crate::numcore::kernels::log_softmax;
use crate::numcore::Graph;
use crate::seqcoder::{BOS, EOS};
use crate::training::{stream_rng, Model};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DecodeMode {
    Greedy,
    Sample { temperature: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    /// Output tokens without BOS/EOS.
    pub ids: Vec<u32>,
    /// Untempered model log-probability of the output (EOS included when emitted).
    pub log_prob: f64,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Inverse-CDF draw from `softmax(logp / temperature)` with uniform `u`.
fn sample_index(logp: &[f64], temperature: f64, u: f64) -> usize {
    let scaled: Vec<f64> = logp.iter().map(|&l| l / temperature).collect();
    let probs: Vec<f64> = log_softmax(&scaled).into_iter().map(f64::exp).collect();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if acc > u {
            return i;
        }
    }
    // rounding left the total just under u
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Decodes every input of `xs` together. Sampling for input `i` consumes
/// one uniform per position from stream `i` of `seed`, so different
/// temperatures reuse the same random numbers.
pub fn generate_batch(model: &Model, xs: &[&[u32]], mode: DecodeMode, max_len: usize, seed: u64) -> Result<Vec<Generation>> {
    if let DecodeMode::Sample { temperature } = mode {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!("sampling temperature must be positive, got {temperature}")));
        }
    }
    if xs.is_empty() {
        return Ok(Vec::new());
    }
    let (h, d) = (model.config.quant_heads, model.config.d_head());
    let mut memory = Vec::with_capacity(xs.len() * h * d);
    for x in xs {
        memory.extend(model.condition(x)?.data);
    }
    let mut rngs: Vec<_> = (0..xs.len()).map(|i| stream_rng(seed, i as u64)).collect();
    let mut out: Vec<Generation> = vec![Generation { ids: Vec::new(), log_prob: 0.0 }; xs.len()];
    let mut active: Vec<usize> = if max_len == 0 { Vec::new() } else { (0..xs.len()).collect() };
    let v = model.config.vocab_size;
    while !active.is_empty() {
        let prefixes: Vec<Vec<u32>> =
            active.iter().map(|&i| std::iter::once(BOS).chain(out[i].ids.iter().copied()).collect()).collect();
        let refs: Vec<&[u32]> = prefixes.iter().map(Vec::as_slice).collect();
        let mut g = Graph::new(&model.params);
        let mem = g.constant(xs.len() * h, d, memory.clone());
        let logits = model.coder.decode_batch(&mut g, mem, &active, &refs)?;
        let vals = g.value(logits);
        let mut row = 0;
        let mut still = Vec::with_capacity(active.len());
        for (&i, p) in active.iter().zip(&prefixes) {
            row += p.len();
            let logp = log_softmax(&vals[(row - 1) * v..row * v]);
            let next = match mode {
                DecodeMode::Greedy => argmax(&logp),
                DecodeMode::Sample { temperature } => sample_index(&logp, temperature, rngs[i].random::<f64>()),
            };
            out[i].log_prob += logp[next];
            if next as u32 == EOS {
                continue;
            }
            out[i].ids.push(next as u32);
            if out[i].ids.len() < max_len {
                still.push(i);
            }
        }
        active = still;
    }
    Ok(out)
}

pub fn generate(model: &Model, x: &[u32], mode: DecodeMode, max_len: usize, seed: u64) -> Result<Generation> {
    Ok(generate_batch(model, &[x], mode, max_len, seed)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inverse_cdf_sampling() {
        let logp = [0.5f64.ln(), 0.25f64.ln(), 0.25f64.ln()];
        assert_eq!(sample_index(&logp, 1.0, 0.0), 0);
        assert_eq!(sample_index(&logp, 1.0, 0.49), 0);
        assert_eq!(sample_index(&logp, 1.0, 0.51), 1);
        assert_eq!(sample_index(&logp, 1.0, 0.99), 2);
        // near-zero temperature collapses onto the argmax
        assert_eq!(sample_index(&logp, 1e-6, 0.99), 0);
    }
}
