use serde::{Deserialize, Serialize};

use super::{generate_batch, DecodeMode};
use crate::seqcoder::Vocabulary;
use crate::training::Model;
use crate::{Error, Result};

/// A sentence with its class label.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labeled {
    pub label: String,
    pub text: String,
}

impl Labeled {
    pub fn new(label: impl Into<String>, text: impl Into<String>) -> Self {
        Self { label: label.into(), text: text.into() }
    }
}

/// Keeps pairs whose longer side is less than `ratio` times the shorter one.
pub fn filter_pairs<T: Clone>(pairs: &[(T, T)], len: impl Fn(&T) -> usize, ratio: f64) -> Result<Vec<(T, T)>> {
    if !(ratio > 1.0) {
        return Err(Error::Config(format!("length ratio must exceed 1, got {ratio}")));
    }
    Ok(pairs
        .iter()
        .filter(|(x, y)| {
            let (a, b) = (len(x), len(y));
            let (lo, hi) = (a.min(b), a.max(b));
            lo > 0 && (hi as f64) < ratio * lo as f64
        })
        .cloned()
        .collect())
}

/// Each example followed by a sampled paraphrase carrying the same label.
pub fn augment_corpus(
    model: &Model,
    vocab: &Vocabulary,
    corpus: &[Labeled],
    temperature: f64,
    max_len: usize,
    seed: u64,
) -> Result<Vec<Labeled>> {
    let encoded: Vec<Option<Vec<u32>>> =
        corpus.iter().map(|ex| vocab.encode(&ex.text, Some(model.config.max_len)).ok().map(|s| s.ids)).collect();
    let inputs: Vec<&[u32]> = encoded.iter().flatten().map(Vec::as_slice).collect();
    let mut gens = generate_batch(model, &inputs, DecodeMode::Sample { temperature }, max_len, seed)?.into_iter();
    let mut out = Vec::with_capacity(2 * corpus.len());
    for (ex, enc) in corpus.iter().zip(&encoded) {
        let para = match enc {
            Some(_) => vocab.decode(&gens.next().expect("one generation per encodable input").ids),
            None => String::new(),
        };
        out.push(ex.clone());
        out.push(Labeled { label: ex.label.clone(), text: para });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lens(pairs: &[(usize, usize)], ratio: f64) -> usize {
        filter_pairs(pairs, |&n| n, ratio).unwrap().len()
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(lens(&[(7, 7)], 1.0001), 1);
        assert_eq!(lens(&[(10, 13)], 1.2), 0);
        assert_eq!(lens(&[(10, 11)], 1.2), 1);
        assert_eq!(lens(&[(12, 10)], 1.2), 0);
        assert!(filter_pairs(&[(1usize, 1usize)], |&n| n, 1.0).is_err());
    }
}
