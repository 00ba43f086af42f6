use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Smoothing {
    None,
    /// Orders above 1 with no clipped match count as `1 / (total + 1)`.
    #[default]
    AddOneZeroOrders,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BleuTokenizer {
    #[default]
    Whitespace,
    /// Whitespace split, with punctuation characters split off as tokens.
    Punctuation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BleuConfig {
    pub max_order: usize,
    pub smoothing: Smoothing,
    pub case_fold: bool,
    pub tokenizer: BleuTokenizer,
}

impl Default for BleuConfig {
    fn default() -> Self {
        Self { max_order: 4, smoothing: Smoothing::AddOneZeroOrders, case_fold: false, tokenizer: BleuTokenizer::Whitespace }
    }
}

pub fn bleu_tokenize(text: &str, cfg: &BleuConfig) -> Vec<String> {
    let text = if cfg.case_fold { text.to_lowercase() } else { text.to_string() };
    match cfg.tokenizer {
        BleuTokenizer::Whitespace => text.split_whitespace().map(str::to_string).collect(),
        BleuTokenizer::Punctuation => {
            let mut out = Vec::new();
            for word in text.split_whitespace() {
                let mut cur = String::new();
                for ch in word.chars() {
                    if ch.is_ascii_punctuation() {
                        if !cur.is_empty() {
                            out.push(std::mem::take(&mut cur));
                        }
                        out.push(ch.to_string());
                    } else {
                        cur.push(ch);
                    }
                }
                if !cur.is_empty() {
                    out.push(cur);
                }
            }
            out
        }
    }
}

/// Sentence BLEU in `[0, 100]` against one or more references.
pub fn bleu(candidate: &str, references: &[&str], cfg: &BleuConfig) -> f64 {
    let cand = bleu_tokenize(candidate, cfg);
    let refs: Vec<Vec<String>> = references.iter().map(|r| bleu_tokenize(r, cfg)).collect();
    bleu_tokens(&cand, &refs, cfg)
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU over pre-tokenized input.
pub fn bleu_tokens<S: AsRef<str>>(cand: &[S], refs: &[Vec<S>], cfg: &BleuConfig) -> f64 {
    if cand.is_empty() || refs.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=cfg.max_order.max(1) {
        let mut max_ref: HashMap<Vec<&str>, usize> = HashMap::new();
        for r in refs {
            for (g, c) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        let matches: usize =
            ngram_counts(cand, n).iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        let total = (cand.len() + 1).saturating_sub(n);
        let p = if matches > 0 {
            matches as f64 / total as f64
        } else if n == 1 || cfg.smoothing == Smoothing::None {
            return 0.0;
        } else {
            1.0 / (total as f64 + 1.0)
        };
        log_sum += p.ln();
    }
    let c = cand.len();
    let r = refs.iter().map(|r| r.len()).min_by_key(|&l| (l.abs_diff(c), l)).unwrap_or(0);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    let score = 100.0 * bp * (log_sum / cfg.max_order.max(1) as f64).exp();
    score.clamp(0.0, 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn identity_is_one_hundred() {
        let cfg = BleuConfig::default();
        assert_eq!(bleu("a b c", &["a b c"], &cfg), 100.0);
        assert_eq!(bleu("word", &["word"], &cfg), 100.0);
    }

    #[test]
    fn no_unigram_overlap_is_zero() {
        assert_eq!(bleu("x y z", &["a b c"], &BleuConfig::default()), 0.0);
    }

    #[test]
    fn order_matters() {
        let cfg = BleuConfig::default();
        assert!(bleu("c b a d", &["a b c d"], &cfg) < 100.0);
        let unigram = BleuConfig { max_order: 1, ..cfg };
        assert_eq!(bleu("c b a d", &["a b c d"], &unigram), 100.0);
    }

    #[test]
    fn case_folding_and_punctuation() {
        let cfg = BleuConfig { case_fold: true, tokenizer: BleuTokenizer::Punctuation, ..Default::default() };
        assert_eq!(bleu_tokenize("Hello, World!", &cfg), vec!["hello", ",", "world", "!"]);
        assert_eq!(bleu("The cat, sat.", &["the cat , sat ."], &cfg), 100.0);
        assert!(bleu("The cat", &["the cat"], &BleuConfig::default()) < 100.0);
    }

    #[test]
    fn unsmoothed_zero_order_is_zero() {
        let cfg = BleuConfig { smoothing: Smoothing::None, ..Default::default() };
        assert_eq!(bleu("b a", &["a b"], &cfg), 0.0);
        assert!(bleu("b a", &["a b"], &BleuConfig::default()) > 0.0);
    }

    proptest! {
        #[test]
        fn bounded_and_self_perfect(words in prop::collection::vec("[a-e]", 1..12), other in prop::collection::vec("[a-e]", 1..12)) {
            let cfg = BleuConfig::default();
            let x = words.join(" ");
            let y = other.join(" ");
            prop_assert_eq!(bleu(&x, &[&x], &cfg), 100.0);
            let v = bleu(&x, &[&y], &cfg);
            prop_assert!((0.0..=100.0).contains(&v));
        }
    }
}
