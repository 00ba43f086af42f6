use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Labeled;
use crate::training::stream_rng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NbSvmConfig {
    pub order: usize,
    /// Hinge-loss L2 regularization constant.
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for NbSvmConfig {
    fn default() -> Self {
        Self { order: 3, lambda: 0.1, epochs: 100, seed: 0 }
    }
}

/// One binary separator: log-count ratios `r` and hinge-trained weights
/// over the `r`-scaled indicators (the last weight is the bias).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinaryNbSvm {
    pub r: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NbSvm {
    pub config: NbSvmConfig,
    pub labels: Vec<String>,
    pub ngrams: HashMap<String, usize>,
    /// One separator for two classes (positive = `labels[1]`), else one per label.
    pub models: Vec<BinaryNbSvm>,
}

/// Distinct n-grams of orders `1..=order`, joined by spaces.
pub fn ngram_set(text: &str, order: usize) -> BTreeSet<String> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    let mut out = BTreeSet::new();
    for n in 1..=order {
        for w in toks.windows(n) {
            out.insert(w.join(" "));
        }
    }
    out
}

/// `log((p + 1) / |p + 1|_1) - log((q + 1) / |q + 1|_1)`.
pub fn log_count_ratio(p: &[f64], q: &[f64]) -> Vec<f64> {
    let sp: f64 = p.iter().map(|v| v + 1.0).sum();
    let sq: f64 = q.iter().map(|v| v + 1.0).sum();
    p.iter().zip(q).map(|(a, b)| ((a + 1.0) / sp).ln() - ((b + 1.0) / sq).ln()).collect()
}

fn train_binary(docs: &[Vec<usize>], positive: &[bool], dims: usize, cfg: &NbSvmConfig, stream: u64) -> BinaryNbSvm {
    let mut p = vec![0.0; dims];
    let mut q = vec![0.0; dims];
    for (d, &pos) in docs.iter().zip(positive) {
        let counts = if pos { &mut p } else { &mut q };
        for &j in d {
            counts[j] += 1.0;
        }
    }
    let r = log_count_ratio(&p, &q);
    // w = scale * v keeps the per-step shrinkage O(1)
    let mut v = vec![0.0; dims + 1];
    let mut scale = 1.0;
    let mut order: Vec<usize> = (0..docs.len()).collect();
    let mut rng = stream_rng(cfg.seed, stream);
    let mut t = 0u64;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (cfg.lambda * t as f64);
            let y = if positive[i] { 1.0 } else { -1.0 };
            let margin = y * scale * (v[dims] + docs[i].iter().map(|&j| v[j] * r[j]).sum::<f64>());
            scale *= 1.0 - eta * cfg.lambda;
            if scale.abs() < 1e-9 {
                // the first step zeroes the weights outright
                v.iter_mut().for_each(|x| *x = 0.0);
                scale = 1.0;
            }
            if margin < 1.0 {
                let step = eta * y / scale;
                for &j in &docs[i] {
                    v[j] += step * r[j];
                }
                v[dims] += step;
            }
        }
    }
    BinaryNbSvm { r, weights: v.into_iter().map(|x| x * scale).collect() }
}

impl BinaryNbSvm {
    fn score(&self, doc: &[usize]) -> f64 {
        let dims = self.r.len();
        self.weights[dims] + doc.iter().map(|&j| self.weights[j] * self.r[j]).sum::<f64>()
    }
}

impl NbSvm {
    pub fn fit(corpus: &[Labeled], cfg: &NbSvmConfig) -> Result<Self> {
        if cfg.order == 0 || !(cfg.lambda > 0.0) {
            return Err(Error::Config("NB-SVM needs order >= 1 and lambda > 0".into()));
        }
        let labels: Vec<String> = corpus.iter().map(|e| e.label.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        if labels.len() < 2 {
            return Err(Error::Data(format!("NB-SVM needs two classes, found {}", labels.len())));
        }
        let mut ngrams = HashMap::new();
        let docs: Vec<Vec<usize>> = corpus
            .iter()
            .map(|e| {
                ngram_set(&e.text, cfg.order)
                    .into_iter()
                    .map(|g| {
                        let next = ngrams.len();
                        *ngrams.entry(g).or_insert(next)
                    })
                    .collect()
            })
            .collect();
        let dims = ngrams.len();
        let targets: Vec<&String> = if labels.len() == 2 { vec![&labels[1]] } else { labels.iter().collect() };
        let models = targets
            .iter()
            .enumerate()
            .map(|(k, &l)| {
                let pos: Vec<bool> = corpus.iter().map(|e| &e.label == l).collect();
                train_binary(&docs, &pos, dims, cfg, k as u64)
            })
            .collect();
        Ok(Self { config: *cfg, labels, ngrams, models })
    }

    fn featurize(&self, text: &str) -> Vec<usize> {
        ngram_set(text, self.config.order).iter().filter_map(|g| self.ngrams.get(g).copied()).collect()
    }

    pub fn predict(&self, text: &str) -> &str {
        let doc = self.featurize(text);
        if self.models.len() == 1 {
            let s = self.models[0].score(&doc);
            return if s > 0.0 { &self.labels[1] } else { &self.labels[0] };
        }
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (k, m) in self.models.iter().enumerate() {
            let s = m.score(&doc);
            if s > best_score {
                best = k;
                best_score = s;
            }
        }
        &self.labels[best]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub macro_f1: f64,
}

pub fn evaluate_classifier(model: &NbSvm, test: &[Labeled]) -> Result<ClassificationReport> {
    if test.is_empty() {
        return Err(Error::Empty("test corpus".into()));
    }
    let mut tp: BTreeMap<&str, f64> = BTreeMap::new();
    let mut fp: BTreeMap<&str, f64> = BTreeMap::new();
    let mut fneg: BTreeMap<&str, f64> = BTreeMap::new();
    let mut correct = 0usize;
    for ex in test {
        let pred = model.predict(&ex.text);
        if pred == ex.label {
            correct += 1;
            *tp.entry(pred).or_default() += 1.0;
        } else {
            *fp.entry(pred).or_default() += 1.0;
            *fneg.entry(ex.label.as_str()).or_default() += 1.0;
        }
    }
    let classes: BTreeSet<&str> =
        model.labels.iter().map(String::as_str).chain(test.iter().map(|e| e.label.as_str())).collect();
    let f1s: Vec<f64> = classes
        .iter()
        .map(|c| {
            let t = tp.get(c).copied().unwrap_or(0.0);
            let denom = 2.0 * t + fp.get(c).copied().unwrap_or(0.0) + fneg.get(c).copied().unwrap_or(0.0);
            if denom == 0.0 { 0.0 } else { 2.0 * t / denom }
        })
        .collect();
    Ok(ClassificationReport {
        accuracy: correct as f64 / test.len() as f64,
        macro_f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_ratio() {
        let r = log_count_ratio(&[2.0, 0.0], &[0.0, 2.0]);
        assert!((r[0] - 3f64.ln()).abs() < 1e-12 && (r[1] + 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn duplication_keeps_signs_and_order_of_ratios() {
        let p = [3.0, 0.0, 1.0, 5.0];
        let q = [1.0, 2.0, 1.0, 0.0];
        let r1 = log_count_ratio(&p, &q);
        let r2 = log_count_ratio(&p.map(|v| 2.0 * v), &q.map(|v| 2.0 * v));
        for i in 0..4 {
            assert_eq!(r1[i].partial_cmp(&0.0), r2[i].partial_cmp(&0.0));
            for j in 0..4 {
                assert_eq!(r1[i].partial_cmp(&r1[j]), r2[i].partial_cmp(&r2[j]));
            }
        }
        // add-one smoothing is not invariant to duplication: log 3 becomes log 5
        let a = log_count_ratio(&[2.0, 0.0], &[0.0, 2.0]);
        let b = log_count_ratio(&[4.0, 0.0], &[0.0, 4.0]);
        assert!((b[0] - 5f64.ln()).abs() < 1e-12 && (a[0] - b[0]).abs() > 0.1);
    }

    #[test]
    fn separated_vocabularies() {
        let corpus: Vec<Labeled> =
            (0..6).map(|i| if i % 2 == 0 { Labeled::new("pos", "a") } else { Labeled::new("neg", "b") }).collect();
        let m = NbSvm::fit(&corpus, &NbSvmConfig { order: 1, ..Default::default() }).unwrap();
        assert_eq!(m.labels, vec!["neg", "pos"]);
        let r = &m.models[0].r;
        assert!(r[m.ngrams["a"]] > 0.0 && r[m.ngrams["b"]] < 0.0);
        assert_eq!(evaluate_classifier(&m, &corpus).unwrap().accuracy, 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let corpus = vec![Labeled::new("x", "a b"), Labeled::new("x", "c")];
        assert!(matches!(NbSvm::fit(&corpus, &NbSvmConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn three_classes() {
        let words = ["red", "green", "blue"];
        let corpus: Vec<Labeled> =
            (0..30).map(|i| Labeled::new(words[i % 3], format!("the {} thing {}", words[i % 3], i % 4))).collect();
        let m = NbSvm::fit(&corpus, &NbSvmConfig::default()).unwrap();
        assert_eq!(m.models.len(), 3);
        let rep = evaluate_classifier(&m, &corpus).unwrap();
        assert_eq!((rep.accuracy, rep.macro_f1), (1.0, 1.0));
    }

    #[test]
    fn deterministic() {
        let corpus: Vec<Labeled> = (0..20)
            .map(|i| Labeled::new(if i % 3 == 0 { "a" } else { "b" }, format!("w{} w{} w{}", i % 5, i % 7, i % 3)))
            .collect();
        let cfg = NbSvmConfig::default();
        assert_eq!(NbSvm::fit(&corpus, &cfg).unwrap(), NbSvm::fit(&corpus, &cfg).unwrap());
    }
}
