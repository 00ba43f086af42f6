//! Evaluation procedures: conditional scoring features, regression fits,
//! ranking against sampled negatives, BLEU, generation, temperature
//! calibration, augmentation and the NB-SVM classifier.

mod augment;
mod bleu;
mod calibrate;
mod features;
mod generate;
mod nbsvm;
mod rank;
mod regression;

pub use augment::{augment_corpus, filter_pairs, Labeled};
pub use bleu::{bleu, bleu_tokenize, bleu_tokens, BleuConfig, BleuTokenizer, Smoothing};
pub use calibrate::{calibrate_model, calibrate_temperature, self_bleu, Calibration, CalibrationConfig};
pub use features::{feature_len, identification_features, score_pair, FeatureMode, LatentSource, ScoredPair};
pub use generate::{generate, generate_batch, DecodeMode, Generation};
pub use nbsvm::{evaluate_classifier, log_count_ratio, ngram_set, BinaryNbSvm, ClassificationReport, NbSvm, NbSvmConfig};
pub use rank::{rank_eval, ModelScorer, PairScorer, RandomScorer, RankTask};
pub use regression::{
    accuracy, cholesky_solve, fit_logistic, fit_ridge, pearson, LinearModel, LogisticConfig,
};
