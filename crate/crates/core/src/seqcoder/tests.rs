use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::ParamStore;

fn tiny() -> (SeqCoder, ParamStore<f32>) {
    let cfg = ModelConfig {
        vocab_size: 12,
        d_model: 16,
        layers: 2,
        attn_heads: 2,
        ffn_dim: 32,
        latent_positions: 2,
        quant_heads: 4,
        codebook_size: 8,
        max_len: 10,
        ..Default::default()
    };
    let mut store = ParamStore::new();
    let coder = SeqCoder::init(&cfg, &mut store, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    (coder, store)
}

#[test]
fn encoding_is_deterministic_and_fixed_size() {
    let (c, p) = tiny();
    for len in 1..=10 {
        let x: Vec<u32> = (0..len).map(|i| 4 + (i as u32 % 8)).collect();
        let a = c.encode(&p, &x).unwrap();
        assert_eq!(a.data.len(), 4 * c.config().d_head());
        assert_eq!(a, c.encode(&p, &x).unwrap());
        assert!(a.is_finite());
    }
}

#[test]
fn encoder_sees_content_and_order() {
    let (c, p) = tiny();
    let base = c.encode(&p, &[4, 5, 6, 7]).unwrap();
    assert_ne!(base, c.encode(&p, &[4, 5, 9, 7]).unwrap());
    assert_ne!(base, c.encode(&p, &[5, 4, 6, 7]).unwrap());
}

#[test]
fn empty_input_is_rejected() {
    let (c, p) = tiny();
    assert!(c.encode(&p, &[]).is_err());
    let z = c.encode(&p, &[4]).unwrap();
    assert!(c.sequence_log_prob(&p, &z, &[]).is_err());
}

#[test]
fn decoder_distributions_are_normalized_and_bounded() {
    let (c, p) = tiny();
    let z = c.encode(&p, &[4, 8, 9]).unwrap();
    let dists = c.decode_distributions(&p, &z, &[BOS, 5, 6, 11]).unwrap();
    assert_eq!(dists.len(), 4);
    for d in &dists {
        assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-5);
        let h: f64 = d.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum();
        assert!(h <= (12f64).ln() + 1e-9);
    }
}

#[test]
fn decoder_is_causal() {
    let (c, p) = tiny();
    let z = c.encode(&p, &[4, 8, 9]).unwrap();
    let short = c.decode_distributions(&p, &z, &[BOS, 5, 6]).unwrap();
    let long = c.decode_distributions(&p, &z, &[BOS, 5, 6, 7]).unwrap();
    assert_eq!(short[..], long[..3]);
    let edited = c.decode_distributions(&p, &z, &[BOS, 5, 10, 7]).unwrap();
    assert_eq!(long[..2], edited[..2]);
    assert_ne!(long[2], edited[2]);
}

#[test]
fn prefix_without_bos_is_an_error() {
    let (c, p) = tiny();
    let z = c.encode(&p, &[4]).unwrap();
    assert!(matches!(c.decode_step(&p, &z, &[5, 6]), Err(crate::Error::Contract(_))));
}

#[test]
fn uniform_output_layer_gives_uniform_factorization() {
    let (c, mut p) = tiny();
    let (w, b) = c.output_layer();
    p.get_mut(w).data_mut().iter_mut().for_each(|v| *v = 0.0);
    p.get_mut(b).data_mut().iter_mut().for_each(|v| *v = 0.0);
    let z = c.encode(&p, &[4, 5]).unwrap();
    let y = [6, 7, 8];
    let lp = c.sequence_log_prob(&p, &z, &y).unwrap();
    assert!((lp + 4.0 * (12f64).ln()).abs() < 1e-9, "{lp}");
}

#[test]
fn log_probabilities_are_non_positive_and_unknown_ids_map_to_unk() {
    let (c, p) = tiny();
    let z = c.encode(&p, &[4, 5]).unwrap();
    for y in [&[4u32][..], &[5, 6, 7, 8, 9], &[11, 11, 11]] {
        assert!(c.sequence_log_prob(&p, &z, y).unwrap() <= 0.0);
    }
    let unk = c.sequence_log_prob(&p, &z, &[UNK, 4]).unwrap();
    assert_eq!(unk, c.sequence_log_prob(&p, &z, &[999, 4]).unwrap());
}

#[test]
fn batched_scores_match_single_scores() {
    let (c, p) = tiny();
    let z = c.encode(&p, &[4, 5, 6]).unwrap();
    let ys: [&[u32]; 3] = [&[4, 5], &[9], &[6, 6, 7, 10]];
    let batch = c.sequence_log_probs(&p, &z, &ys).unwrap();
    for (y, b) in ys.iter().zip(&batch) {
        assert_eq!(*b, c.sequence_log_prob(&p, &z, y).unwrap());
    }
}

#[test]
fn attach_resolves_the_same_parameters() {
    let (c, p) = tiny();
    let again = SeqCoder::attach(c.config(), &p).unwrap();
    let x = [4, 7, 9];
    assert_eq!(c.encode(&p, &x).unwrap(), again.encode(&p, &x).unwrap());
    let mut bad = c.config().clone();
    bad.ffn_dim = 64;
    assert!(SeqCoder::attach(&bad, &p).is_err());
}
