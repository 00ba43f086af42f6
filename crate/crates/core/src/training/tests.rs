use super::*;
use crate::numcore::{finite_difference_check, GradCheckConfig, Graph};
use crate::quantizer::quantize_combine;
use crate::seqcoder::{LatentMatrix, LatentStage, ModelConfig, TokenSequence, TokenizerKind, Vocabulary};

const LINES: [&str; 6] = [
    "the cat sat on the mat",
    "a dog ran home",
    "the dog sat down",
    "birds fly south in winter",
    "a cat ran up the tree",
    "we sat in the sun",
];

fn corpus() -> (Vocabulary, Vec<TokenSequence>) {
    let vocab = Vocabulary::build(LINES.iter().copied(), TokenizerKind::Word, 1).unwrap();
    let seqs = LINES.iter().map(|l| vocab.encode(l, Some(12)).unwrap()).collect();
    (vocab, seqs)
}

fn tiny(vocab: &Vocabulary) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        d_model: 8,
        layers: 1,
        attn_heads: 2,
        ffn_dim: 16,
        latent_positions: 2,
        quant_heads: 2,
        codebook_size: 8,
        max_len: 12,
        ..Default::default()
    }
}

fn trainer(variant: Variant, alpha: AlphaMode) -> (Trainer, Vec<TokenSequence>) {
    let (vocab, seqs) = corpus();
    let cfg = TrainConfig {
        batch_size: 3,
        variant,
        alpha_fixed: alpha,
        codebook_init_sentences: 6,
        seed: 11,
        ..Default::default()
    };
    (Trainer::new(tiny(&vocab), cfg, &seqs).unwrap(), seqs)
}

#[test]
fn loss_terms_add_up() {
    let (mut t, seqs) = trainer(Variant::ResidualVqvae, AlphaMode::Free);
    for _ in 0..3 {
        let r = t.step_corpus(&seqs).unwrap();
        assert!((r.total - (r.nll + r.commit + r.penalty)).abs() < 1e-6, "{r:?}");
        assert!(r.commit > 0.0 && r.penalty > 0.0);
        assert!(r.usage_entropy <= (8f64).ln() + 1e-12);
    }
}

#[test]
fn plain_vqvae_holds_alpha_at_zero() {
    let (mut t, seqs) = trainer(Variant::PlainVqvae, AlphaMode::Free);
    let r = t.step_corpus(&seqs).unwrap();
    assert_eq!(t.model.alpha(), vec![0.0]);
    assert_eq!((r.alpha, r.penalty), (0.0, 0.0));
}

#[test]
fn identical_seeds_give_identical_parameters() {
    let run = || {
        let (mut t, seqs) = trainer(Variant::ResidualVqvae, AlphaMode::Free);
        for _ in 0..4 {
            t.step_corpus(&seqs).unwrap();
        }
        t
    };
    let (a, b) = (run(), run());
    for ((_, name, x), (_, _, y)) in a.model.params.iter().zip(b.model.params.iter()) {
        let xb: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(xb, yb, "{name}");
    }
    assert_eq!(a.model.codebook.codes(), b.model.codebook.codes());
}

#[test]
fn denoising_baseline_never_touches_the_codebook() {
    let (mut t, seqs) = trainer(Variant::DnAe, AlphaMode::Free);
    let before = t.model.codebook.codes().to_vec();
    for _ in 0..3 {
        let r = t.step_corpus(&seqs).unwrap();
        assert_eq!(r.commit, 0.0);
    }
    assert_eq!(t.model.codebook.lookups(), 0);
    assert_eq!(t.model.codebook.codes(), before.as_slice());
}

#[test]
fn batches_cover_each_epoch_once() {
    let (t, _) = trainer(Variant::ResidualVqvae, AlphaMode::Free);
    let n = 7;
    // batch 3 over 7 sentences: 7 steps span exactly 3 epochs
    let stream: Vec<usize> = (1..=7).flat_map(|s| t.batch_indices(s, n)).collect();
    for epoch in stream.chunks(n) {
        let mut e = epoch.to_vec();
        e.sort_unstable();
        assert_eq!(e, (0..n).collect::<Vec<_>>());
    }
    assert_ne!(&stream[..n], &stream[n..2 * n]);
}

#[test]
fn forced_one_matches_the_bypass_exactly() {
    let (t, seqs) = trainer(Variant::ResidualVqvae, AlphaMode::One);
    let mut bypass = t.model.clone();
    bypass.variant = Variant::DnAe;
    assert_eq!(bypass.bottleneck(), Bottleneck::Bypass);
    let ys: Vec<&[u32]> = seqs.iter().map(|s| s.ids.as_slice()).collect();
    for s in &seqs {
        let a = t.model.score_many(&s.ids, &ys).unwrap();
        let b = bypass.score_many(&s.ids, &ys).unwrap();
        assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
    let nll = |m: &Model| {
        let mut g = Graph::new(&m.params);
        let f = m.forward_loss(&mut g, &ys, &ys, 0.0).unwrap();
        g.scalar(f.nll)
    };
    assert_eq!(nll(&t.model).to_bits(), nll(&bypass).to_bits());
}

#[test]
fn forced_zero_decodes_from_codes_alone() {
    let (t, seqs) = trainer(Variant::ResidualVqvae, AlphaMode::Zero);
    let m = &t.model;
    for s in &seqs {
        let e = m.latent(&s.ids).unwrap();
        let idx: Vec<usize> = (0..e.heads).map(|h| m.codebook.nearest_code(e.row(h)).0).collect();
        let codes: Vec<f32> = idx.iter().flat_map(|&i| m.codebook.code(i).to_vec()).collect();
        let manual = LatentMatrix::new(e.heads, e.dim, codes, LatentStage::Post);
        assert_eq!(m.condition(&s.ids).unwrap(), manual);
        assert_eq!(quantize_combine(&e, &m.codebook, &[0.0]).unwrap().0, manual);
        let want = m.coder.sequence_log_prob(&m.params, &manual, &s.ids).unwrap();
        assert_eq!(m.score(&s.ids, &s.ids).unwrap().to_bits(), want.to_bits());
    }
}

#[test]
fn full_loss_gradient_at_alpha_one() {
    let (t, seqs) = trainer(Variant::ResidualVqvae, AlphaMode::One);
    let mut m = t.model.cast::<f64>().unwrap();
    let xs: Vec<&[u32]> = seqs[..2].iter().map(|s| s.ids.as_slice()).collect();
    let model = m.clone();
    let cfg = GradCheckConfig { epsilon: 1e-4, max_coords_per_tensor: 6, seed: 3 };
    let report = finite_difference_check(&mut m.params, &cfg, |g| {
        Ok(model.forward_loss(g, &xs, &xs, 0.25)?.total)
    })
    .unwrap();
    assert!(report.coordinates >= 100, "{}", report.coordinates);
    assert!(report.max_rel_error <= 1e-2, "{:?}", report.worst);
}

#[test]
fn non_finite_loss_names_the_sentence() {
    let (mut t, seqs) = trainer(Variant::ResidualVqvae, AlphaMode::Free);
    let id = t.model.params.id("dec.out.w").unwrap();
    t.model.params.get_mut(id).data_mut()[0] = f32::NAN;
    let batch: Vec<&TokenSequence> = seqs[..2].iter().collect();
    let err = t.train_step(&batch).unwrap_err().to_string();
    assert!(err.contains("sentence 0"), "{err}");
    assert_eq!(t.step, 0);
}
