use rand::Rng;

use super::{AlphaMode, Variant};
use crate::numcore::{Gate, Graph, ParamStore, Real, Var};
use crate::quantizer::{
    commitment_graph, quantize_combine, quantize_graph, Codebook, EmaConfig, GateMode, ResidualGate,
};
use crate::seqcoder::{LatentMatrix, LatentStage, ModelConfig, SeqCoder, BOS};
use crate::{Error, Result};

/// Encoder, bottleneck and decoder with their parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Real = f32> {
    pub config: ModelConfig,
    pub variant: Variant,
    pub alpha_mode: AlphaMode,
    pub params: ParamStore<T>,
    pub coder: SeqCoder,
    pub gate: ResidualGate,
    pub codebook: Codebook,
}

/// What the decoder sees of the encoder output.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Bottleneck {
    Gated(GateMode),
    /// Continuous latent passed through untouched; the codebook is never consulted.
    Bypass,
}

/// Graph handles of one training forward pass.
#[derive(Debug)]
pub struct ForwardLoss {
    pub total: Var,
    /// Mean negative log-likelihood per target token (EOS included).
    pub nll: Var,
    pub commit: Option<Var>,
    pub penalty: Option<Var>,
    pub tokens: usize,
    /// Pre-bottleneck latent, `batch * H` rows.
    pub latent: Var,
    /// Code index per latent row (empty for the bypass).
    pub assignments: Vec<usize>,
}

pub fn gate_mode(variant: Variant, alpha: AlphaMode) -> Bottleneck {
    match (variant, alpha) {
        (Variant::DnAe, _) => Bottleneck::Bypass,
        (Variant::PlainVqvae, _) | (_, AlphaMode::Zero) => Bottleneck::Gated(GateMode::Fixed(0.0)),
        (_, AlphaMode::One) => Bottleneck::Gated(GateMode::Fixed(1.0)),
        (Variant::ResidualVqvae, AlphaMode::Free) => Bottleneck::Gated(GateMode::Learned),
    }
}

impl Model<f32> {
    /// Fresh model; the codebook starts as unit Gaussian draws until
    /// [`Model::rescale_codebook`] is called.
    pub fn new<R: Rng>(
        config: ModelConfig,
        variant: Variant,
        alpha_mode: AlphaMode,
        penalty_weight: f64,
        ema: EmaConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let coder = SeqCoder::init(&config, &mut params, rng)?;
        let logit = ResidualGate::init(&mut params, config.per_head_gate, config.quant_heads, config.gate_init)?;
        let mode = match gate_mode(variant, alpha_mode) {
            Bottleneck::Gated(m) => m,
            Bottleneck::Bypass => GateMode::Fixed(1.0),
        };
        let gate = ResidualGate { logit, penalty_weight, mode };
        let codebook = Codebook::gaussian(config.codebook_size, config.d_head(), 1.0, ema, rng)?;
        Ok(Self { config, variant, alpha_mode, params, coder, gate, codebook })
    }

    /// Redraws the codebook from a zero-mean Gaussian whose vectors have the
    /// RMS norm of the encodings of `sample`.
    pub fn rescale_codebook<R: Rng>(&mut self, sample: &[&[u32]], rng: &mut R) -> Result<f64> {
        if sample.is_empty() {
            return Err(Error::Empty("codebook initialization sample".into()));
        }
        let mut g = Graph::new(&self.params);
        let e = self.coder.encode_batch(&mut g, sample)?;
        let d = self.config.d_head();
        let vals = g.value(e);
        let rows = vals.len() / d;
        let mean_sq = vals.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / rows as f64;
        let rms = mean_sq.sqrt();
        let ema = *self.codebook.ema();
        self.codebook = Codebook::gaussian(self.config.codebook_size, d, rms / (d as f64).sqrt(), ema, rng)?;
        Ok(rms)
    }
}

impl<T: Real> Model<T> {
    pub fn bottleneck(&self) -> Bottleneck {
        gate_mode(self.variant, self.alpha_mode)
    }

    /// The gate with its mode taken from the current variant and alpha mode.
    fn active_gate(&self) -> ResidualGate {
        let mut gate = self.gate.clone();
        if let Bottleneck::Gated(mode) = self.bottleneck() {
            gate.mode = mode;
        }
        gate
    }

    /// Same model in another precision (codebook state is shared by value).
    pub fn cast<U: Real>(&self) -> Result<Model<U>> {
        let params = self.params.cast::<U>();
        let coder = SeqCoder::attach(&self.config, &params)?;
        Ok(Model {
            config: self.config.clone(),
            variant: self.variant,
            alpha_mode: self.alpha_mode,
            params,
            coder,
            gate: self.gate.clone(),
            codebook: self.codebook.clone(),
        })
    }

    /// Current residual weight(s); 1 for the bypass.
    pub fn alpha(&self) -> Vec<f64> {
        match self.bottleneck() {
            Bottleneck::Bypass => vec![1.0],
            Bottleneck::Gated(_) => self.active_gate().alpha(&self.params),
        }
    }

    /// Records the bottleneck on `e`; returns `z` and, when quantizing, the
    /// chosen indices and code rows.
    pub fn bottleneck_graph(&self, g: &mut Graph<'_, T>, e: Var) -> Result<(Var, Option<(Vec<usize>, Vec<T>, Gate<T>)>)> {
        match self.bottleneck() {
            Bottleneck::Bypass => Ok((e, None)),
            Bottleneck::Gated(_) => {
                let gate = self.active_gate().graph_gate(g);
                let (z, idx, codes) = quantize_graph(g, e, &self.codebook, gate, self.config.quant_heads)?;
                Ok((z, Some((idx, codes, gate))))
            }
        }
    }

    /// Teacher-forced loss of reconstructing `targets[i]` from `inputs[i]`:
    /// mean token NLL plus the commitment and gate terms when they apply.
    pub fn forward_loss(&self, g: &mut Graph<'_, T>, inputs: &[&[u32]], targets: &[&[u32]], beta: f64) -> Result<ForwardLoss> {
        if inputs.len() != targets.len() {
            return Err(Error::Shape(format!("{} inputs for {} targets", inputs.len(), targets.len())));
        }
        if let Some(i) = targets.iter().position(|t| t.is_empty()) {
            return Err(Error::Empty(format!("target {i}")));
        }
        let e = self.coder.encode_batch(g, inputs)?;
        let (z, quant) = self.bottleneck_graph(g, e)?;
        let v = self.config.vocab_size as u32;
        let mut prefixes = Vec::with_capacity(targets.len());
        let mut gold = Vec::new();
        for t in targets {
            let clean: Vec<u32> = t.iter().map(|&x| if x < v { x } else { crate::seqcoder::UNK }).collect();
            prefixes.push(std::iter::once(BOS).chain(clean.iter().copied()).collect::<Vec<_>>());
            gold.extend(clean.iter().map(|&x| x as usize));
            gold.push(crate::seqcoder::EOS as usize);
        }
        let refs: Vec<&[u32]> = prefixes.iter().map(Vec::as_slice).collect();
        let memory_of: Vec<usize> = (0..targets.len()).collect();
        let logits = self.coder.decode_batch(g, z, &memory_of, &refs)?;
        let tokens = gold.len();
        let ce = g.cross_entropy(logits, gold);
        let nll = g.scale(ce, 1.0 / tokens as f64);
        let mut total = nll;
        let (mut commit, mut penalty, mut assignments) = (None, None, Vec::new());
        if let Some((idx, codes, gate)) = quant {
            if beta > 0.0 {
                let c = commitment_graph(g, e, codes, beta, inputs.len());
                total = g.add(total, c);
                commit = Some(c);
            }
            let p = self.active_gate().penalty(g, gate);
            total = g.add(total, p);
            penalty = Some(p);
            assignments = idx;
        }
        Ok(ForwardLoss { total, nll, commit, penalty, tokens, latent: e, assignments })
    }

    /// Pre-bottleneck latent of `x`.
    pub fn latent(&self, x: &[u32]) -> Result<LatentMatrix> {
        self.coder.encode(&self.params, x)
    }

    /// Applies the bottleneck to a pre-bottleneck latent.
    pub fn bottleneck_latent(&self, e: &LatentMatrix) -> Result<LatentMatrix> {
        match self.bottleneck() {
            Bottleneck::Bypass => Ok(LatentMatrix { stage: LatentStage::Post, ..e.clone() }),
            Bottleneck::Gated(_) => Ok(quantize_combine(e, &self.codebook, &self.alpha())?.0),
        }
    }

    /// Decoder memory for input `x`.
    pub fn condition(&self, x: &[u32]) -> Result<LatentMatrix> {
        self.bottleneck_latent(&self.latent(x)?)
    }

    /// `log P(y | x)`.
    pub fn score(&self, x: &[u32], y: &[u32]) -> Result<f64> {
        let z = self.condition(x)?;
        self.coder.sequence_log_prob(&self.params, &z, y)
    }

    /// `log P(y | x)` for several `y` sharing one encoding of `x`.
    pub fn score_many(&self, x: &[u32], ys: &[&[u32]]) -> Result<Vec<f64>> {
        let z = self.condition(x)?;
        self.coder.sequence_log_probs(&self.params, &z, ys)
    }
}
