//! Transformer encoder with appended latent slots and a decoder that attends
//! over the latent matrix. Sentences of a batch are stacked row-wise without
//! padding; attention is restricted to each sentence's own block of rows.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{LatentMatrix, LatentStage, ModelConfig, BOS, EOS};
use crate::numcore::{kernels, AttentionLayout, Graph, ParamId, ParamStore, Real, Span, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
enum Init {
    Normal(f64),
    Ones,
    Zeros,
}

#[derive(Clone, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
struct Attn {
    norm: Norm,
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
}

#[derive(Clone, Debug)]
struct Ffn {
    norm: Norm,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Clone, Debug)]
struct EncoderLayer {
    attn: Attn,
    ffn: Ffn,
}

#[derive(Clone, Debug)]
struct DecoderLayer {
    attn: Attn,
    cross: Attn,
    ffn: Ffn,
}

/// Parameter handles of the encoder and decoder inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct SeqCoder {
    config: ModelConfig,
    emb: ParamId,
    slots: ParamId,
    encoder: Vec<EncoderLayer>,
    enc_norm: Norm,
    decoder: Vec<DecoderLayer>,
    dec_norm: Norm,
    out_w: ParamId,
    out_b: ParamId,
}

struct Declare<'a> {
    get: &'a mut dyn FnMut(&str, Vec<usize>, Init) -> Result<ParamId>,
}

impl Declare<'_> {
    fn p(&mut self, name: &str, shape: Vec<usize>, init: Init) -> Result<ParamId> {
        (self.get)(name, shape, init)
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Result<Norm> {
        Ok(Norm {
            gain: self.p(&format!("{prefix}.g"), vec![d], Init::Ones)?,
            bias: self.p(&format!("{prefix}.b"), vec![d], Init::Zeros)?,
        })
    }

    fn attn(&mut self, prefix: &str, d: usize, kv_in: usize) -> Result<Attn> {
        let q_std = (d as f64).powf(-0.5);
        let kv_std = (kv_in as f64).powf(-0.5);
        Ok(Attn {
            norm: self.norm(&format!("{prefix}.ln"), d)?,
            wq: self.p(&format!("{prefix}.wq"), vec![d, d], Init::Normal(q_std))?,
            wk: self.p(&format!("{prefix}.wk"), vec![kv_in, d], Init::Normal(kv_std))?,
            wv: self.p(&format!("{prefix}.wv"), vec![kv_in, d], Init::Normal(kv_std))?,
            wo: self.p(&format!("{prefix}.wo"), vec![d, d], Init::Normal(q_std))?,
        })
    }

    fn ffn(&mut self, prefix: &str, d: usize, f: usize) -> Result<Ffn> {
        Ok(Ffn {
            norm: self.norm(&format!("{prefix}.ln"), d)?,
            w1: self.p(&format!("{prefix}.w1"), vec![d, f], Init::Normal((d as f64).powf(-0.5)))?,
            b1: self.p(&format!("{prefix}.b1"), vec![f], Init::Zeros)?,
            w2: self.p(&format!("{prefix}.w2"), vec![f, d], Init::Normal((f as f64).powf(-0.5)))?,
            b2: self.p(&format!("{prefix}.b2"), vec![d], Init::Zeros)?,
        })
    }
}

fn declare(config: &ModelConfig, d: &mut Declare<'_>) -> Result<SeqCoder> {
    let (dm, v) = (config.d_model, config.vocab_size);
    let emb = d.p("emb", vec![v, dm], Init::Normal((dm as f64).powf(-0.5)))?;
    let slots = d.p("enc.slots", vec![config.latent_positions, dm], Init::Normal(1.0))?;
    let mut encoder = Vec::new();
    for l in 0..config.layers {
        encoder.push(EncoderLayer {
            attn: d.attn(&format!("enc.{l}.attn"), dm, dm)?,
            ffn: d.ffn(&format!("enc.{l}.ffn"), dm, config.ffn_dim)?,
        });
    }
    let enc_norm = d.norm("enc.ln", dm)?;
    let mut decoder = Vec::new();
    for l in 0..config.layers {
        decoder.push(DecoderLayer {
            attn: d.attn(&format!("dec.{l}.attn"), dm, dm)?,
            cross: d.attn(&format!("dec.{l}.cross"), dm, config.d_head())?,
            ffn: d.ffn(&format!("dec.{l}.ffn"), dm, config.ffn_dim)?,
        });
    }
    let dec_norm = d.norm("dec.ln", dm)?;
    let out_w = d.p("dec.out.w", vec![dm, v], Init::Normal((dm as f64).powf(-0.5)))?;
    let out_b = d.p("dec.out.b", vec![v], Init::Zeros)?;
    Ok(SeqCoder { config: config.clone(), emb, slots, encoder, enc_norm, decoder, dec_norm, out_w, out_b })
}

/// Sinusoidal code of position `pos`.
fn position_code(pos: usize, d: usize, out: &mut Vec<f64>) {
    for i in 0..d {
        let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
        let a = pos as f64 / rate;
        out.push(if i % 2 == 0 { a.sin() } else { a.cos() });
    }
}

impl SeqCoder {
    /// Adds freshly initialized encoder/decoder parameters to `store`.
    pub fn init<R: Rng>(config: &ModelConfig, store: &mut ParamStore<f32>, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut get = |name: &str, shape: Vec<usize>, init: Init| -> Result<ParamId> {
            let n: usize = shape.iter().product();
            let data: Vec<f32> = match init {
                Init::Ones => vec![1.0; n],
                Init::Zeros => vec![0.0; n],
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).map_err(|e| Error::Config(e.to_string()))?;
                    (0..n).map(|_| dist.sample(rng) as f32).collect()
                }
            };
            store.insert(name, Tensor::new(shape, data)?)
        };
        declare(config, &mut Declare { get: &mut get })
    }

    /// Resolves parameter handles in a store built by [`SeqCoder::init`].
    pub fn attach<T: Real>(config: &ModelConfig, store: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let mut get = |name: &str, shape: Vec<usize>, _: Init| -> Result<ParamId> {
            let id = store.id(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if store.get(id).shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    store.get(id).shape()
                )));
            }
            Ok(id)
        };
        declare(config, &mut Declare { get: &mut get })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Handles of the final projection (weights, bias).
    pub fn output_layer(&self) -> (ParamId, ParamId) {
        (self.out_w, self.out_b)
    }

    fn embed<T: Real>(&self, g: &mut Graph<'_, T>, seqs: &[&[u32]]) -> Var {
        let d = self.config.d_model;
        let ids: Vec<usize> = seqs.iter().flat_map(|s| s.iter().map(|&i| i as usize)).collect();
        let mut pe = Vec::with_capacity(ids.len() * d);
        for s in seqs {
            for pos in 0..s.len() {
                position_code(pos, d, &mut pe);
            }
        }
        let emb = g.param(self.emb);
        let tok = g.gather_rows(emb, ids);
        let tok = g.scale(tok, (d as f64).sqrt());
        let rows = pe.len() / d;
        let pe = g.constant(rows, d, pe.into_iter().map(T::narrow).collect());
        g.add(tok, pe)
    }

    fn norm<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, n: &Norm) -> Var {
        let (gain, bias) = (g.param(n.gain), g.param(n.bias));
        g.layer_norm(x, gain, bias)
    }

    fn attend<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, kv: Var, a: &Attn, layout: AttentionLayout) -> Var {
        let (wq, wk, wv, wo) = (g.param(a.wq), g.param(a.wk), g.param(a.wv), g.param(a.wo));
        let q = g.matmul(x, wq);
        let k = g.matmul(kv, wk);
        let v = g.matmul(kv, wv);
        let o = g.attention(q, k, v, self.config.attn_heads, layout);
        g.matmul(o, wo)
    }

    fn feed_forward<T: Real>(&self, g: &mut Graph<'_, T>, x: Var, f: &Ffn) -> Var {
        let h = self.norm(g, x, &f.norm);
        let (w1, b1, w2, b2) = (g.param(f.w1), g.param(f.b1), g.param(f.w2), g.param(f.b2));
        let h = g.matmul(h, w1);
        let h = g.add_row(h, b1);
        let h = g.gelu(h);
        let h = g.matmul(h, w2);
        let h = g.add_row(h, b2);
        g.add(x, h)
    }

    /// Encodes a batch into the pre-bottleneck latent, `H` rows of `d_head` per sentence.
    pub fn encode_batch<T: Real>(&self, g: &mut Graph<'_, T>, batch: &[&[u32]]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Empty("encoder batch".into()));
        }
        if let Some(i) = batch.iter().position(|s| s.is_empty()) {
            return Err(Error::Empty(format!("sentence {i} of the encoder batch")));
        }
        let l = self.config.latent_positions;
        let tok = self.embed(g, batch);
        let slots = g.param(self.slots);
        let slot_rows = g.gather_rows(slots, (0..batch.len()).flat_map(|_| 0..l).collect());
        let stacked = g.concat_rows(&[tok, slot_rows]);

        let n_tok: usize = batch.iter().map(|s| s.len()).sum();
        let mut order = Vec::with_capacity(n_tok + batch.len() * l);
        let mut spans = Vec::with_capacity(batch.len());
        let mut latent_rows = Vec::with_capacity(batch.len() * l);
        let mut tok_off = 0;
        for (b, s) in batch.iter().enumerate() {
            let start = order.len();
            order.extend(tok_off..tok_off + s.len());
            latent_rows.extend(order.len()..order.len() + l);
            order.extend(n_tok + b * l..n_tok + (b + 1) * l);
            spans.push(Span::new(start, s.len() + l));
            tok_off += s.len();
        }
        let mut x = g.gather_rows(stacked, order);
        let layout = AttentionLayout { queries: spans.clone(), keys: spans, causal: false };
        for layer in &self.encoder {
            let h = self.norm(g, x, &layer.attn.norm);
            let a = self.attend(g, h, h, &layer.attn, layout.clone());
            x = g.add(x, a);
            x = self.feed_forward(g, x, &layer.ffn);
        }
        let x = self.norm(g, x, &self.enc_norm);
        let latent = g.gather_rows(x, latent_rows);
        Ok(g.reshape(latent, batch.len() * self.config.quant_heads, self.config.d_head()))
    }

    /// Next-token logits for every position of every prefix. Prefix `i`
    /// attends to memory block `memory_of[i]` (`H` rows of `memory`).
    pub fn decode_batch<T: Real>(
        &self,
        g: &mut Graph<'_, T>,
        memory: Var,
        memory_of: &[usize],
        prefixes: &[&[u32]],
    ) -> Result<Var> {
        let h = self.config.quant_heads;
        let (mem_rows, mem_cols) = g.dims(memory);
        if mem_cols != self.config.d_head() || mem_rows % h != 0 {
            return Err(Error::Shape(format!("memory of shape {mem_rows}x{mem_cols}")));
        }
        if memory_of.len() != prefixes.len() || prefixes.is_empty() {
            return Err(Error::Contract("one memory block per decoder prefix".into()));
        }
        if let Some(&b) = memory_of.iter().find(|&&b| (b + 1) * h > mem_rows) {
            return Err(Error::Contract(format!("memory block {b} out of range")));
        }
        if let Some(i) = prefixes.iter().position(|p| p.first() != Some(&BOS)) {
            return Err(Error::Contract(format!("decoder prefix {i} does not start with BOS")));
        }
        let mut spans = Vec::with_capacity(prefixes.len());
        let mut off = 0;
        for p in prefixes {
            spans.push(Span::new(off, p.len()));
            off += p.len();
        }
        let self_layout = AttentionLayout { queries: spans.clone(), keys: spans.clone(), causal: true };
        let cross_layout = AttentionLayout {
            queries: spans,
            keys: memory_of.iter().map(|&b| Span::new(b * h, h)).collect(),
            causal: false,
        };
        let mut x = self.embed(g, prefixes);
        for layer in &self.decoder {
            let n = self.norm(g, x, &layer.attn.norm);
            let a = self.attend(g, n, n, &layer.attn, self_layout.clone());
            x = g.add(x, a);
            let n = self.norm(g, x, &layer.cross.norm);
            let c = self.attend(g, n, memory, &layer.cross, cross_layout.clone());
            x = g.add(x, c);
            x = self.feed_forward(g, x, &layer.ffn);
        }
        let x = self.norm(g, x, &self.dec_norm);
        let (w, b) = (g.param(self.out_w), g.param(self.out_b));
        let logits = g.matmul(x, w);
        Ok(g.add_row(logits, b))
    }

    /// Pre-bottleneck latent of one sentence.
    pub fn encode<T: Real>(&self, params: &ParamStore<T>, x: &[u32]) -> Result<LatentMatrix> {
        let mut g = Graph::new(params);
        let e = self.encode_batch(&mut g, &[x])?;
        Ok(LatentMatrix::new(
            self.config.quant_heads,
            self.config.d_head(),
            g.value(e).iter().map(|v| v.wide() as f32).collect(),
            LatentStage::Pre,
        ))
    }

    /// Next-token distribution at every position of `prefix`.
    pub fn decode_distributions<T: Real>(
        &self,
        params: &ParamStore<T>,
        z: &LatentMatrix,
        prefix: &[u32],
    ) -> Result<Vec<Vec<f64>>> {
        self.check_latent(z)?;
        let mut g = Graph::new(params);
        let mem = g.constant(z.heads, z.dim, z.data.iter().map(|&v| T::narrow(v as f64)).collect());
        let logits = self.decode_batch(&mut g, mem, &[0], &[prefix])?;
        let v = self.config.vocab_size;
        Ok(g.value(logits)
            .chunks(v)
            .map(|row| kernels::log_softmax(row).into_iter().map(f64::exp).collect())
            .collect())
    }

    /// Distribution of the token following `prefix` (which starts with BOS).
    pub fn decode_step<T: Real>(&self, params: &ParamStore<T>, z: &LatentMatrix, prefix: &[u32]) -> Result<Vec<f64>> {
        Ok(self.decode_distributions(params, z, prefix)?.pop().expect("non-empty prefix"))
    }

    /// `log P(y | z)` including the end-of-sequence token; ids outside the
    /// vocabulary count as UNK.
    pub fn sequence_log_prob<T: Real>(&self, params: &ParamStore<T>, z: &LatentMatrix, y: &[u32]) -> Result<f64> {
        Ok(self.sequence_log_probs(params, z, &[y])?[0])
    }

    /// Scores several targets against one latent in a single batch.
    pub fn sequence_log_probs<T: Real>(
        &self,
        params: &ParamStore<T>,
        z: &LatentMatrix,
        ys: &[&[u32]],
    ) -> Result<Vec<f64>> {
        self.check_latent(z)?;
        if ys.iter().any(|y| y.is_empty()) {
            return Err(Error::Empty("target sequence".into()));
        }
        let v = self.config.vocab_size as u32;
        let clean: Vec<Vec<u32>> =
            ys.iter().map(|y| y.iter().map(|&t| if t < v { t } else { super::UNK }).collect()).collect();
        let prefixes: Vec<Vec<u32>> =
            clean.iter().map(|y| std::iter::once(BOS).chain(y.iter().copied()).collect()).collect();
        let refs: Vec<&[u32]> = prefixes.iter().map(Vec::as_slice).collect();
        let mut g = Graph::new(params);
        let mem = g.constant(z.heads, z.dim, z.data.iter().map(|&x| T::narrow(x as f64)).collect());
        let logits = self.decode_batch(&mut g, mem, &vec![0; refs.len()], &refs)?;
        let vals = g.value(logits);
        let vs = v as usize;
        let mut out = Vec::with_capacity(ys.len());
        let mut row = 0;
        for y in &clean {
            let mut lp = 0.0;
            for &t in y.iter().chain(std::iter::once(&EOS)) {
                lp += kernels::log_softmax(&vals[row * vs..(row + 1) * vs])[t as usize];
                row += 1;
            }
            out.push(lp);
        }
        Ok(out)
    }

    fn check_latent(&self, z: &LatentMatrix) -> Result<()> {
        if z.heads != self.config.quant_heads || z.dim != self.config.d_head() {
            return Err(Error::Shape(format!(
                "latent {}x{} for a model expecting {}x{}",
                z.heads,
                z.dim,
                self.config.quant_heads,
                self.config.d_head()
            )));
        }
        Ok(())
    }
}
