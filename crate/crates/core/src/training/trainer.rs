use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{noise_sequence, Model, TrainConfig, Variant};
use crate::numcore::{noam_lr, Adam, Graph};
use crate::quantizer::usage_entropy;
use crate::seqcoder::{ModelConfig, TokenSequence};
use crate::{Error, Result};

/// Generator for a named purpose at a given step; every random choice of a
/// run is a function of `(seed, stream)` so a resumed run replays exactly.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const EPOCH_STREAMS: u64 = 1 << 62;
const INIT_STREAM: u64 = 1 << 63;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: u64,
    pub total: f64,
    pub nll: f64,
    pub commit: f64,
    pub penalty: f64,
    pub alpha: f64,
    pub usage_entropy: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub records: Vec<TrainRecord>,
}

impl TrainReport {
    pub const COLUMNS: &'static str = "step\tnll\tcommit\tpenalty\talpha\tusage_entropy\tlr";

    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }

    pub fn write_header(mut w: impl Write, header: &str) -> Result<()> {
        writeln!(w, "# {header}")?;
        writeln!(w, "{}", Self::COLUMNS)?;
        Ok(())
    }

    pub fn write_record(mut w: impl Write, r: &TrainRecord) -> Result<()> {
        writeln!(
            w,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6e}",
            r.step, r.nll, r.commit, r.penalty, r.alpha, r.usage_entropy, r.lr
        )?;
        Ok(())
    }

    pub fn write_tsv(&self, mut w: impl Write, header: &str) -> Result<()> {
        Self::write_header(&mut w, header)?;
        for r in &self.records {
            Self::write_record(&mut w, r)?;
        }
        Ok(())
    }
}

/// Model, optimizer state and step counter of a training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    pub step: u64,
}

impl Trainer {
    /// Initializes a model for `corpus`; the codebook scale comes from the
    /// first `codebook_init_sentences` sentences.
    pub fn new(model_config: ModelConfig, config: TrainConfig, corpus: &[TokenSequence]) -> Result<Self> {
        config.validate()?;
        if corpus.is_empty() {
            return Err(Error::Empty("training corpus".into()));
        }
        let mut rng = stream_rng(config.seed, INIT_STREAM);
        let mut model = Model::new(model_config, config.variant, config.alpha_fixed, config.lambda, config.ema, &mut rng)?;
        let n = config.codebook_init_sentences.clamp(1, corpus.len());
        let sample: Vec<&[u32]> = corpus[..n].iter().map(|s| s.ids.as_slice()).collect();
        let rms = model.rescale_codebook(&sample, &mut rng)?;
        log::debug!("codebook initialized at RMS norm {rms:.4}");
        let adam = Adam::new(&model.params, config.adam);
        Ok(Self { config, model, adam, step: 0 })
    }

    /// Corpus indices of the batch used at `step` (1-based): consecutive
    /// slices of per-epoch permutations.
    pub fn batch_indices(&self, step: u64, corpus_len: usize) -> Vec<usize> {
        let b = self.config.batch_size;
        let start = (step - 1) as usize * b;
        let mut out = Vec::with_capacity(b);
        let mut epoch = start / corpus_len;
        let mut perm = self.epoch_order(epoch as u64, corpus_len);
        let mut pos = start % corpus_len;
        while out.len() < b.min(corpus_len) {
            if pos == corpus_len {
                epoch += 1;
                perm = self.epoch_order(epoch as u64, corpus_len);
                pos = 0;
            }
            out.push(perm[pos]);
            pos += 1;
        }
        out
    }

    fn epoch_order(&self, epoch: u64, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut stream_rng(self.config.seed, EPOCH_STREAMS + epoch));
        perm
    }

    /// Runs the next step on its scheduled batch from `corpus`.
    pub fn step_corpus(&mut self, corpus: &[TokenSequence]) -> Result<TrainRecord> {
        if corpus.is_empty() {
            return Err(Error::Empty("training corpus".into()));
        }
        let idx = self.batch_indices(self.step + 1, corpus.len());
        let batch: Vec<&TokenSequence> = idx.iter().map(|&i| &corpus[i]).collect();
        self.train_step(&batch)
    }

    /// One optimizer step: forward, backward, clipping, Adam at the
    /// scheduled rate and one EMA codebook update.
    pub fn train_step(&mut self, batch: &[&TokenSequence]) -> Result<TrainRecord> {
        if batch.is_empty() {
            return Err(Error::Empty("training batch".into()));
        }
        let step = self.step + 1;
        let mut rng = stream_rng(self.config.seed, step);
        let targets: Vec<&[u32]> = batch.iter().map(|s| s.ids.as_slice()).collect();
        let noised: Vec<Vec<u32>> = if self.config.variant == Variant::DnAe {
            targets
                .iter()
                .map(|t| noise_sequence(t, &mut rng, self.config.drop_p, self.config.shuffle_window))
                .collect()
        } else {
            Vec::new()
        };
        let inputs: Vec<&[u32]> =
            if noised.is_empty() { targets.clone() } else { noised.iter().map(Vec::as_slice).collect() };

        let lr = noam_lr(step, &self.config.schedule)?;
        let (record, latent_rows, assignments, grads) = {
            let mut g = Graph::new(&self.model.params);
            let f = self.model.forward_loss(&mut g, &inputs, &targets, self.config.beta)?;
            let total = g.scalar(f.total);
            if !total.is_finite() {
                let detail = self.locate_non_finite(&inputs, &targets, batch);
                return Err(Error::NonFiniteLoss { step, detail });
            }
            g.backward(f.total)?;
            let mut grads = g.param_grads();
            if let Some(id) = grads.first_non_finite() {
                return Err(Error::NonFiniteGradient(self.model.params.name(id).to_string()));
            }
            grads.clip_global_norm(self.config.clip_norm);
            let alpha = self.model.alpha();
            let record = TrainRecord {
                step,
                total,
                nll: g.scalar(f.nll),
                commit: f.commit.map_or(0.0, |c| g.scalar(c)),
                penalty: f.penalty.map_or(0.0, |p| g.scalar(p)),
                alpha: alpha.iter().sum::<f64>() / alpha.len() as f64,
                usage_entropy: usage_entropy(&f.assignments),
                lr,
            };
            (record, g.value(f.latent).to_vec(), f.assignments, grads)
        };
        grads.apply_to(&mut self.model.params)?;
        self.adam.step(&mut self.model.params, lr)?;
        if !assignments.is_empty() {
            let d = self.model.config.d_head();
            let rows: Vec<&[f32]> = latent_rows.chunks(d).collect();
            let pairs: Vec<(usize, &[f32])> = assignments.iter().copied().zip(rows.iter().copied()).collect();
            self.model.codebook.ema_update(&pairs)?;
            self.model.codebook.reseed_dead(&rows, &mut rng);
        }
        self.step = step;
        Ok(record)
    }

    fn locate_non_finite(&self, inputs: &[&[u32]], targets: &[&[u32]], batch: &[&TokenSequence]) -> String {
        for i in 0..batch.len() {
            let mut g = Graph::new(&self.model.params);
            let bad = match self.model.forward_loss(&mut g, &inputs[i..=i], &targets[i..=i], self.config.beta) {
                Ok(f) => !g.scalar(f.total).is_finite(),
                Err(_) => true,
            };
            if bad {
                return format!("sentence {i} of the batch: {:?}", batch[i].text);
            }
        }
        "the batch loss is non-finite but no single sentence is".into()
    }

    /// Trains until `self.step == steps`, passing each record to `on_record`.
    pub fn train_until(
        &mut self,
        corpus: &[TokenSequence],
        steps: u64,
        mut on_record: impl FnMut(&Trainer, &TrainRecord) -> Result<()>,
    ) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        while self.step < steps {
            let r = self.step_corpus(corpus)?;
            on_record(self, &r)?;
            report.records.push(r);
        }
        Ok(report)
    }
}
