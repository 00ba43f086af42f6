//! Binary checkpoints: magic line, little-endian header length, JSON header,
//! then a little-endian `f32` payload.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use monopara::numcore::Adam;
use monopara::quantizer::Codebook;
use monopara::seqcoder::Vocabulary;
use monopara::training::{Model, Trainer};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MAGIC: &[u8; 6] = b"RVQV1\n";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub run: RunConfig,
    pub vocab_hash: String,
    pub step: u64,
    pub adam_step: u64,
    pub codebook_size: usize,
    pub codebook_dim: usize,
    pub idle: Vec<u64>,
    /// Parameter directory in payload order. The payload holds every
    /// parameter, then every first moment, then every second moment, then
    /// codebook codes, counts and sums.
    pub tensors: Vec<TensorEntry>,
}

/// Everything needed to resume a run or evaluate its model.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub run: RunConfig,
    pub vocab_hash: String,
    pub trainer: Trainer,
}

impl Checkpoint {
    pub fn new(run: RunConfig, vocab: &Vocabulary, trainer: Trainer) -> Self {
        Self { run, vocab_hash: vocab.hash(), trainer }
    }

    pub fn model(&self) -> &Model {
        &self.trainer.model
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let t = &self.trainer;
        let params = &t.model.params;
        let cb = &t.model.codebook;
        let header = Header {
            run: self.run.clone(),
            vocab_hash: self.vocab_hash.clone(),
            step: t.step,
            adam_step: t.adam.steps_taken(),
            codebook_size: cb.size(),
            codebook_dim: cb.dim(),
            idle: cb.idle().to_vec(),
            tensors: params
                .iter()
                .map(|(_, name, x)| TensorEntry { name: name.to_string(), shape: x.shape().to_vec() })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        w.write_all(MAGIC)?;
        w.write_all(&u32::try_from(json.len())?.to_le_bytes())?;
        w.write_all(&json)?;
        let mut put = |xs: &[f32]| -> std::io::Result<()> {
            let bytes: Vec<u8> = xs.iter().flat_map(|x| x.to_le_bytes()).collect();
            w.write_all(&bytes)
        };
        for (_, _, x) in params.iter() {
            put(x.data())?;
        }
        for s in &t.adam.states {
            put(&s.m)?;
        }
        for s in &t.adam.states {
            put(&s.v)?;
        }
        put(cb.codes())?;
        put(cb.counts())?;
        put(cb.sums())?;
        Ok(())
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic).context("reading checkpoint magic")?;
        ensure!(&magic == MAGIC, "not a checkpoint (bad magic)");
        let mut len = [0u8; 4];
        r.read_exact(&mut len)?;
        let mut json = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut json).context("truncated checkpoint header")?;
        let header: Header = serde_json::from_slice(&json).context("parsing checkpoint header")?;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        ensure!(payload.len() % 4 == 0, "checkpoint payload is not a whole number of floats");
        let floats: Vec<f32> =
            payload.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let mut cursor = floats.as_slice();
        let mut take = |n: usize| -> Result<Vec<f32>> {
            ensure!(cursor.len() >= n, "truncated checkpoint payload");
            let (head, rest) = cursor.split_at(n);
            cursor = rest;
            Ok(head.to_vec())
        };

        let run = header.run;
        let train = run.train.clone();
        // the initialization draw is discarded; every value is overwritten below
        let mut rng = monopara::training::stream_rng(0, 0);
        let mut model =
            Model::new(run.model.clone(), train.variant, train.alpha_fixed, train.lambda, train.ema, &mut rng)?;
        ensure!(
            model.params.len() == header.tensors.len(),
            "checkpoint has {} tensors, model expects {}",
            header.tensors.len(),
            model.params.len()
        );
        let ids: Vec<_> = model.params.ids().collect();
        for (&id, entry) in ids.iter().zip(&header.tensors) {
            let name = model.params.name(id).to_string();
            let tensor = model.params.get_mut(id);
            ensure!(
                name == entry.name && tensor.shape() == entry.shape.as_slice(),
                "tensor `{}` {:?} does not match model tensor `{name}` {:?}",
                entry.name,
                entry.shape,
                tensor.shape()
            );
            let data = take(tensor.len())?;
            tensor.data_mut().copy_from_slice(&data);
        }
        let mut adam = Adam::new(&model.params, train.adam);
        for s in adam.states.iter_mut() {
            s.m = take(s.m.len())?;
        }
        for s in adam.states.iter_mut() {
            s.v = take(s.v.len())?;
            s.step = header.adam_step;
        }
        let (k, d) = (header.codebook_size, header.codebook_dim);
        let codes = take(k * d)?;
        let counts = take(k)?;
        let sums = take(k * d)?;
        model.codebook = Codebook::from_state(k, d, codes, counts, sums, header.idle, train.ema)?;
        if !cursor.is_empty() {
            bail!("{} trailing floats after checkpoint payload", cursor.len());
        }
        let trainer = Trainer { config: train, model, adam, step: header.step };
        Ok(Self { run, vocab_hash: header.vocab_hash, trainer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        std::fs::write(path, buf).with_context(|| format!("writing checkpoint {}", path.display()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
        Self::read(bytes.as_slice()).with_context(|| format!("loading {}", path.display()))
    }

    /// Refuses to pair the checkpoint with a different vocabulary.
    pub fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        let got = vocab.hash();
        ensure!(
            got == self.vocab_hash,
            "vocabulary hash {got} does not match checkpoint vocabulary {}",
            self.vocab_hash
        );
        Ok(())
    }
}

/// Path of the vocabulary stored next to a checkpoint.
pub fn vocab_path(checkpoint: &Path) -> std::path::PathBuf {
    checkpoint.with_extension("vocab.txt")
}

#[cfg(test)]
mod tests {
    use super::*;
    use monopara::seqcoder::{ModelConfig, TokenizerKind};

    fn tiny() -> (RunConfig, Vocabulary, Vec<monopara::seqcoder::TokenSequence>) {
        let lines = ["a b c", "b c d e", "c a", "d e a b"];
        let vocab = Vocabulary::build(lines.iter().copied(), TokenizerKind::Word, 1).unwrap();
        let corpus = lines.iter().map(|l| vocab.encode(l, Some(8)).unwrap()).collect();
        let mut run = RunConfig::default();
        run.model = ModelConfig {
            vocab_size: vocab.len(),
            d_model: 8,
            layers: 1,
            attn_heads: 2,
            ffn_dim: 16,
            latent_positions: 2,
            quant_heads: 2,
            codebook_size: 4,
            max_len: 8,
            ..Default::default()
        };
        run.train.batch_size = 2;
        run.train.codebook_init_sentences = 4;
        (run, vocab, corpus)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (run, vocab, corpus) = tiny();
        let mut t = Trainer::new(run.model.clone(), run.train.clone(), &corpus).unwrap();
        for _ in 0..3 {
            t.step_corpus(&corpus).unwrap();
        }
        let ck = Checkpoint::new(run, &vocab, t);
        let mut bytes = Vec::new();
        ck.write(&mut bytes).unwrap();
        let back = Checkpoint::read(bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        back.write(&mut again).unwrap();
        assert_eq!(bytes, again);
        assert_eq!(back.trainer.step, 3);
        assert_eq!(back.trainer.adam, ck.trainer.adam);
        assert_eq!(back.model().codebook.sums(), ck.model().codebook.sums());
        assert_eq!(back.model().codebook.idle(), ck.model().codebook.idle());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let (run, vocab, corpus) = tiny();
        let t = Trainer::new(run.model.clone(), run.train.clone(), &corpus).unwrap();
        let mut bytes = Vec::new();
        Checkpoint::new(run, &vocab, t).write(&mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read(bad.as_slice()).unwrap_err().to_string().contains("magic"));
        bytes.truncate(bytes.len() - 4);
        assert!(Checkpoint::read(bytes.as_slice()).is_err());
    }

    #[test]
    fn vocabulary_mismatch_is_refused() {
        let (run, vocab, corpus) = tiny();
        let t = Trainer::new(run.model.clone(), run.train.clone(), &corpus).unwrap();
        let ck = Checkpoint::new(run, &vocab, t);
        let other = Vocabulary::build(["x y z"], TokenizerKind::Word, 1).unwrap();
        let err = ck.check_vocab(&other).unwrap_err().to_string();
        assert!(err.contains("does not match"), "{err}");
        ck.check_vocab(&vocab).unwrap();
    }
}
