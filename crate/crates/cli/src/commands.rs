//! Subcommand bodies. Each writes its report to `out` and takes every
//! setting from a [`RunConfig`].

use std::collections::{BTreeSet, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use monopara::evalsuite::{
    accuracy, augment_corpus, calibrate_model, evaluate_classifier, filter_pairs, fit_logistic, fit_ridge,
    generate_batch, identification_features, pearson, rank_eval, score_pair, DecodeMode, ModelScorer, NbSvm,
    PairScorer, RandomScorer, RankTask,
};
use monopara::seqcoder::{TokenSequence, Vocabulary};
use monopara::training::{Model, TrainReport, Trainer};

use crate::checkpoint::{vocab_path, Checkpoint};
use crate::config::RunConfig;
use crate::data::{self, Pair};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const REPORT_FILE: &str = "train_report.tsv";

fn header(out: &mut dyn Write, run: &RunConfig) -> Result<()> {
    writeln!(out, "# {}", run.header())?;
    Ok(())
}

/// Checkpoint, its vocabulary, and `run` with the checkpoint's model,
/// training and vocabulary settings.
pub struct Loaded {
    pub checkpoint: Checkpoint,
    pub vocab: Vocabulary,
    pub run: RunConfig,
}

impl Loaded {
    pub fn model(&self) -> &Model {
        self.checkpoint.model()
    }

    fn encode(&self, text: &str) -> Result<Vec<u32>> {
        Ok(self.vocab.encode(text, Some(self.run.model.max_len))?.ids)
    }
}

pub fn load(path: &Path, run: &RunConfig) -> Result<Loaded> {
    let checkpoint = Checkpoint::load(path)?;
    let vp = vocab_path(path);
    let file = std::fs::File::open(&vp).with_context(|| format!("opening vocabulary {}", vp.display()))?;
    let vocab = Vocabulary::read(std::io::BufReader::new(file), checkpoint.run.vocab.tokenizer)?;
    checkpoint.check_vocab(&vocab)?;
    let mut effective = run.clone();
    effective.vocab = checkpoint.run.vocab.clone();
    effective.model = checkpoint.run.model.clone();
    effective.train = checkpoint.run.train.clone();
    effective.train.seed = run.seed;
    Ok(Loaded { checkpoint, vocab, run: effective })
}

fn save(dir: &Path, name: &str, ck: &Checkpoint, vocab: &Vocabulary) -> Result<PathBuf> {
    let path = dir.join(name);
    ck.save(&path)?;
    let mut buf = Vec::new();
    vocab.write(&mut buf)?;
    std::fs::write(vocab_path(&path), buf)?;
    Ok(path)
}

/// Trains on `corpus`, or continues the run in `resume`, writing the final
/// checkpoint, periodic checkpoints and the training report into `out_dir`.
pub fn cmd_train(corpus: &Path, run: &RunConfig, out_dir: &Path, resume: Option<&Path>) -> Result<TrainReport> {
    let lines = data::read_corpus(corpus)?;
    ensure!(!lines.is_empty(), "corpus {} has no sentences", corpus.display());
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let (mut run, vocab, mut trainer) = match resume {
        Some(path) => {
            let loaded = load(path, run)?;
            let mut r = loaded.checkpoint.run.clone();
            r.train.steps = run.train.steps;
            let mut trainer = loaded.checkpoint.trainer;
            trainer.config.steps = run.train.steps;
            (r, loaded.vocab, trainer)
        }
        None => {
            let mut r = run.clone();
            let vocab =
                Vocabulary::build(lines.iter().map(String::as_str), r.vocab.tokenizer, r.vocab.min_count)?;
            r.model.vocab_size = vocab.len();
            let encoded = data::encode_all(&vocab, &lines, r.model.max_len)?;
            let trainer = Trainer::new(r.model.clone(), r.train.clone(), &encoded)?;
            (r, vocab, trainer)
        }
    };
    run.train.steps = trainer.config.steps;
    let encoded = data::encode_all(&vocab, &lines, run.model.max_len)?;
    let report_path = out_dir.join(REPORT_FILE);
    let mut report_file = if resume.is_some() && report_path.exists() {
        std::fs::OpenOptions::new().append(true).open(&report_path)?
    } else {
        let mut f = std::fs::File::create(&report_path)?;
        TrainReport::write_header(&mut f, &run.header())?;
        f
    };
    let mut report = TrainReport::default();
    let every = run.train.checkpoint_every;
    while trainer.step < run.train.steps {
        let r = trainer.step_corpus(&encoded)?;
        TrainReport::write_record(&mut report_file, &r)?;
        log::info!(
            "step {} nll {:.4} commit {:.4} alpha {:.3} entropy {:.3}",
            r.step,
            r.nll,
            r.commit,
            r.alpha,
            r.usage_entropy
        );
        report.records.push(r);
        if every > 0 && trainer.step % every == 0 && trainer.step < run.train.steps {
            let ck = Checkpoint::new(run.clone(), &vocab, trainer.clone());
            save(out_dir, &format!("step-{:06}.ckpt", trainer.step), &ck, &vocab)?;
        }
    }
    let ck = Checkpoint::new(run, &vocab, trainer);
    save(out_dir, CHECKPOINT_FILE, &ck, &vocab)?;
    Ok(report)
}

/// `x, y, log P(y|x), log P(x|y)` for every pair. Empty input writes nothing.
pub fn cmd_score(checkpoint: &Path, pairs: &Path, run: &RunConfig, out: &mut dyn Write) -> Result<()> {
    let pairs = data::read_pairs(pairs)?;
    if pairs.is_empty() {
        return Ok(());
    }
    let m = load(checkpoint, run)?;
    header(out, &m.run)?;
    writeln!(out, "sentence1\tsentence2\tlogp_y_given_x\tlogp_x_given_y")?;
    for (i, p) in pairs.iter().enumerate() {
        let (x, y) = (m.encode(&p.x)?, m.encode(&p.y)?);
        let s = score_pair(m.model(), &x, &y, m.run.eval.length_normalize, m.run.eval.latent_source)
            .with_context(|| format!("pair {}", i + 1))?;
        writeln!(out, "{}\t{}\t{:.6}\t{:.6}", p.x, p.y, s.log_p_y_given_x, s.log_p_x_given_y)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum ScorerKind {
    Model,
    /// Scores exactly the listed positive pairs above everything else.
    Oracle,
    Random,
}

struct OracleScorer {
    positives: HashSet<(Vec<u32>, Vec<u32>)>,
}

impl PairScorer for OracleScorer {
    fn score_candidates(&self, x: &[u32], ys: &[&[u32]]) -> monopara::Result<Vec<f64>> {
        Ok(ys.iter().map(|y| if self.positives.contains(&(x.to_vec(), y.to_vec())) { 1.0 } else { 0.0 }).collect())
    }
}

/// Seed of ranking task `i`: distinct streams per task under one run seed.
pub fn task_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(i as u64)
}

/// Fraction of comparisons where each positive pair outscores negatives
/// drawn from `pool` (one sentence per line) or, without a pool, from the
/// sentences of the pair file itself.
pub fn cmd_rank(
    checkpoint: Option<&Path>,
    pairs: &Path,
    pool: Option<&Path>,
    scorer: ScorerKind,
    run: &RunConfig,
    out: &mut dyn Write,
) -> Result<f64> {
    let pairs = data::read_pairs(pairs)?;
    ensure!(!pairs.is_empty(), "no pairs to rank");
    let pool_lines: Vec<String> = match pool {
        Some(p) => data::read_corpus(p)?,
        None => pairs
            .iter()
            .flat_map(|p| [p.x.clone(), p.y.clone()])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let loaded = match checkpoint {
        Some(path) => Some(load(path, run)?),
        None if scorer == ScorerKind::Model => bail!("the model scorer needs --checkpoint"),
        None => None,
    };
    let (vocab, run) = match &loaded {
        Some(m) => (m.vocab.clone(), m.run.clone()),
        None => {
            let texts = pairs.iter().flat_map(|p| [p.x.as_str(), p.y.as_str()]).chain(pool_lines.iter().map(String::as_str));
            (Vocabulary::build(texts, run.vocab.tokenizer, 1)?, run.clone())
        }
    };
    let enc = |s: &str| -> Result<Vec<u32>> { Ok(vocab.encode(s, Some(run.model.max_len))?.ids) };
    let pool_ids: Vec<Vec<u32>> = pool_lines.iter().map(|s| enc(s)).collect::<Result<_>>()?;
    let tasks: Vec<RankTask> = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut t = RankTask::new(enc(&p.x)?, enc(&p.y)?, task_seed(run.seed, i));
            t.negatives = run.eval.negatives;
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let fraction = match (scorer, &loaded) {
        (ScorerKind::Model, Some(m)) => rank_eval(
            &ModelScorer { model: m.model(), length_normalize: run.eval.length_normalize },
            &tasks,
            &pool_ids,
        )?,
        (ScorerKind::Oracle, _) => {
            let positives = tasks.iter().map(|t| (t.x.clone(), t.y.clone())).collect();
            rank_eval(&OracleScorer { positives }, &tasks, &pool_ids)?
        }
        (ScorerKind::Random, _) => rank_eval(&RandomScorer { seed: run.seed }, &tasks, &pool_ids)?,
        (ScorerKind::Model, None) => unreachable!("checked above"),
    };
    header(out, &run)?;
    writeln!(out, "scorer\tlength_normalize\ttasks\tnegatives\tfraction")?;
    let name = format!("{scorer:?}").to_lowercase();
    writeln!(out, "{name}\t{}\t{}\t{}\t{fraction:.4}", run.eval.length_normalize, tasks.len(), run.eval.negatives)?;
    Ok(fraction)
}

fn pair_features(m: &Loaded, pairs: &[Pair]) -> Result<Vec<Vec<f64>>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (x, y) = (m.encode(&p.x)?, m.encode(&p.y)?);
            let s = score_pair(m.model(), &x, &y, m.run.eval.length_normalize, m.run.eval.latent_source)
                .with_context(|| format!("pair {}", i + 1))?;
            Ok(identification_features(&s, m.run.eval.features))
        })
        .collect()
}

fn binary_labels(pairs: &[Pair], file: &Path) -> Result<Vec<bool>> {
    data::require_values(pairs, "label")
        .with_context(|| format!("in {}", file.display()))?
        .into_iter()
        .enumerate()
        .map(|(i, v)| match v {
            v if v == 0.0 => Ok(false),
            v if v == 1.0 => Ok(true),
            _ => bail!("pair {} in {}: label must be 0 or 1, got {v}", i + 1, file.display()),
        })
        .collect()
}

/// Logistic regression on pair scores; reports test accuracy.
pub fn cmd_identify(checkpoint: &Path, train: &Path, test: &Path, run: &RunConfig, out: &mut dyn Write) -> Result<f64> {
    let m = load(checkpoint, run)?;
    let (tr, te) = (data::read_pairs(train)?, data::read_pairs(test)?);
    ensure!(!tr.is_empty() && !te.is_empty(), "identification needs non-empty train and test files");
    let (ytr, yte) = (binary_labels(&tr, train)?, binary_labels(&te, test)?);
    ensure!(ytr.iter().any(|&b| b) && ytr.iter().any(|&b| !b), "training pairs contain a single class");
    let fit = fit_logistic(&pair_features(&m, &tr)?, &ytr, &m.run.eval.logistic)?;
    let pred: Vec<bool> = pair_features(&m, &te)?.iter().map(|f| fit.classify(f)).collect();
    let acc = accuracy(&pred, &yte);
    header(out, &m.run)?;
    writeln!(out, "features\ttrain\ttest\taccuracy")?;
    writeln!(out, "{}\t{}\t{}\t{acc:.4}", feature_name(&m.run), tr.len(), te.len())?;
    Ok(acc)
}

fn feature_name(run: &RunConfig) -> String {
    serde_json::to_value(run.eval.features).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default()
}

/// Ridge regression on pair scores; reports Pearson correlation on test.
pub fn cmd_sts(checkpoint: &Path, train: &Path, test: &Path, run: &RunConfig, out: &mut dyn Write) -> Result<f64> {
    let m = load(checkpoint, run)?;
    let (tr, te) = (data::read_pairs(train)?, data::read_pairs(test)?);
    ensure!(!tr.is_empty() && !te.is_empty(), "similarity needs non-empty train and test files");
    let ytr = data::require_values(&tr, "score").with_context(|| format!("in {}", train.display()))?;
    let yte = data::require_values(&te, "score").with_context(|| format!("in {}", test.display()))?;
    let fit = fit_ridge(&pair_features(&m, &tr)?, &ytr, m.run.eval.ridge_l2)?;
    let pred: Vec<f64> = pair_features(&m, &te)?.iter().map(|f| fit.decision(f)).collect();
    let r = pearson(&pred, &yte)?;
    header(out, &m.run)?;
    writeln!(out, "features\ttrain\ttest\tpearson")?;
    writeln!(out, "{}\t{}\t{}\t{r:.4}", feature_name(&m.run), tr.len(), te.len())?;
    Ok(r)
}

fn decode_mode(run: &RunConfig) -> DecodeMode {
    match run.eval.temperature {
        Some(temperature) => DecodeMode::Sample { temperature },
        None => DecodeMode::Greedy,
    }
}

/// `input, output, logprob` per sentence; greedy unless a temperature is
/// set. With a length-ratio bound, rows at or above it are dropped.
pub fn cmd_generate(checkpoint: &Path, input: &Path, run: &RunConfig, out: &mut dyn Write) -> Result<usize> {
    let m = load(checkpoint, run)?;
    let lines = data::read_corpus(input)?;
    let seqs = data::encode_all(&m.vocab, &lines, m.run.model.max_len)?;
    let xs: Vec<&[u32]> = seqs.iter().map(|s| s.ids.as_slice()).collect();
    let gens = generate_batch(m.model(), &xs, decode_mode(&m.run), m.run.eval.max_output_len, m.run.seed)?;
    let keep: Vec<usize> = match m.run.eval.max_len_ratio {
        Some(ratio) => {
            // each side is (row, token count)
            let tagged: Vec<_> = (0..gens.len()).map(|i| ((i, xs[i].len()), (i, gens[i].ids.len()))).collect();
            filter_pairs(&tagged, |&(_, n)| n, ratio)?.into_iter().map(|((i, _), _)| i).collect()
        }
        None => (0..gens.len()).collect(),
    };
    header(out, &m.run)?;
    writeln!(out, "input\toutput\tlogprob")?;
    for &i in &keep {
        writeln!(out, "{}\t{}\t{:.6}", seqs[i].text, m.vocab.decode(&gens[i].ids), gens[i].log_prob)?;
    }
    Ok(keep.len())
}

/// Temperature whose samples overlap their inputs at the target BLEU.
pub fn cmd_calibrate(checkpoint: &Path, input: &Path, run: &RunConfig, out: &mut dyn Write) -> Result<f64> {
    let m = load(checkpoint, run)?;
    let lines = data::read_corpus(input)?;
    let sample: Vec<TokenSequence> = data::encode_all(&m.vocab, &lines, m.run.model.max_len)?;
    let e = &m.run.eval;
    let cal = calibrate_model(
        m.model(),
        &m.vocab,
        &sample,
        e.target_bleu,
        e.tolerance,
        e.max_output_len,
        m.run.seed,
        &e.calibration,
    )?;
    header(out, &m.run)?;
    writeln!(out, "target\ttemperature\toverlap\titerations\tconverged")?;
    writeln!(
        out,
        "{:.2}\t{:.6}\t{:.4}\t{}\t{}",
        e.target_bleu, cal.temperature, cal.overlap, cal.iterations, cal.converged
    )?;
    Ok(cal.temperature)
}

/// Each labeled example followed by a sampled paraphrase. `out` receives
/// exactly the doubled corpus; the provenance header goes to `log`.
pub fn cmd_augment(
    checkpoint: &Path,
    input: &Path,
    run: &RunConfig,
    out: &mut dyn Write,
    log: &mut dyn Write,
) -> Result<usize> {
    let m = load(checkpoint, run)?;
    let Some(temperature) = m.run.eval.temperature else {
        bail!("augment samples paraphrases and needs --temperature (see the calibrate command)");
    };
    let corpus = data::read_labeled(input)?;
    let doubled =
        augment_corpus(m.model(), &m.vocab, &corpus, temperature, m.run.eval.max_output_len, m.run.seed)?;
    header(log, &m.run)?;
    data::write_labeled(out, &doubled)?;
    Ok(doubled.len())
}

/// NB-SVM trained on one labeled file and evaluated on another.
pub fn cmd_nbsvm_eval(train: &Path, test: &Path, run: &RunConfig, out: &mut dyn Write) -> Result<f64> {
    let tr = data::read_labeled(train)?;
    let te = data::read_labeled(test)?;
    let model = NbSvm::fit(&tr, &run.eval.nbsvm)?;
    let rep = evaluate_classifier(&model, &te)?;
    header(out, run)?;
    writeln!(out, "train\ttest\taccuracy\tmacro_f1")?;
    writeln!(out, "{}\t{}\t{:.4}\t{:.4}", tr.len(), te.len(), rep.accuracy, rep.macro_f1)?;
    Ok(rep.accuracy)
}
