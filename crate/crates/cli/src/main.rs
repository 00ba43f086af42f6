use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use monopara::evalsuite::FeatureMode;
use monopara::training::{AlphaMode, Variant};
use monopara_cli::commands::{self, ScorerKind};
use monopara_cli::config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "monopara", version, about = "Residual vector-quantized paraphrase autoencoder")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; flags below take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    variant: Option<Variant>,
    /// Force the residual weight: 0, 1 or free.
    #[arg(long, global = true)]
    alpha_fixed: Option<AlphaMode>,
    #[arg(long, global = true)]
    steps: Option<u64>,
    #[arg(long, global = true)]
    temperature: Option<f64>,
    #[arg(long, global = true)]
    target_bleu: Option<f64>,
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    #[arg(long, global = true)]
    max_len_ratio: Option<f64>,
    /// score-only or score+latent.
    #[arg(long, global = true)]
    features: Option<FeatureMode>,
    #[arg(long, global = true)]
    length_normalize: bool,
    #[arg(long, global = true)]
    negatives: Option<usize>,
    /// Report destination; standard output when absent.
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on a one-sentence-per-line corpus.
    Train {
        corpus: PathBuf,
        /// Directory receiving checkpoints, vocabulary and report.
        #[arg(long)]
        dir: PathBuf,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Conditional log-probabilities in both directions for a pair file.
    Score { checkpoint: PathBuf, pairs: PathBuf },
    /// Rank positive pairs against sampled non-paraphrases.
    Rank {
        pairs: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Distractor sentences, one per line.
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "model")]
        scorer: ScorerKind,
    },
    /// Paraphrase identification with logistic regression.
    Identify { checkpoint: PathBuf, train: PathBuf, test: PathBuf },
    /// Semantic similarity with ridge regression.
    Sts { checkpoint: PathBuf, train: PathBuf, test: PathBuf },
    /// Paraphrase every sentence of a corpus.
    Generate { checkpoint: PathBuf, input: PathBuf },
    /// Find the temperature hitting the target input overlap.
    Calibrate { checkpoint: PathBuf, input: PathBuf },
    /// Double a labeled corpus with sampled paraphrases.
    Augment { checkpoint: PathBuf, input: PathBuf },
    /// Train and evaluate the NB-SVM classifier.
    NbsvmEval { train: PathBuf, test: PathBuf },
}

impl Common {
    fn run_config(&self) -> Result<RunConfig> {
        let o = Overrides {
            seed: self.seed,
            variant: self.variant,
            alpha_fixed: self.alpha_fixed,
            steps: self.steps,
            temperature: self.temperature,
            target_bleu: self.target_bleu,
            tolerance: self.tolerance,
            max_len_ratio: self.max_len_ratio,
            features: self.features,
            length_normalize: self.length_normalize,
            negatives: self.negatives,
        };
        RunConfig::load(self.config.as_deref(), &o)
    }

    fn output(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.out {
            Some(p) => Box::new(std::io::BufWriter::new(std::fs::File::create(p)?)),
            None => Box::new(std::io::stdout().lock()),
        })
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let run = cli.common.run_config()?;
    let mut out = cli.common.output()?;
    match &cli.command {
        Command::Train { corpus, dir, resume } => {
            let report = commands::cmd_train(corpus, &run, dir, resume.as_deref())?;
            if let Some(last) = report.last() {
                writeln!(out, "# {}", run.header())?;
                writeln!(out, "step\tnll\tusage_entropy\tcheckpoint")?;
                let ck = dir.join(commands::CHECKPOINT_FILE);
                writeln!(out, "{}\t{:.6}\t{:.4}\t{}", last.step, last.nll, last.usage_entropy, ck.display())?;
            }
        }
        Command::Score { checkpoint, pairs } => {
            commands::cmd_score(checkpoint, pairs, &run, &mut out)?;
        }
        Command::Rank { pairs, checkpoint, pool, scorer } => {
            commands::cmd_rank(checkpoint.as_deref(), pairs, pool.as_deref(), *scorer, &run, &mut out)?;
        }
        Command::Identify { checkpoint, train, test } => {
            commands::cmd_identify(checkpoint, train, test, &run, &mut out)?;
        }
        Command::Sts { checkpoint, train, test } => {
            commands::cmd_sts(checkpoint, train, test, &run, &mut out)?;
        }
        Command::Generate { checkpoint, input } => {
            commands::cmd_generate(checkpoint, input, &run, &mut out)?;
        }
        Command::Calibrate { checkpoint, input } => {
            commands::cmd_calibrate(checkpoint, input, &run, &mut out)?;
        }
        Command::Augment { checkpoint, input } => {
            commands::cmd_augment(checkpoint, input, &run, &mut out, &mut std::io::stderr())?;
        }
        Command::NbsvmEval { train, test } => {
            commands::cmd_nbsvm_eval(train, test, &run, &mut out)?;
        }
    }
    out.flush()?;
    Ok(())
}
