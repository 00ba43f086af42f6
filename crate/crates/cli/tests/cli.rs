//! Runs the binary end to end on small inputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_monopara"))
}

fn toy20() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data/toy20.txt")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn tiny_config(dir: &Path) -> String {
    write(
        dir,
        "run.toml",
        "seed = 4\n[model]\nd_model = 16\nffn_dim = 32\nlatent_positions = 2\ncodebook_size = 16\n\
         [train]\nsteps = 30\nbatch_size = 10\n[train.ema]\ndead_code_steps = 10\n",
    )
}

#[test]
fn train_then_score_and_generate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let model = dir.path().join("m");
    let out = stdout(&run(&["--config", &cfg, "train", toy20().to_str().unwrap(), "--dir", model.to_str().unwrap()]));
    assert!(out.starts_with("# config_hash="), "{out}");
    let report = std::fs::read_to_string(model.join("train_report.tsv")).unwrap();
    assert_eq!(report.lines().filter(|l| !l.starts_with('#')).count(), 31);
    assert!(report.contains("seed=4"));

    let ck = model.join("model.ckpt");
    let ck = ck.to_str().unwrap();
    let pairs = write(dir.path(), "pairs.tsv", "the cat sat on the mat\tthe cat sat on the mat\n");
    let scored = stdout(&run(&["--config", &cfg, "score", ck, &pairs]));
    let row = scored.lines().last().unwrap();
    let fields: Vec<&str> = row.split('\t').collect();
    assert_eq!(fields.len(), 4);
    assert!(fields[2].parse::<f64>().unwrap() < 0.0);

    let input = write(dir.path(), "in.txt", "the cat sat on the mat\na dog ran across the park\n");
    let generated = stdout(&run(&["--config", &cfg, "generate", ck, &input]));
    assert_eq!(generated.lines().filter(|l| !l.starts_with('#')).count(), 3);

    let labeled = write(dir.path(), "lab.tsv", "a\tthe cat sat on the mat\nb\ta dog ran across the park\nb\tthe dog\n");
    let aug = run(&["--config", &cfg, "--temperature", "0.7", "augment", ck, &labeled]);
    assert_eq!(stdout(&aug).lines().count(), 6);
    assert!(String::from_utf8_lossy(&aug.stderr).contains("config_hash="));
}

#[test]
fn plain_variant_is_recorded_in_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let model = dir.path().join("m");
    let o = run(&[
        "--config", &cfg, "--variant", "plain-vqvae", "--steps", "2", "train",
        toy20().to_str().unwrap(), "--dir", model.to_str().unwrap(),
    ]);
    stdout(&o);
    let ck = monopara_cli::checkpoint::Checkpoint::load(&model.join("model.ckpt")).unwrap();
    assert_eq!(ck.run.train.variant, monopara::training::Variant::PlainVqvae);
    assert_eq!(ck.model().alpha(), vec![0.0]);
}

#[test]
fn empty_pairs_give_empty_output() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = write(dir.path(), "empty.tsv", "");
    let o = run(&["score", "unused.ckpt", &pairs]);
    assert_eq!(stdout(&o), "");
}

#[test]
fn malformed_row_is_reported_by_line() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = write(dir.path(), "bad.tsv", "a b\tc d\nno tab here\n");
    let o = run(&["score", "unused.ckpt", &pairs]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn oracle_scorer_ranks_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = write(dir.path(), "pairs.tsv", "a b c\ta b\nd e f\te f\ng h\tg h i\n");
    let pool = write(dir.path(), "pool.txt", "x y\nz w\nq r s\nt u\n");
    let out = stdout(&run(&["--negatives", "3", "rank", &pairs, "--pool", &pool, "--scorer", "oracle"]));
    assert!(out.lines().next().unwrap().starts_with("# config_hash="));
    assert!(out.trim_end().ends_with("1.0000"), "{out}");
}

#[test]
fn small_pool_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let pairs = write(dir.path(), "pairs.tsv", "a b c\ta b\n");
    let o = run(&["rank", &pairs, "--scorer", "random"]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("pool too small"));
}

#[test]
fn nbsvm_eval_reports_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.tsv", "p\tgood film\nn\tbad film\np\tgreat plot\nn\tawful plot\n");
    let test = write(dir.path(), "test.tsv", "p\tgood plot\nn\tawful film\n");
    let out = stdout(&run(&["--seed", "3", "nbsvm-eval", &train, &test]));
    assert!(out.contains("seed=3"));
    assert!(out.lines().last().unwrap().starts_with("4\t2\t1.0000"), "{out}");
}

#[test]
fn single_class_data_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let train = write(dir.path(), "train.tsv", "p\tgood film\np\tgreat plot\n");
    let o = run(&["nbsvm-eval", &train, &train]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("two classes"));
}
