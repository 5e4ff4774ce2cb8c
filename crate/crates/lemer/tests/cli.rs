use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
[corpus]
text-vocab = 40
speech-vocab = 60
text-salient = 3
speech-salient = 5
salience-prob = 0.4
text-len = { min = 4, max = 8 }
speech-len = { min = 6, max = 12 }

[data]
utterances = 40
train-fraction = 0.75

[train]
epochs = 2
batch-size = 4
learning-rate = 0.01
k-text = 3
k-speech = 5
d-text = 6
d-speech = 6

[ablation]
seeds = [0, 1]
"#;

fn lemer(args: &[&str], env_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lemer"));
    cmd.args(args).env_remove("LEMER_OUTPUT_ROOT");
    if let Some(root) = env_root {
        cmd.env("LEMER_OUTPUT_ROOT", root);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

struct Run {
    dir: tempfile::TempDir,
    config: PathBuf,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("tiny.toml");
        std::fs::write(&config, TINY).unwrap();
        Self { dir, config }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, command: &str, name: &str, extra: &[&str]) -> Output {
        let out = self.out(name);
        let mut args = vec![command, "--config", self.config.to_str().unwrap(), "--output", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        lemer(&args, None)
    }
}

#[test]
fn grad_check_reports_each_op_and_exits_zero() {
    let run = Run::new();
    let o = run.run("grad-check", "gc", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    for op in ["matmul", "row_softmax", "row_l2_normalize", "pool", "cross_entropy", "objective[constraint]", "objective[only-vanilla]"] {
        assert!(text.lines().any(|l| l.starts_with(op) && l.ends_with("ok")), "{op}\n{text}");
    }
    assert!(run.out("gc/reports/grad_check.csv").exists());
}

#[test]
fn grad_check_with_impossible_tolerance_exits_one() {
    let run = Run::new();
    let o = run.run("grad-check", "gc", &["--tolerance", "1e-300", "--instances", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn train_with_zero_epochs_writes_an_initial_checkpoint() {
    let run = Run::new();
    let o = run.run("train", "t0", &["--epochs", "0"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let ckpt = lemer::checkpoint::load(&run.out("t0/checkpoints/final.ckpt")).unwrap();
    assert_eq!(ckpt.state.epoch, 0);
    assert!(ckpt.state.log.records.is_empty());
    for sub in ["config", "checkpoints", "logs", "reports", "plots"] {
        assert!(run.out("t0").join(sub).is_dir(), "{sub}");
    }
}

#[test]
fn unknown_subcommand_and_flag_exit_two_with_usage() {
    let o = lemer(&["frobnicate"], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"));
    let o = lemer(&["train", "--no-such-flag"], None);
    assert_eq!(o.status.code(), Some(2));
    let o = lemer(&[], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let run = Run::new();
    std::fs::write(&run.config, format!("{TINY}\n[train.weights]\nmu9 = 1.0\n")).unwrap();
    let o = run.run("train", "t", &[]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("mu9"));
}

#[test]
fn validation_failure_exits_one_with_one_line() {
    let run = Run::new();
    let o = run.run("train", "t", &["--batch-size", "0"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(stderr(&o).lines().count(), 1);
    let o = run.run("train", "t", &["--k-speech", "61"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flags_override_file_values_in_the_snapshot() {
    let run = Run::new();
    let o = run.run("extract-labels", "x", &["--k-text", "2"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let snap = lemer::config::RunConfig::load(&run.out("x/config/resolved.toml")).unwrap();
    assert_eq!(snap.train.k_text, 2);
    assert_eq!(snap.train.k_speech, 5);
    assert_eq!(snap.train.epochs, 2);
    let labels = std::fs::read_to_string(run.out("x/reports/labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 1 + 4 * 2 + 4 * 5);
}

#[test]
fn snapshot_reproduces_the_run_exactly() {
    let run = Run::new();
    let o = run.run("train", "a", &["--seed", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let snapshot = run.out("a/config/resolved.toml");
    let b = run.out("b");
    let o = lemer(&["train", "--config", snapshot.to_str().unwrap(), "--output", b.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let read = |p: PathBuf| std::fs::read(p).unwrap();
    assert_eq!(read(run.out("a/checkpoints/final.ckpt")), read(b.join("checkpoints/final.ckpt")));
    assert_eq!(read(run.out("a/logs/train_log.csv")), read(b.join("logs/train_log.csv")));
}

#[test]
fn corpus_file_pipeline_and_inputs_stay_untouched() {
    let run = Run::new();
    let o = run.run("gen-corpus", "g", &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let corpus = run.out("g/data/corpus.txt");
    let before = std::fs::read(&corpus).unwrap();
    let config_before = std::fs::read(&run.config).unwrap();

    let c = corpus.to_str().unwrap();
    let o = run.run("train", "t", &["--corpus", c]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let log = std::fs::read_to_string(run.out("t/logs/train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,L_m,L_c,L_g_t,L_g_s,total,"));
    assert_eq!(log.lines().count(), 3);

    let ckpt = run.out("t/checkpoints/final.ckpt");
    let ck = ckpt.to_str().unwrap();
    let ckpt_before = std::fs::read(&ckpt).unwrap();
    let o = run.run("evaluate", "e", &["--corpus", c, "--checkpoint", ck]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("WA "));
    let eval = std::fs::read_to_string(run.out("e/reports/eval.csv")).unwrap();
    let metrics = std::fs::read_to_string(run.out("t/reports/metrics.csv")).unwrap();
    assert_eq!(eval, metrics);

    let o = run.run("export-attention", "x", &["--corpus", c, "--checkpoint", ck, "--utterance", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(run.out("x/plots/attention.svg").exists());
    let text = std::fs::read_to_string(run.out("x/reports/attention_text.csv")).unwrap();
    assert!(text.starts_with("position,symbol,value,planted\n"));
    assert!(run.out("x/reports/attention_contrast.csv").exists());

    let o = run.run("train", "r", &["--corpus", c, "--resume", ck, "--epochs", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let resumed = lemer::checkpoint::load(&run.out("r/checkpoints/final.ckpt")).unwrap();
    assert_eq!(resumed.state.epoch, 3);

    assert_eq!(std::fs::read(&corpus).unwrap(), before);
    assert_eq!(std::fs::read(&ckpt).unwrap(), ckpt_before);
    assert_eq!(std::fs::read(&run.config).unwrap(), config_before);
}

#[test]
fn missing_checkpoint_is_a_usage_error() {
    let run = Run::new();
    assert_eq!(run.run("evaluate", "e", &[]).status.code(), Some(2));
}

#[test]
fn ablation_sweep_and_score_fusion_write_reports() {
    let run = Run::new();
    let o = run.run("ablate", "ab", &["--set", "fusion-modes", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let summary = std::fs::read_to_string(run.out("ab/reports/ablation.csv")).unwrap();
    let names: Vec<&str> = summary.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(names, ["constraint", "sum", "only-label", "only-vanilla"]);
    let per_seed = std::fs::read_to_string(run.out("ab/reports/ablation_seeds.csv")).unwrap();
    assert_eq!(per_seed.lines().count(), 1 + 4 * 2);

    let o = run.run("sweep-k", "sk", &["--modality", "speech", "--values", "1,3,5", "--seeds", "0", "--epochs", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sweep = std::fs::read_to_string(run.out("sk/reports/sweep_k.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 4);
    assert!(run.out("sk/plots/sweep_k.svg").exists());
    assert_eq!(run.run("sweep-k", "sk2", &["--values", "61"]).status.code(), Some(1));

    let o = run.run("score-fusion", "sf", &["--epochs", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(run.out("sf/checkpoints/text.ckpt").exists());
    assert!(run.out("sf/reports/score_fusion.csv").exists());
}

#[test]
fn output_root_comes_from_the_environment() {
    let run = Run::new();
    let root = run.out("root");
    let o = lemer(&["extract-labels", "--config", run.config.to_str().unwrap()], Some(&root));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(root.join("extract-labels/reports/labels.csv").exists());
    assert!(root.join("extract-labels/config/resolved.toml").exists());
}
