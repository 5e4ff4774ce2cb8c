//! Command-line driver.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use lemer_core::ablation::{
    fusion_mode_conditions, run_ablation, speech_init_conditions, standard_conditions, sweep_k, text_init_conditions,
    Condition, DEFAULT_SPEECH_K, DEFAULT_TEXT_K,
};
use lemer_core::attention::{attention_traces, planted_contrast};
use lemer_core::corpus::{generate, split, Corpus, Modality};
use lemer_core::eval::{evaluate, ScoreFusion};
use lemer_core::fusion::FusionMode;
use lemer_core::gradsuite::{all_within, run_suite};
use lemer_core::labelkit::{SpeechLabelInit, TextLabelInit};
use lemer_core::model::Task;
use lemer_core::trainer::{extract_descriptions, TrainConfig, TrainState};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{ConditionSet, OutputLayout, RunConfig};
use crate::corpus_file;
use crate::error::{write_file, Error, Result};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "lemer", version, about = "Label-embedding multimodal fusion on synthetic corpora")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Constraint,
    Sum,
    OnlyLabel,
    OnlyVanilla,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TaskArg {
    Multimodal,
    Text,
    Speech,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TextInitArg {
    Random,
    LabelWords,
    Tfidf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SpeechInitArg {
    Random,
    TextEmbedding,
    Codebook,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModalityArg {
    Text,
    Speech,
}

/// Flags shared by every subcommand. Each one overrides the config file.
#[derive(Debug, Clone, Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output directory [default: $LEMER_OUTPUT_ROOT/<command>, or runs/<command>].
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Corpus file instead of generating one.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    corpus_seed: Option<u64>,
    #[arg(long)]
    utterances: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
    /// Training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    task: Option<TaskArg>,
    #[arg(long, value_enum)]
    text_init: Option<TextInitArg>,
    #[arg(long, value_enum)]
    speech_init: Option<SpeechInitArg>,
    #[arg(long)]
    k_text: Option<usize>,
    #[arg(long)]
    k_speech: Option<usize>,
    /// Keep label embeddings fixed at their initialisation.
    #[arg(long)]
    frozen_labels: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus file.
    GenCorpus(Common),
    /// Extract top-K label descriptions from the training split.
    ExtractLabels(Common),
    /// Train a model and write its checkpoint, log and held-out metrics.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint up to --epochs.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the held-out split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate a set of conditions over several seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long, value_enum)]
        set: Option<ConditionSet>,
    },
    /// Sweep the number of label-description symbols.
    SweepK {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        modality: Option<ModalityArg>,
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<usize>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Train text-only and speech-only models and sum their logits.
    ScoreFusion(Common),
    /// Write class-averaged label attention of one held-out utterance.
    ExportAttention {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Index into the held-out split.
        #[arg(long)]
        utterance: Option<usize>,
    },
    /// Finite-difference check of every graph op and the full objective.
    GradCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        instances: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus(_) => "gen-corpus",
            Command::ExtractLabels(_) => "extract-labels",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Ablate { .. } => "ablate",
            Command::SweepK { .. } => "sweep-k",
            Command::ScoreFusion(_) => "score-fusion",
            Command::ExportAttention { .. } => "export-attention",
            Command::GradCheck { .. } => "grad-check",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::GenCorpus(c) | Command::ExtractLabels(c) | Command::ScoreFusion(c) => c,
            Command::Train { common, .. }
            | Command::Evaluate { common, .. }
            | Command::Ablate { common, .. }
            | Command::SweepK { common, .. }
            | Command::ExportAttention { common, .. }
            | Command::GradCheck { common, .. } => common,
        }
    }
}

fn apply_common(cfg: &mut RunConfig, c: &Common) {
    macro_rules! set {
        ($flag:expr => $($target:tt)+) => {
            if let Some(v) = $flag.clone() {
                $($target)+ = v.into();
            }
        };
    }
    set!(c.output => cfg.output_dir);
    if c.corpus.is_some() {
        cfg.data.corpus_file = c.corpus.clone();
    }
    set!(c.corpus_seed => cfg.corpus.seed);
    set!(c.utterances => cfg.data.utterances);
    set!(c.train_fraction => cfg.data.train_fraction);
    set!(c.seed => cfg.train.seed);
    set!(c.epochs => cfg.train.epochs);
    set!(c.batch_size => cfg.train.batch_size);
    set!(c.learning_rate => cfg.train.learning_rate);
    set!(c.k_text => cfg.train.k_text);
    set!(c.k_speech => cfg.train.k_speech);
    if let Some(m) = c.mode {
        cfg.train.mode = match m {
            ModeArg::Constraint => FusionMode::Constraint,
            ModeArg::Sum => FusionMode::Sum,
            ModeArg::OnlyLabel => FusionMode::OnlyLabel,
            ModeArg::OnlyVanilla => FusionMode::OnlyVanilla,
        };
    }
    if let Some(t) = c.task {
        cfg.train.task = match t {
            TaskArg::Multimodal => Task::Multimodal,
            TaskArg::Text => Task::Text,
            TaskArg::Speech => Task::Speech,
        };
    }
    if let Some(t) = c.text_init {
        cfg.train.text_init = match t {
            TextInitArg::Random => TextLabelInit::Random,
            TextInitArg::LabelWords => TextLabelInit::LabelWords,
            TextInitArg::Tfidf => TextLabelInit::Tfidf,
        };
    }
    if let Some(s) = c.speech_init {
        cfg.train.speech_init = match s {
            SpeechInitArg::Random => SpeechLabelInit::Random,
            SpeechInitArg::TextEmbedding => SpeechLabelInit::TextEmbedding,
            SpeechInitArg::Codebook => SpeechLabelInit::Codebook,
        };
    }
    if c.frozen_labels {
        cfg.train.labels_trainable = false;
    }
}

fn modality(m: ModalityArg) -> Modality {
    match m {
        ModalityArg::Text => Modality::Text,
        ModalityArg::Speech => Modality::Speech,
    }
}

/// Merges defaults, the config file and flags.
fn resolve(cmd: &Command) -> Result<RunConfig> {
    let common = cmd.common();
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_common(&mut cfg, common);
    match cmd {
        Command::Train { resume, .. } => {
            if resume.is_some() {
                cfg.checkpoint = resume.clone();
            }
        }
        Command::Evaluate { checkpoint, .. } => {
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint.clone();
            }
        }
        Command::ExportAttention { checkpoint, utterance, .. } => {
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint.clone();
            }
            if let Some(u) = utterance {
                cfg.export.utterance = *u;
            }
        }
        Command::Ablate { seeds, set, .. } => {
            if let Some(s) = seeds {
                cfg.ablation.seeds = s.clone();
            }
            if let Some(s) = set {
                cfg.ablation.set = *s;
            }
        }
        Command::SweepK { modality: m, values, seeds, .. } => {
            if let Some(m) = m {
                cfg.sweep.modality = modality(*m);
            }
            if let Some(v) = values {
                cfg.sweep.values = v.clone();
            }
            if let Some(s) = seeds {
                cfg.ablation.seeds = s.clone();
            }
        }
        Command::GradCheck { tolerance, instances, .. } => {
            if let Some(t) = tolerance {
                cfg.grad_check.tolerance = *t;
            }
            if let Some(n) = instances {
                cfg.grad_check.op_instances = *n;
                cfg.grad_check.model_instances = *n;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    match &cfg.data.corpus_file {
        Some(p) => corpus_file::load(p),
        None => Ok(generate(&cfg.corpus, cfg.data.utterances)?),
    }
}

fn load_split(cfg: &RunConfig) -> Result<(Corpus, Corpus)> {
    let corpus = load_corpus(cfg)?;
    Ok(split(&corpus, cfg.data.train_fraction, corpus.spec.seed)?)
}

fn require_checkpoint(cfg: &RunConfig) -> Result<Checkpoint> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Usage("--checkpoint is required".into()))?;
    checkpoint::load(path)
}

fn conditions(cfg: &RunConfig) -> Vec<Condition> {
    match cfg.ablation.set {
        ConditionSet::All => standard_conditions(&cfg.train),
        ConditionSet::FusionModes => fusion_mode_conditions(&cfg.train),
        ConditionSet::TextInit => text_init_conditions(&cfg.train),
        ConditionSet::SpeechInit => speech_init_conditions(&cfg.train),
    }
}

fn execute(cmd: &Command, cfg: &mut RunConfig) -> Result<i32> {
    let out = OutputLayout::create(cfg.output_dir(cmd.name()))?;
    match cmd {
        Command::GenCorpus(_) => {
            let corpus = load_corpus(cfg)?;
            let path = out.data("corpus.txt");
            corpus_file::save(&path, &corpus)?;
            println!("wrote {} utterances to {}", corpus.len(), path.display());
        }
        Command::ExtractLabels(_) => {
            let (train, _) = load_split(cfg)?;
            let d = extract_descriptions(&train, cfg.train.k_text, cfg.train.k_speech)?;
            let path = out.report("labels.csv");
            report::labels_csv(&path, &d.text, &d.speech)?;
            println!("wrote label descriptions to {}", path.display());
        }
        Command::Train { .. } => {
            let (train, test) = load_split(cfg)?;
            let mut state = match &cfg.checkpoint {
                Some(p) => {
                    let mut s = checkpoint::load(p)?.state;
                    s.config.epochs = cfg.train.epochs;
                    cfg.train = s.config.clone();
                    s
                }
                None => TrainState::initialize(&train, &cfg.train)?,
            };
            out.write_snapshot(cfg)?;
            while state.epoch < state.config.epochs {
                let r = state.run_epoch(&train, Some(&test))?;
                println!(
                    "epoch {:>3}  loss {:.4}  held-out WA {:.4} UA {:.4}",
                    r.epoch,
                    r.losses.total,
                    r.held_out_wa.unwrap_or(f64::NAN),
                    r.held_out_ua.unwrap_or(f64::NAN)
                );
            }
            let metrics = evaluate(&state.model(), &test)?;
            report::train_log_csv(&out.log("train_log.csv"), &state.log)?;
            report::metrics_csv(&out.report("metrics.csv"), "held-out", &metrics)?;
            report::confusion_csv(&out.report("confusion.csv"), &metrics)?;
            let path = out.checkpoint("final.ckpt");
            checkpoint::save(
                &path,
                &Checkpoint {
                    state,
                    metrics: Some(metrics.clone()),
                },
            )?;
            println!("held-out WA {:.4} UA {:.4}; checkpoint {}", metrics.wa, metrics.ua, path.display());
            return Ok(0);
        }
        Command::Evaluate { .. } => {
            let ckpt = require_checkpoint(cfg)?;
            let (_, test) = load_split(cfg)?;
            let r = evaluate(&ckpt.state.model(), &test)?;
            report::metrics_csv(&out.report("eval.csv"), "held-out", &r)?;
            report::confusion_csv(&out.report("confusion.csv"), &r)?;
            println!("WA {:.4} UA {:.4} (n = {})", r.wa, r.ua, r.n);
        }
        Command::Ablate { .. } => {
            let report = run_ablation(&conditions(cfg), &cfg.seeded_protocol()?, &cfg.ablation.seeds)?;
            report::ablation_summary_csv(&out.report("ablation.csv"), &report)?;
            report::ablation_seeds_csv(&out.report("ablation_seeds.csv"), &report)?;
            write_file(&out.report("ablation.json"), serde_json::to_vec_pretty(&report)?)?;
            for c in &report.conditions {
                println!(
                    "{:<26} WA {:.4} UA {:.4}  failures {}",
                    c.name,
                    c.mean_wa().unwrap_or(f64::NAN),
                    c.mean_ua().unwrap_or(f64::NAN),
                    c.failures()
                );
            }
        }
        Command::SweepK { .. } => {
            let m = cfg.sweep.modality;
            let values = if cfg.sweep.values.is_empty() {
                match m {
                    Modality::Text => DEFAULT_TEXT_K.to_vec(),
                    Modality::Speech => DEFAULT_SPEECH_K.to_vec(),
                }
            } else {
                cfg.sweep.values.clone()
            };
            cfg.sweep.values = values.clone();
            let points = sweep_k(&values, m, &cfg.train, &cfg.seeded_protocol()?, &cfg.ablation.seeds)?;
            report::sweep_csv(&out.report("sweep_k.csv"), &points)?;
            let title = match m {
                Modality::Text => "mean UA vs K (text)",
                Modality::Speech => "mean UA vs K (speech)",
            };
            report::sweep_svg(&out.plot("sweep_k.svg"), title, &points)?;
            for p in &points {
                println!("K {:>5}  UA {:.4}", p.k, p.report.mean_ua().unwrap_or(f64::NAN));
            }
        }
        Command::ScoreFusion(_) => {
            let (train, test) = load_split(cfg)?;
            let mut models = Vec::new();
            for (task, name) in [(Task::Text, "text"), (Task::Speech, "speech")] {
                let tc = TrainConfig { task, ..cfg.train.clone() };
                let mut state = TrainState::initialize(&train, &tc)?;
                state.run(&train, Some(&test))?;
                let r = evaluate(&state.model(), &test)?;
                report::metrics_csv(&out.report(&format!("{name}_metrics.csv")), name, &r)?;
                report::train_log_csv(&out.log(&format!("{name}_train_log.csv")), &state.log)?;
                let model = state.model();
                checkpoint::save(&out.checkpoint(&format!("{name}.ckpt")), &Checkpoint { state, metrics: Some(r) })?;
                models.push(model);
            }
            let r = evaluate(
                &ScoreFusion {
                    text: &models[0],
                    speech: &models[1],
                },
                &test,
            )?;
            report::metrics_csv(&out.report("score_fusion.csv"), "score-fusion", &r)?;
            report::confusion_csv(&out.report("confusion.csv"), &r)?;
            println!("score fusion WA {:.4} UA {:.4}", r.wa, r.ua);
        }
        Command::ExportAttention { .. } => {
            let ckpt = require_checkpoint(cfg)?;
            let (_, test) = load_split(cfg)?;
            let model = ckpt.state.model();
            let i = cfg.export.utterance;
            let utt = test.utterances.get(i).ok_or_else(|| {
                Error::Config(format!("utterance {i} out of range for a held-out split of {}", test.len()))
            })?;
            let traces = attention_traces(&model, utt, &test.planted)?;
            report::attention_csv(&out.report("attention_text.csv"), &traces[0])?;
            report::attention_csv(&out.report("attention_speech.csv"), &traces[1])?;
            report::attention_svg(&out.plot("attention.svg"), &traces)?;
            let contrast = planted_contrast(&model, &test.utterances, &test.planted)?;
            let rows = ["text", "speech"].iter().zip(&contrast).map(|(m, c)| {
                vec![
                    m.to_string(),
                    c.planted.to_string(),
                    c.background.to_string(),
                    c.planted_positions.to_string(),
                    c.background_positions.to_string(),
                ]
            });
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["modality", "planted_mean", "background_mean", "planted_positions", "background_positions"])?;
            for r in rows {
                w.write_record(&r)?;
            }
            write_file(&out.report("attention_contrast.csv"), w.into_inner().map_err(|e| Error::Encode(e.to_string()))?)?;
            println!(
                "utterance {i} (label {}): text planted {:.4} / background {:.4}, speech planted {:.4} / background {:.4}",
                utt.label, contrast[0].planted, contrast[0].background, contrast[1].planted, contrast[1].background
            );
        }
        Command::GradCheck { .. } => {
            let reports = run_suite(&cfg.grad_check.suite())?;
            let tol = cfg.grad_check.tolerance;
            report::grad_check_csv(&out.report("grad_check.csv"), &reports, tol)?;
            for r in &reports {
                let verdict = if r.max_relative_error <= tol { "ok" } else { "FAIL" };
                println!("{:<24} max rel err {:.3e}  probes {:>6}  {verdict}", r.op_name, r.max_relative_error, r.probe_count);
            }
            out.write_snapshot(cfg)?;
            if !all_within(&reports, tol) {
                eprintln!("error: gradient check exceeded tolerance {tol:e}");
                return Ok(1);
            }
            return Ok(0);
        }
    }
    out.write_snapshot(cfg)?;
    Ok(0)
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    let result = resolve(&cli.command).and_then(|mut cfg| execute(&cli.command, &mut cfg));
    match result {
        Ok(code) => code,
        Err(e) => {
            let line = e.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
            eprintln!("error: {line}");
            e.exit_code()
        }
    }
}
