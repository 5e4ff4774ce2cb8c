//! TOML run configuration.
//!
//! Precedence is command-line flags, then the config file, then the built-in
//! defaults. Every run writes the resolved configuration to
//! `config/resolved.toml` in its output directory.

use std::path::{Path, PathBuf};

use lemer_core::ablation::Protocol;
use lemer_core::corpus::{CorpusSpec, Modality};
use lemer_core::gradsuite::{SuiteConfig, GRAD_TOLERANCE};
use lemer_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{read_file, write_file, Error, Result};

/// Used for the default output root when `--output` and `output-dir` are unset.
pub const OUTPUT_ROOT_ENV: &str = "LEMER_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "runs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct DataConfig {
    /// Utterances generated when no corpus file is given.
    pub utterances: usize,
    pub train_fraction: f64,
    /// Existing corpus file; replaces generation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_file: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            utterances: 1000,
            train_fraction: 0.8,
            corpus_file: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct AblationConfig {
    pub seeds: Vec<u64>,
    /// Which condition set `ablate` runs.
    pub set: ConditionSet,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            seeds: (0..5).collect(),
            set: ConditionSet::All,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionSet {
    /// Every condition below plus the unguided baseline and score fusion.
    All,
    /// The four fusion modes.
    FusionModes,
    /// Text-only label-embedding initialisations.
    TextInit,
    /// Speech-only label-embedding initialisations.
    SpeechInit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SweepConfig {
    pub modality: Modality,
    /// Empty means the default grid of the modality.
    pub values: Vec<usize>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            modality: Modality::Speech,
            values: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct GradCheckConfig {
    pub seed: u64,
    pub op_instances: usize,
    pub model_instances: usize,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        let s = SuiteConfig::default();
        Self {
            seed: s.seed,
            op_instances: s.op_instances,
            model_instances: s.model_instances,
            tolerance: GRAD_TOLERANCE,
        }
    }
}

impl GradCheckConfig {
    pub fn suite(&self) -> SuiteConfig {
        SuiteConfig {
            seed: self.seed,
            op_instances: self.op_instances,
            model_instances: self.model_instances,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExportConfig {
    /// Index into the held-out split.
    pub utterance: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Checkpoint read by `evaluate`, `export-attention` and resumed `train`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    pub corpus: CorpusSpec,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub ablation: AblationConfig,
    pub sweep: SweepConfig,
    pub grad_check: GradCheckConfig,
    pub export: ExportConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Usage(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::Config(format!("{} is not UTF-8", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Usage(m) => Error::Usage(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Encode(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.train.validate()?;
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::Config("data.train-fraction must lie in (0, 1)".into()));
        }
        if self.data.corpus_file.is_none() && self.data.utterances == 0 {
            return Err(Error::Config("data.utterances must be positive".into()));
        }
        if self.ablation.seeds.is_empty() {
            return Err(Error::Config("ablation.seeds must not be empty".into()));
        }
        if !(self.grad_check.tolerance > 0.0) {
            return Err(Error::Config("grad-check.tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn protocol(&self) -> Protocol {
        Protocol {
            corpus: self.corpus.clone(),
            utterances: self.data.utterances,
            train_fraction: self.data.train_fraction,
        }
    }

    /// Protocol for commands that regenerate a corpus per seed.
    pub fn seeded_protocol(&self) -> Result<Protocol> {
        if self.data.corpus_file.is_some() {
            return Err(Error::Config(
                "ablate and sweep-k generate one corpus per seed; data.corpus-file cannot be used".into(),
            ));
        }
        Ok(self.protocol())
    }

    /// `output-dir` if set, otherwise `<root>/<command>` where root comes
    /// from the environment or defaults to `runs`.
    pub fn output_dir(&self, command: &str) -> PathBuf {
        match &self.output_dir {
            Some(p) => p.clone(),
            None => {
                let root = std::env::var_os(OUTPUT_ROOT_ENV)
                    .map(PathBuf::from)
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
                root.join(command)
            }
        }
    }
}

/// Fixed layout of a run directory.
#[derive(Debug, Clone)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub const SUBDIRS: [&'static str; 6] = ["config", "data", "checkpoints", "logs", "reports", "plots"];

    pub fn create(root: PathBuf) -> Result<Self> {
        for sub in Self::SUBDIRS {
            let dir = root.join(sub);
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        Ok(Self { root })
    }

    pub fn config(&self, name: &str) -> PathBuf {
        self.root.join("config").join(name)
    }
    pub fn data(&self, name: &str) -> PathBuf {
        self.root.join("data").join(name)
    }
    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(name)
    }
    pub fn log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(name)
    }
    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }
    pub fn plot(&self, name: &str) -> PathBuf {
        self.root.join("plots").join(name)
    }

    pub fn write_snapshot(&self, cfg: &RunConfig) -> Result<PathBuf> {
        let path = self.config("resolved.toml");
        write_file(&path, cfg.to_toml()?)?;
        Ok(path)
    }
}
