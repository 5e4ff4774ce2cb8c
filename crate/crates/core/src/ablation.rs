//! Seeded multi-condition experiments and the top-K sweep.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{generate, split, Corpus, CorpusSpec, Modality};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalResult, ScoreFusion};
use crate::fusion::{FusionMode, LossWeights};
use crate::labelkit::{SpeechLabelInit, TextLabelInit};
use crate::model::Task;
use crate::trainer::{train, TrainConfig};

/// Grid used when the speech sweep is run without explicit values.
pub const DEFAULT_SPEECH_K: &[usize] = &[10, 25, 50, 100, 200, 400];
pub const DEFAULT_TEXT_K: &[usize] = &[1, 3, 5, 9, 15, 25];

/// How data is generated and split for every seed.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields, rename_all = "kebab-case"))]
pub struct Protocol {
    pub corpus: CorpusSpec,
    pub utterances: usize,
    pub train_fraction: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            corpus: CorpusSpec::default(),
            utterances: 1000,
            train_fraction: 0.8,
        }
    }
}

impl Protocol {
    /// Corpus and split for `seed`; the seed overrides the corpus seed.
    pub fn data(&self, seed: u64) -> Result<(Corpus, Corpus)> {
        let spec = CorpusSpec {
            seed,
            ..self.corpus.clone()
        };
        let corpus = generate(&spec, self.utterances)?;
        split(&corpus, self.train_fraction, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConditionKind {
    Train(TrainConfig),
    /// Text-only and speech-only models whose logits are summed.
    ScoreFusion { text: TrainConfig, speech: TrainConfig },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub kind: ConditionKind,
}

impl Condition {
    pub fn train(name: &str, config: TrainConfig) -> Self {
        Self {
            name: name.to_string(),
            kind: ConditionKind::Train(config),
        }
    }

    /// Trains on `train` with every config seed replaced by `seed`.
    pub fn run(&self, train_set: &Corpus, test_set: &Corpus, seed: u64) -> Result<EvalResult> {
        let reseed = |c: &TrainConfig| TrainConfig { seed, ..c.clone() };
        match &self.kind {
            ConditionKind::Train(cfg) => {
                let (model, _) = train(train_set, None, &reseed(cfg))?;
                evaluate(&model, test_set)
            }
            ConditionKind::ScoreFusion { text, speech } => {
                let (t, _) = train(train_set, None, &TrainConfig { task: Task::Text, ..reseed(text) })?;
                let (s, _) = train(train_set, None, &TrainConfig { task: Task::Speech, ..reseed(speech) })?;
                evaluate(&ScoreFusion { text: &t, speech: &s }, test_set)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SeedOutcome {
    pub seed: u64,
    /// Metrics, or the error text when training failed.
    pub result: core::result::Result<EvalResult, String>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConditionReport {
    pub name: String,
    pub per_seed: Vec<SeedOutcome>,
}

impl ConditionReport {
    fn mean(&self, f: impl Fn(&EvalResult) -> f64) -> Option<f64> {
        let ok: Vec<f64> = self.per_seed.iter().filter_map(|s| s.result.as_ref().ok()).map(f).collect();
        (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64)
    }

    /// Mean WA over seeds that trained successfully.
    pub fn mean_wa(&self) -> Option<f64> {
        self.mean(|r| r.wa)
    }

    pub fn mean_ua(&self) -> Option<f64> {
        self.mean(|r| r.ua)
    }

    pub fn failures(&self) -> usize {
        self.per_seed.iter().filter(|s| s.result.is_err()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub conditions: Vec<ConditionReport>,
}

impl AblationReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// Every condition sees the same generated split for a given seed.
/// Training failures are recorded and the run continues.
pub fn run_ablation(conditions: &[Condition], protocol: &Protocol, seeds: &[u64]) -> Result<AblationReport> {
    if conditions.is_empty() {
        return Err(Error::Config("at least one condition is required".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mut reports: Vec<ConditionReport> = conditions
        .iter()
        .map(|c| ConditionReport {
            name: c.name.clone(),
            per_seed: Vec::new(),
        })
        .collect();
    for &seed in seeds {
        let (train_set, test_set) = protocol.data(seed)?;
        for (c, report) in conditions.iter().zip(&mut reports) {
            let result = match c.run(&train_set, &test_set, seed) {
                Ok(r) => Ok(r),
                Err(e @ (Error::Divergence { .. } | Error::DegenerateRow { .. })) => Err(e.to_string()),
                Err(e) => return Err(e),
            };
            report.per_seed.push(SeedOutcome { seed, result });
        }
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        conditions: reports,
    })
}

/// The four fusion modes, in table order.
pub fn fusion_mode_conditions(base: &TrainConfig) -> Vec<Condition> {
    FusionMode::ALL
        .iter()
        .map(|&mode| {
            Condition::train(
                mode.name(),
                TrainConfig {
                    mode,
                    task: Task::Multimodal,
                    ..base.clone()
                },
            )
        })
        .collect()
}

/// Multimodal model with the constraint and both guidance terms switched off.
pub fn unguided_baseline(base: &TrainConfig) -> Condition {
    Condition::train(
        "multimodal-unguided",
        TrainConfig {
            weights: LossWeights::unguided(),
            task: Task::Multimodal,
            ..base.clone()
        },
    )
}

/// Text-only conditions: no label embedding, then each initialisation.
pub fn text_init_conditions(base: &TrainConfig) -> Vec<Condition> {
    let text = TrainConfig {
        task: Task::Text,
        ..base.clone()
    };
    let mut out = vec![Condition::train(
        "text-no-le",
        TrainConfig {
            weights: LossWeights {
                text_guidance: 0.0,
                ..text.weights
            },
            ..text.clone()
        },
    )];
    for (name, init) in [
        ("text-le-random", TextLabelInit::Random),
        ("text-le-label-words", TextLabelInit::LabelWords),
        ("text-le-tfidf", TextLabelInit::Tfidf),
    ] {
        out.push(Condition::train(
            name,
            TrainConfig {
                text_init: init,
                ..text.clone()
            },
        ));
    }
    out
}

pub fn speech_init_conditions(base: &TrainConfig) -> Vec<Condition> {
    let speech = TrainConfig {
        task: Task::Speech,
        ..base.clone()
    };
    let mut out = vec![Condition::train(
        "speech-no-le",
        TrainConfig {
            weights: LossWeights {
                speech_guidance: 0.0,
                ..speech.weights
            },
            ..speech.clone()
        },
    )];
    for (name, init) in [
        ("speech-le-random", SpeechLabelInit::Random),
        ("speech-le-text-embedding", SpeechLabelInit::TextEmbedding),
        ("speech-le-codebook", SpeechLabelInit::Codebook),
    ] {
        out.push(Condition::train(
            name,
            TrainConfig {
                speech_init: init,
                ..speech.clone()
            },
        ));
    }
    out
}

pub fn score_fusion_condition(base: &TrainConfig) -> Condition {
    Condition {
        name: "score-fusion".to_string(),
        kind: ConditionKind::ScoreFusion {
            text: base.clone(),
            speech: base.clone(),
        },
    }
}

/// Fusion modes, unguided baseline, both init tables and score fusion.
pub fn standard_conditions(base: &TrainConfig) -> Vec<Condition> {
    let mut out = fusion_mode_conditions(base);
    out.push(unguided_baseline(base));
    out.extend(text_init_conditions(base));
    out.extend(speech_init_conditions(base));
    out.push(score_fusion_condition(base));
    out
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepPoint {
    pub k: usize,
    pub report: ConditionReport,
}

/// One condition per K for `modality`, all on the same seeds and splits.
pub fn sweep_k(
    values: &[usize],
    modality: Modality,
    base: &TrainConfig,
    protocol: &Protocol,
    seeds: &[u64],
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::Config("at least one K value is required".into()));
    }
    let vocab = protocol.corpus.vocab(modality);
    if let Some(&k) = values.iter().find(|&&k| k == 0 || k > vocab) {
        return Err(Error::Config(format!("K = {k} must lie in 1..={vocab}")));
    }
    let conditions: Vec<Condition> = values
        .iter()
        .map(|&k| {
            let cfg = match modality {
                Modality::Text => TrainConfig { k_text: k, ..base.clone() },
                Modality::Speech => TrainConfig { k_speech: k, ..base.clone() },
            };
            Condition::train(&format!("k={k}"), cfg)
        })
        .collect();
    let report = run_ablation(&conditions, protocol, seeds)?;
    Ok(values
        .iter()
        .zip(report.conditions)
        .map(|(&k, report)| SweepPoint { k, report })
        .collect())
}

#[cfg(test)]
mod tests;
