//! Adam and the seeded training loop.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::corpus::{Corpus, Modality};
use crate::diff::Graph;
use crate::error::{Error, Result};
use crate::eval::{evaluate, metrics};
use crate::fusion::{argmax, FusionConfig, FusionMode, LossBreakdown, LossWeights};
use crate::labelkit::{tfidf_topk, LabelDescriptions, SpeechLabelInit, TextLabelInit};
use crate::matrix::Matrix;
use crate::model::{objective, Dims, LabelInitSpec, Model, ModelParams, Task};
use crate::rng::seeded_stream;

const SHUFFLE_STREAM: u64 = 1 << 32;

/// Optimiser and objective settings of one run.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields, rename_all = "kebab-case"))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_epsilon: f64,
    pub weights: LossWeights,
    pub mode: FusionMode,
    pub text_init: TextLabelInit,
    pub speech_init: SpeechLabelInit,
    pub k_text: usize,
    pub k_speech: usize,
    pub labels_trainable: bool,
    pub normalize_label_attention: bool,
    pub task: Task,
    pub d_text: usize,
    pub d_speech: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_epsilon: 1e-8,
            weights: LossWeights::default(),
            mode: FusionMode::Constraint,
            text_init: TextLabelInit::Tfidf,
            speech_init: SpeechLabelInit::Codebook,
            k_text: 9,
            k_speech: 100,
            labels_trainable: true,
            normalize_label_attention: false,
            task: Task::Multimodal,
            d_text: 16,
            d_speech: 16,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.into()));
        if self.batch_size == 0 {
            return bad("batch-size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning-rate must be positive");
        }
        let (b1, b2) = self.adam_betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad("adam-betas must lie in [0, 1)");
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("adam-epsilon must be positive");
        }
        let w = &self.weights;
        if [w.fused, w.constraint, w.text_guidance, w.speech_guidance]
            .iter()
            .any(|x| !(*x >= 0.0 && x.is_finite()))
        {
            return bad("loss weights must be finite and non-negative");
        }
        if self.k_text == 0 || self.k_speech == 0 {
            return bad("k-text and k-speech must be at least 1");
        }
        if self.d_text == 0 || self.d_speech == 0 {
            return bad("model widths must be positive");
        }
        Ok(())
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            mode: self.mode,
            weights: self.weights,
            normalize_label_attention: self.normalize_label_attention,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.adam_betas.0,
            beta2: self.adam_betas.1,
            epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamState {
    pub first: Vec<Matrix>,
    pub second: Vec<Matrix>,
    pub step: u64,
}

impl AdamState {
    pub fn new(shapes: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let first: Vec<Matrix> = shapes.into_iter().map(|(r, c)| Matrix::zeros(r, c)).collect();
        Self {
            second: first.clone(),
            first,
            step: 0,
        }
    }
}

/// One bias-corrected Adam update applied elementwise to every matrix.
pub fn adam_step(params: &mut [Matrix], grads: &[Matrix], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() || params.len() != state.second.len() {
        return Err(Error::Dimension {
            op: "adam_step",
            left: (params.len(), 1),
            right: (grads.len(), 1),
        });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        for other in [g.shape(), state.first[i].shape(), state.second[i].shape()] {
            if p.shape() != other {
                return Err(Error::Dimension {
                    op: "adam_step",
                    left: p.shape(),
                    right: other,
                });
            }
        }
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - libm::pow(cfg.beta1, t);
    let c2 = 1.0 - libm::pow(cfg.beta2, t);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].as_slice();
        let m = state.first[i].as_mut_slice();
        let v = state.second[i].as_mut_slice();
        for (j, x) in p.as_mut_slice().iter_mut().enumerate() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *x -= cfg.learning_rate * m_hat / (libm::sqrt(v_hat) + cfg.epsilon);
        }
    }
    Ok(())
}

/// Averages of one epoch plus train and held-out accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub train_wa: f64,
    pub train_ua: f64,
    pub held_out_wa: Option<f64>,
    pub held_out_ua: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }
}

/// Label descriptions extracted from the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptions {
    pub text: LabelDescriptions,
    pub speech: LabelDescriptions,
}

pub fn extract_descriptions(train: &Corpus, k_text: usize, k_speech: usize) -> Result<Descriptions> {
    for (modality, k) in [(Modality::Text, k_text), (Modality::Speech, k_speech)] {
        let vocab = train.spec.vocab(modality);
        if k > vocab {
            return Err(Error::Config(format!("K = {k} exceeds the {vocab}-symbol vocabulary")));
        }
    }
    Ok(Descriptions {
        text: tfidf_topk(&train.class_view(Modality::Text), k_text)?,
        speech: tfidf_topk(&train.class_view(Modality::Speech), k_speech)?,
    })
}

/// Everything needed to continue a run: parameters, optimiser and history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub adam: AdamState,
    pub epoch: usize,
    pub log: TrainLog,
}

impl TrainState {
    /// Fresh parameters with labels built from `train`.
    pub fn initialize(train: &Corpus, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::Config("training corpus is empty".into()));
        }
        let dims = Dims {
            classes: train.spec.classes,
            text_vocab: train.spec.text_vocab,
            speech_vocab: train.spec.speech_vocab,
            d_text: config.d_text,
            d_speech: config.d_speech,
        };
        let mut params = ModelParams::init(dims, config.seed);
        let desc = extract_descriptions(train, config.k_text, config.k_speech)?;
        let names = train.planted.name_tokens();
        params.init_labels(&LabelInitSpec {
            text_init: config.text_init,
            speech_init: config.speech_init,
            text: &desc.text,
            speech: &desc.speech,
            name_tokens: &names,
            trainable: config.labels_trainable,
            seed: config.seed,
        })?;
        let adam = AdamState::new(params.trainable_ids().into_iter().map(|id| params.get(id).shape()));
        Ok(Self {
            config: config.clone(),
            params,
            adam,
            epoch: 0,
            log: TrainLog::default(),
        })
    }

    pub fn model(&self) -> Model {
        Model {
            params: self.params.clone(),
            task: self.config.task,
            fusion: self.config.fusion(),
        }
    }

    /// Runs one epoch and appends its record.
    pub fn run_epoch(&mut self, train: &Corpus, held_out: Option<&Corpus>) -> Result<&EpochRecord> {
        let epoch = self.epoch;
        let cfg = self.config.fusion();
        let adam = self.config.adam();
        let ids = self.params.trainable_ids();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut seeded_stream(self.config.seed, SHUFFLE_STREAM + epoch as u64));

        let mut sums = [0.0f64; 5];
        let mut truth = Vec::with_capacity(order.len());
        let mut predicted = Vec::with_capacity(order.len());
        for (batch, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let mut acc: Vec<Matrix> = ids.iter().map(|&id| {
                let (r, c) = self.params.get(id).shape();
                Matrix::zeros(r, c)
            }).collect();
            for &i in chunk {
                let utt = &train.utterances[i];
                let mut g = Graph::new();
                let p = self.params.bind(&mut g);
                let obj = objective(&mut g, utt, &p, self.config.task, &cfg)?;
                let b = obj.breakdown;
                if !b.is_finite() {
                    return Err(Error::Divergence { epoch, batch });
                }
                g.backward(obj.loss)?;
                for (a, &id) in acc.iter_mut().zip(&ids) {
                    a.add_assign(&g.grad(p.var(id)));
                }
                for (s, x) in sums.iter_mut().zip(b.components().iter().chain([b.total].iter())) {
                    *s += x;
                }
                truth.push(utt.label);
                predicted.push(argmax(g.value(obj.logits).as_slice()));
            }
            let inv = 1.0 / chunk.len() as f64;
            for a in &mut acc {
                a.scale_assign(inv);
                if !a.is_finite() {
                    return Err(Error::Divergence { epoch, batch });
                }
            }
            let mut tensors: Vec<Matrix> = ids.iter().map(|&id| self.params.get(id).clone()).collect();
            adam_step(&mut tensors, &acc, &mut self.adam, &adam)?;
            for (t, &id) in tensors.into_iter().zip(&ids) {
                *self.params.get_mut(id) = t;
            }
        }

        let n = order.len() as f64;
        let train_metrics = metrics(train.spec.classes, &truth, &predicted)?;
        let (held_out_wa, held_out_ua) = match held_out {
            Some(c) if !c.is_empty() => {
                let r = evaluate(&self.model(), c)?;
                (Some(r.wa), Some(r.ua))
            }
            _ => (None, None),
        };
        self.log.records.push(EpochRecord {
            epoch,
            losses: LossBreakdown {
                fused: sums[0] / n,
                constraint: sums[1] / n,
                text_guidance: sums[2] / n,
                speech_guidance: sums[3] / n,
                total: sums[4] / n,
            },
            train_wa: train_metrics.wa,
            train_ua: train_metrics.ua,
            held_out_wa,
            held_out_ua,
        });
        self.epoch += 1;
        Ok(self.log.records.last().expect("record just pushed"))
    }

    /// Trains until `config.epochs` epochs have completed.
    pub fn run(&mut self, train: &Corpus, held_out: Option<&Corpus>) -> Result<()> {
        while self.epoch < self.config.epochs {
            self.run_epoch(train, held_out)?;
        }
        Ok(())
    }
}

/// Initialises and trains a model on `train`, logging held-out accuracy.
pub fn train(train: &Corpus, held_out: Option<&Corpus>, config: &TrainConfig) -> Result<(Model, TrainLog)> {
    let mut state = TrainState::initialize(train, config)?;
    state.run(train, held_out)?;
    Ok((state.model(), state.log))
}
