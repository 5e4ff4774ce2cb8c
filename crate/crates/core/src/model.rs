//! Parameter registry and task dispatch.
//!
//! Every matrix of the model is addressed by a [`ParamId`], which gives the
//! optimizer, the checkpoint format and the gradient checker one shared
//! ordering.

use alloc::vec::Vec;

use crate::corpus::{Modality, Utterance};
use crate::diff::{Graph, Var};
use crate::encoders::{speech_encode, text_encode, EncoderVars, SpeechEncoderParams, TextEncoderParams};
use crate::error::Result;
use crate::fusion::{self, AttentionBundle, FusionConfig, FusionParams, LossBreakdown};
use crate::labelkit::{build_speech_labels, build_text_labels, LabelBank, SpeechLabelInit, SpeechLabelSource, TextLabelInit, TextLabelSource};
use crate::matrix::Matrix;
use crate::rng::seeded_stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dims {
    pub classes: usize,
    pub text_vocab: usize,
    pub speech_vocab: usize,
    pub d_text: usize,
    pub d_speech: usize,
}

macro_rules! param_ids {
    ($($variant:ident => $name:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum ParamId { $($variant),* }

        impl ParamId {
            pub const ALL: &'static [ParamId] = &[$(ParamId::$variant),*];

            pub fn name(self) -> &'static str {
                match self { $(ParamId::$variant => $name),* }
            }

            pub fn from_name(name: &str) -> Option<Self> {
                match name { $($name => Some(ParamId::$variant),)* _ => None }
            }
        }
    };
}

param_ids! {
    TextEmbedding => "text.embedding",
    TextQuery => "text.query",
    TextKey => "text.key",
    TextValue => "text.value",
    Codebook => "speech.codebook",
    SpeechQuery => "speech.query",
    SpeechKey => "speech.key",
    SpeechValue => "speech.value",
    SpeechPost => "speech.post",
    CrossMap => "fusion.cross_map",
    FusedWeight => "fusion.fused_weight",
    FusedBias => "fusion.fused_bias",
    TextHead => "fusion.text_head",
    TextBias => "fusion.text_bias",
    SpeechHead => "fusion.speech_head",
    SpeechBias => "fusion.speech_bias",
    TextLabels => "labels.text",
    SpeechLabels => "labels.speech",
}

impl ParamId {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: Dims,
    pub text: TextEncoderParams,
    pub speech: SpeechEncoderParams,
    pub fusion: FusionParams,
    pub labels: LabelBank,
}

impl ModelParams {
    /// Encoder and head weights from `seed`; label rows start random and are
    /// normally replaced via [`ModelParams::init_labels`].
    pub fn init(dims: Dims, seed: u64) -> Self {
        let text = TextEncoderParams::init(dims.text_vocab, dims.d_text, &mut seeded_stream(seed, 1));
        let speech = SpeechEncoderParams::init(dims.speech_vocab, dims.d_speech, &mut seeded_stream(seed, 2));
        let fusion = FusionParams::init(dims.d_text, dims.d_speech, dims.classes, &mut seeded_stream(seed, 3));
        let labels = LabelBank {
            text: crate::rng::gaussian(&mut seeded_stream(seed, 4), dims.classes, dims.d_text, 0.02),
            speech: crate::rng::gaussian(&mut seeded_stream(seed, 5), dims.classes, dims.d_speech, 0.02),
            trainable: true,
            text_init: TextLabelInit::Random,
            speech_init: SpeechLabelInit::Random,
        };
        Self {
            dims,
            text,
            speech,
            fusion,
            labels,
        }
    }

    /// Builds both label matrices from descriptions and the current tables.
    pub fn init_labels(&mut self, spec: &LabelInitSpec<'_>) -> Result<()> {
        let classes = self.dims.classes;
        let text = match spec.text_init {
            TextLabelInit::Random => build_text_labels(
                &self.text.embedding,
                TextLabelSource::Random {
                    classes,
                    seed: spec.seed ^ 0x7e57,
                },
            )?,
            TextLabelInit::LabelWords => {
                build_text_labels(&self.text.embedding, TextLabelSource::LabelWords(spec.name_tokens))?
            }
            TextLabelInit::Tfidf => build_text_labels(&self.text.embedding, TextLabelSource::Tfidf(spec.text))?,
        };
        let speech = match spec.speech_init {
            SpeechLabelInit::Random => build_speech_labels(
                &self.speech.codebook,
                SpeechLabelSource::Random {
                    classes,
                    seed: spec.seed ^ 0x5bee,
                },
            )?,
            SpeechLabelInit::TextEmbedding => {
                build_speech_labels(&self.speech.codebook, SpeechLabelSource::TextEmbedding(&text))?
            }
            SpeechLabelInit::Codebook => {
                build_speech_labels(&self.speech.codebook, SpeechLabelSource::Codebook(spec.speech))?
            }
        };
        self.labels = LabelBank {
            text,
            speech,
            trainable: spec.trainable,
            text_init: spec.text_init,
            speech_init: spec.speech_init,
        };
        Ok(())
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        use ParamId::*;
        match id {
            TextEmbedding => &self.text.embedding,
            TextQuery => &self.text.query,
            TextKey => &self.text.key,
            TextValue => &self.text.value,
            Codebook => &self.speech.codebook,
            SpeechQuery => &self.speech.query,
            SpeechKey => &self.speech.key,
            SpeechValue => &self.speech.value,
            SpeechPost => &self.speech.post,
            CrossMap => &self.fusion.cross_map,
            FusedWeight => &self.fusion.fused_weight,
            FusedBias => &self.fusion.fused_bias,
            TextHead => &self.fusion.text_head,
            TextBias => &self.fusion.text_bias,
            SpeechHead => &self.fusion.speech_head,
            SpeechBias => &self.fusion.speech_bias,
            TextLabels => &self.labels.text,
            SpeechLabels => &self.labels.speech,
        }
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        use ParamId::*;
        match id {
            TextEmbedding => &mut self.text.embedding,
            TextQuery => &mut self.text.query,
            TextKey => &mut self.text.key,
            TextValue => &mut self.text.value,
            Codebook => &mut self.speech.codebook,
            SpeechQuery => &mut self.speech.query,
            SpeechKey => &mut self.speech.key,
            SpeechValue => &mut self.speech.value,
            SpeechPost => &mut self.speech.post,
            CrossMap => &mut self.fusion.cross_map,
            FusedWeight => &mut self.fusion.fused_weight,
            FusedBias => &mut self.fusion.fused_bias,
            TextHead => &mut self.fusion.text_head,
            TextBias => &mut self.fusion.text_bias,
            SpeechHead => &mut self.fusion.speech_head,
            SpeechBias => &mut self.fusion.speech_bias,
            TextLabels => &mut self.labels.text,
            SpeechLabels => &mut self.labels.speech,
        }
    }

    /// The codebook never trains; label rows train when the bank says so.
    pub fn is_trainable(&self, id: ParamId) -> bool {
        match id {
            ParamId::Codebook => false,
            ParamId::TextLabels | ParamId::SpeechLabels => self.labels.trainable,
            _ => true,
        }
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        ParamId::ALL.iter().copied().filter(|&id| self.is_trainable(id)).collect()
    }

    /// Trainable matrices in [`ModelParams::trainable_ids`] order.
    pub fn trainable_tensors(&self) -> Vec<Matrix> {
        self.trainable_ids().into_iter().map(|id| self.get(id).clone()).collect()
    }

    /// Inserts every matrix: trainable ones as leaves, the rest as constants.
    pub fn bind(&self, g: &mut Graph) -> ParamVars {
        let mut vars = Vec::with_capacity(ParamId::ALL.len());
        for &id in ParamId::ALL {
            let m = self.get(id).clone();
            vars.push(if self.is_trainable(id) { g.leaf(m) } else { g.constant(m) });
        }
        ParamVars::from_vars(vars)
    }

    /// Inserts every matrix as a constant (inference only).
    pub fn bind_frozen(&self, g: &mut Graph) -> ParamVars {
        ParamVars::from_vars(ParamId::ALL.iter().map(|&id| g.constant(self.get(id).clone())).collect())
    }

    /// Uses `leaves` (in trainable order) for trainable ids and constants for
    /// the rest. This is how the gradient checker drives the model.
    pub fn bind_with(&self, g: &mut Graph, leaves: &[Var]) -> ParamVars {
        let mut next = leaves.iter();
        let vars = ParamId::ALL
            .iter()
            .map(|&id| {
                if self.is_trainable(id) {
                    *next.next().expect("one leaf per trainable parameter")
                } else {
                    g.constant(self.get(id).clone())
                }
            })
            .collect();
        ParamVars::from_vars(vars)
    }
}

pub struct LabelInitSpec<'a> {
    pub text_init: TextLabelInit,
    pub speech_init: SpeechLabelInit,
    pub text: &'a crate::labelkit::LabelDescriptions,
    pub speech: &'a crate::labelkit::LabelDescriptions,
    pub name_tokens: &'a [usize],
    pub trainable: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    pub cross_map: Var,
    pub fused_weight: Var,
    pub fused_bias: Var,
    pub text_head: Var,
    pub text_bias: Var,
    pub speech_head: Var,
    pub speech_bias: Var,
}

/// Graph handles for every model parameter.
#[derive(Debug, Clone)]
pub struct ParamVars {
    all: Vec<Var>,
    pub text: EncoderVars,
    pub speech: EncoderVars,
    pub fusion: FusionVars,
    pub text_labels: Var,
    pub speech_labels: Var,
}

impl ParamVars {
    fn from_vars(all: Vec<Var>) -> Self {
        let v = |id: ParamId| all[id.index()];
        use ParamId::*;
        Self {
            text: EncoderVars {
                table: v(TextEmbedding),
                query: v(TextQuery),
                key: v(TextKey),
                value: v(TextValue),
                post: None,
            },
            speech: EncoderVars {
                table: v(Codebook),
                query: v(SpeechQuery),
                key: v(SpeechKey),
                value: v(SpeechValue),
                post: Some(v(SpeechPost)),
            },
            fusion: FusionVars {
                cross_map: v(CrossMap),
                fused_weight: v(FusedWeight),
                fused_bias: v(FusedBias),
                text_head: v(TextHead),
                text_bias: v(TextBias),
                speech_head: v(SpeechHead),
                speech_bias: v(SpeechBias),
            },
            text_labels: v(TextLabels),
            speech_labels: v(SpeechLabels),
            all,
        }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.all[id.index()]
    }

    /// Gradients for every id after `g.backward`; zeros for constants.
    pub fn gradients(&self, g: &Graph) -> Vec<Matrix> {
        self.all.iter().map(|&v| g.grad(v)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Task {
    #[default]
    Multimodal,
    Text,
    Speech,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Multimodal => "multimodal",
            Task::Text => "text",
            Task::Speech => "speech",
        }
    }
}

/// Loss, logits and per-component values of one utterance.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub loss: Var,
    pub logits: Var,
    pub breakdown: LossBreakdown,
}

/// Builds the training objective for `task` on one utterance.
pub fn objective(g: &mut Graph, utt: &Utterance, p: &ParamVars, task: Task, cfg: &FusionConfig) -> Result<Objective> {
    match task {
        Task::Multimodal => {
            let out = fusion::forward(g, utt, p, cfg)?;
            Ok(Objective {
                loss: out.total,
                logits: out.logits,
                breakdown: out.breakdown(g),
            })
        }
        Task::Text | Task::Speech => {
            let (modality, mu) = if task == Task::Text {
                (Modality::Text, cfg.weights.text_guidance)
            } else {
                (Modality::Speech, cfg.weights.speech_guidance)
            };
            let out = fusion::unimodal_forward(g, utt, modality, p, mu)?;
            let ce = g.value(out.classification_loss).as_slice()[0];
            let guide = g.value(out.guidance_loss).as_slice()[0];
            let (text_guidance, speech_guidance) = if task == Task::Text { (guide, 0.0) } else { (0.0, guide) };
            Ok(Objective {
                loss: out.loss,
                logits: out.logits,
                breakdown: LossBreakdown {
                    fused: ce,
                    constraint: 0.0,
                    text_guidance,
                    speech_guidance,
                    total: g.value(out.loss).as_slice()[0],
                },
            })
        }
    }
}

/// A trained (or initialised) model with the settings needed to run it.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: ModelParams,
    pub task: Task,
    pub fusion: FusionConfig,
}

impl Model {
    pub fn logits(&self, utt: &Utterance) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let out = objective(&mut g, utt, &p, self.task, &self.fusion)?;
        Ok(g.value(out.logits).as_slice().to_vec())
    }

    pub fn predict(&self, utt: &Utterance) -> Result<usize> {
        Ok(fusion::argmax(&self.logits(utt)?))
    }

    /// `G_t` and `G_s` for one utterance, whatever the task.
    pub fn label_attention(&self, utt: &Utterance) -> Result<(Matrix, Matrix)> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let ht = text_encode(&mut g, &utt.text, &p.text)?;
        let hs = speech_encode(&mut g, &utt.speech, &p.speech)?;
        let gt = fusion::label_token_attention(&mut g, ht, p.text_labels)?;
        let gs = fusion::label_frame_attention(&mut g, hs, p.speech_labels)?;
        Ok((g.value(gt).clone(), g.value(gs).clone()))
    }

    /// Every attention map of the multimodal head for one utterance.
    pub fn attention_bundle(&self, utt: &Utterance) -> Result<AttentionBundle> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let out = fusion::forward(&mut g, utt, &p, &self.fusion)?;
        Ok(out.attention(&g))
    }
}
