//! Label-guided multimodal fusion head.
//!
//! Shapes, with `c` classes:
//!
//! | value | shape     | definition                                   |
//! |-------|-----------|----------------------------------------------|
//! | `G_t` | l_t × c   | cosine(H_t rows, L_t rows)                   |
//! | `G_s` | l_s × c   | cosine(H_s rows, L_s rows)                   |
//! | `A_r` | l_t × l_s | row_softmax(H_t · (H_s · W)ᵀ)                |
//! | `A_l` | l_t × l_s | G_t · G_sᵀ                                   |
//! | `H_s′`| l_t × d_s | alignment weights · H_s                      |
//! | `H_m` | l_t × (d_t + d_s) | [H_t, H_s′]                          |
//!
//! The guidance losses feed the sequence-mean of `G` straight into
//! cross-entropy, so softmax is applied exactly once.

use alloc::vec::Vec;

use crate::corpus::Utterance;
use crate::diff::{Axis, Graph, PoolKind, Var};
use crate::encoders::{speech_encode, text_encode};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::ParamVars;
use crate::rng::{gaussian, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct FusionParams {
    /// `W`, d_s × d_t.
    pub cross_map: Matrix,
    /// (d_t + d_s) × c.
    pub fused_weight: Matrix,
    pub fused_bias: Matrix,
    pub text_head: Matrix,
    pub text_bias: Matrix,
    pub speech_head: Matrix,
    pub speech_bias: Matrix,
}

impl FusionParams {
    pub fn init(d_text: usize, d_speech: usize, classes: usize, rng: &mut SeededRng) -> Self {
        let fan = |n: usize| 1.0 / libm::sqrt(n as f64);
        Self {
            cross_map: gaussian(rng, d_speech, d_text, fan(d_speech)),
            fused_weight: gaussian(rng, d_text + d_speech, classes, fan(d_text + d_speech)),
            fused_bias: Matrix::zeros(1, classes),
            text_head: gaussian(rng, d_text, classes, fan(d_text)),
            text_bias: Matrix::zeros(1, classes),
            speech_head: gaussian(rng, d_speech, classes, fan(d_speech)),
            speech_bias: Matrix::zeros(1, classes),
        }
    }
}

/// How the two cross-attention maps are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum FusionMode {
    /// Align with `A_r`, penalise `mse(A_l, A_r)`.
    #[default]
    Constraint,
    /// Align with `A_r + A_l`.
    Sum,
    /// Align with `A_l` only.
    OnlyLabel,
    /// Align with `A_r` only.
    OnlyVanilla,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::Constraint,
        FusionMode::Sum,
        FusionMode::OnlyLabel,
        FusionMode::OnlyVanilla,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionMode::Constraint => "constraint",
            FusionMode::Sum => "sum",
            FusionMode::OnlyLabel => "only-label",
            FusionMode::OnlyVanilla => "only-vanilla",
        }
    }
}

/// Weights of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields, rename_all = "kebab-case"))]
pub struct LossWeights {
    pub fused: f64,
    pub constraint: f64,
    pub text_guidance: f64,
    pub speech_guidance: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            fused: 1.0,
            constraint: 0.5,
            text_guidance: 0.2,
            speech_guidance: 0.2,
        }
    }
}

impl LossWeights {
    /// Classification only: every label-driven term switched off.
    pub fn unguided() -> Self {
        Self {
            fused: 1.0,
            constraint: 0.0,
            text_guidance: 0.0,
            speech_guidance: 0.0,
        }
    }

    pub fn combine(&self, fused: f64, constraint: f64, text_guidance: f64, speech_guidance: f64) -> f64 {
        self.fused * fused
            + self.constraint * constraint
            + self.text_guidance * text_guidance
            + self.speech_guidance * speech_guidance
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, rename_all = "kebab-case"))]
pub struct FusionConfig {
    pub mode: FusionMode,
    pub weights: LossWeights,
    /// Row-softmax `A_l` before it is used. Off by default.
    pub normalize_label_attention: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LossBreakdown {
    pub fused: f64,
    pub constraint: f64,
    pub text_guidance: f64,
    pub speech_guidance: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn components(&self) -> [f64; 4] {
        [self.fused, self.constraint, self.text_guidance, self.speech_guidance]
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|x| x.is_finite()) && self.total.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionBundle {
    pub text_label: Matrix,
    pub speech_label: Matrix,
    pub vanilla: Matrix,
    pub label_guided: Matrix,
}

/// Cosine similarity of every row of `h` with every row of `labels`.
pub fn label_attention(g: &mut Graph, h: Var, labels: Var) -> Result<Var> {
    let (hd, ld) = (g.value(h).cols(), g.value(labels).cols());
    if hd != ld {
        return Err(Error::Dimension {
            op: "label_attention",
            left: g.value(h).shape(),
            right: g.value(labels).shape(),
        });
    }
    let hn = g.row_l2_normalize(h)?;
    let ln = g.row_l2_normalize(labels)?;
    let lt = g.transpose(ln);
    g.matmul(hn, lt)
}

/// `G_t`.
pub fn label_token_attention(g: &mut Graph, h_text: Var, text_labels: Var) -> Result<Var> {
    label_attention(g, h_text, text_labels)
}

/// `G_s`.
pub fn label_frame_attention(g: &mut Graph, h_speech: Var, speech_labels: Var) -> Result<Var> {
    label_attention(g, h_speech, speech_labels)
}

/// Sequence-mean of `G` (1×c), the guidance logits before softmax.
pub fn pooled_guidance(g: &mut Graph, attention: Var) -> Var {
    g.pool(attention, Axis::Rows, PoolKind::Mean)
}

/// `p_g = softmax(mean over sequence of G)`.
pub fn guidance_logits(g: &mut Graph, attention: Var) -> Var {
    let pooled = pooled_guidance(g, attention);
    g.row_softmax(pooled)
}

/// Cross-entropy of the pooled guidance logits against `label`.
pub fn guidance_loss(g: &mut Graph, attention: Var, label: usize) -> Result<Var> {
    let pooled = pooled_guidance(g, attention);
    g.cross_entropy(pooled, label)
}

/// `A_r = row_softmax(H_t · (H_s · W)ᵀ)`, softmax over frames.
pub fn vanilla_cross_attention(g: &mut Graph, h_text: Var, h_speech: Var, cross_map: Var) -> Result<Var> {
    let (t, s, w) = (g.value(h_text).shape(), g.value(h_speech).shape(), g.value(cross_map).shape());
    if w != (s.1, t.1) {
        return Err(Error::Dimension {
            op: "vanilla_cross_attention",
            left: (s.1, t.1),
            right: w,
        });
    }
    let projected = g.matmul(h_speech, cross_map)?;
    let pt = g.transpose(projected);
    let scores = g.matmul(h_text, pt)?;
    Ok(g.row_softmax(scores))
}

/// `H_s′ = weights · H_s`.
pub fn aligned_speech(g: &mut Graph, weights: Var, h_speech: Var) -> Result<Var> {
    if g.value(weights).cols() != g.value(h_speech).rows() {
        return Err(Error::Dimension {
            op: "aligned_speech",
            left: g.value(weights).shape(),
            right: g.value(h_speech).shape(),
        });
    }
    g.matmul(weights, h_speech)
}

/// `A_l = G_t · G_sᵀ`.
pub fn label_guided_attention(g: &mut Graph, g_text: Var, g_speech: Var) -> Result<Var> {
    if g.value(g_text).cols() != g.value(g_speech).cols() {
        return Err(Error::Dimension {
            op: "label_guided_attention",
            left: g.value(g_text).shape(),
            right: g.value(g_speech).shape(),
        });
    }
    let gst = g.transpose(g_speech);
    g.matmul(g_text, gst)
}

/// `mse(A_l, A_r)`.
pub fn constraint_loss(g: &mut Graph, label_guided: Var, vanilla: Var) -> Result<Var> {
    g.mse(label_guided, vanilla)
}

fn linear(g: &mut Graph, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let y = g.matmul(x, weight)?;
    g.add(y, bias)
}

/// Graph handles produced by [`forward`].
#[derive(Debug, Clone, Copy)]
pub struct FusionOutput {
    pub logits: Var,
    pub fused_loss: Var,
    pub constraint_loss: Var,
    pub text_guidance_loss: Var,
    pub speech_guidance_loss: Var,
    pub total: Var,
    pub text_label_attention: Var,
    pub speech_label_attention: Var,
    pub vanilla_attention: Var,
    pub label_guided_attention: Var,
}

impl FusionOutput {
    pub fn breakdown(&self, g: &Graph) -> LossBreakdown {
        let s = |v: Var| g.value(v).as_slice()[0];
        LossBreakdown {
            fused: s(self.fused_loss),
            constraint: s(self.constraint_loss),
            text_guidance: s(self.text_guidance_loss),
            speech_guidance: s(self.speech_guidance_loss),
            total: s(self.total),
        }
    }

    pub fn attention(&self, g: &Graph) -> AttentionBundle {
        AttentionBundle {
            text_label: g.value(self.text_label_attention).clone(),
            speech_label: g.value(self.speech_label_attention).clone(),
            vanilla: g.value(self.vanilla_attention).clone(),
            label_guided: g.value(self.label_guided_attention).clone(),
        }
    }
}

/// Weighted sum `Σ μ_i L_i` as graph nodes.
fn weighted_total(g: &mut Graph, w: &LossWeights, parts: [Var; 4]) -> Result<Var> {
    let mut total = g.scale(parts[0], w.fused);
    for (part, mu) in parts[1..].iter().zip([w.constraint, w.text_guidance, w.speech_guidance]) {
        let term = g.scale(*part, mu);
        total = g.add(total, term)?;
    }
    Ok(total)
}

/// Full multimodal forward pass for one utterance.
pub fn forward(g: &mut Graph, utt: &Utterance, p: &ParamVars, cfg: &FusionConfig) -> Result<FusionOutput> {
    let h_text = text_encode(g, &utt.text, &p.text)?;
    let h_speech = speech_encode(g, &utt.speech, &p.speech)?;

    let g_text = label_token_attention(g, h_text, p.text_labels)?;
    let g_speech = label_frame_attention(g, h_speech, p.speech_labels)?;
    let text_guidance = guidance_loss(g, g_text, utt.label)?;
    let speech_guidance = guidance_loss(g, g_speech, utt.label)?;

    let vanilla = vanilla_cross_attention(g, h_text, h_speech, p.fusion.cross_map)?;
    let mut label_guided = label_guided_attention(g, g_text, g_speech)?;
    if cfg.normalize_label_attention {
        label_guided = g.row_softmax(label_guided);
    }

    let (weights, constraint) = match cfg.mode {
        FusionMode::Constraint => (vanilla, constraint_loss(g, label_guided, vanilla)?),
        FusionMode::Sum => (g.add(vanilla, label_guided)?, g.constant(Matrix::zeros(1, 1))),
        FusionMode::OnlyLabel => (label_guided, g.constant(Matrix::zeros(1, 1))),
        FusionMode::OnlyVanilla => (vanilla, g.constant(Matrix::zeros(1, 1))),
    };

    let aligned = aligned_speech(g, weights, h_speech)?;
    let multimodal = g.concat_cols(h_text, aligned)?;
    let pooled = g.pool(multimodal, Axis::Rows, PoolKind::Max);
    let logits = linear(g, pooled, p.fusion.fused_weight, p.fusion.fused_bias)?;
    let fused = g.cross_entropy(logits, utt.label)?;

    let total = weighted_total(g, &cfg.weights, [fused, constraint, text_guidance, speech_guidance])?;
    Ok(FusionOutput {
        logits,
        fused_loss: fused,
        constraint_loss: constraint,
        text_guidance_loss: text_guidance,
        speech_guidance_loss: speech_guidance,
        total,
        text_label_attention: g_text,
        speech_label_attention: g_speech,
        vanilla_attention: vanilla,
        label_guided_attention: label_guided,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct UnimodalOutput {
    pub logits: Var,
    pub classification_loss: Var,
    pub guidance_loss: Var,
    pub loss: Var,
    pub label_attention: Var,
}

/// Single-modality model: `max-pool(H) · head + bias`, loss `CE + μ_g · guidance`.
pub fn unimodal_forward(
    g: &mut Graph,
    utt: &Utterance,
    modality: crate::corpus::Modality,
    p: &ParamVars,
    guidance_weight: f64,
) -> Result<UnimodalOutput> {
    use crate::corpus::Modality;
    let (h, labels, head, bias) = match modality {
        Modality::Text => (
            text_encode(g, &utt.text, &p.text)?,
            p.text_labels,
            p.fusion.text_head,
            p.fusion.text_bias,
        ),
        Modality::Speech => (
            speech_encode(g, &utt.speech, &p.speech)?,
            p.speech_labels,
            p.fusion.speech_head,
            p.fusion.speech_bias,
        ),
    };
    let pooled = g.pool(h, Axis::Rows, PoolKind::Max);
    let logits = linear(g, pooled, head, bias)?;
    let ce = g.cross_entropy(logits, utt.label)?;
    let attention = label_attention(g, h, labels)?;
    let guidance = guidance_loss(g, attention, utt.label)?;
    let weighted = g.scale(guidance, guidance_weight);
    let loss = g.add(ce, weighted)?;
    Ok(UnimodalOutput {
        logits,
        classification_loss: ce,
        guidance_loss: guidance,
        loss,
        label_attention: attention,
    })
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Predicted class of summed unimodal logits.
pub fn score_fusion(text_logits: &[f64], speech_logits: &[f64]) -> Result<usize> {
    if text_logits.len() != speech_logits.len() || text_logits.is_empty() {
        return Err(Error::Dimension {
            op: "score_fusion",
            left: (1, text_logits.len()),
            right: (1, speech_logits.len()),
        });
    }
    let summed: Vec<f64> = text_logits.iter().zip(speech_logits).map(|(a, b)| a + b).collect();
    Ok(argmax(&summed))
}

/// `G̃[i]`: mean of row `i` of `G` over classes.
pub fn class_averaged_attention(attention: &Matrix) -> Vec<f64> {
    (0..attention.rows())
        .map(|i| {
            let row = attention.row(i);
            row.iter().sum::<f64>() / row.len() as f64
        })
        .collect()
}

#[cfg(test)]
mod tests;
