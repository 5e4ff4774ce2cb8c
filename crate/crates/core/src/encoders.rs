//! Toy sequence encoders: embedding lookup followed by one single-head
//! self-attention layer with a residual connection. No positional encoding,
//! so both encoders are permutation-equivariant over positions.

use crate::diff::{Graph, Var};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::rng::{gaussian, SeededRng};

/// Standard deviation of embedding tables and the codebook.
pub const EMBEDDING_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoderParams {
    pub embedding: Matrix,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
}

/// The codebook is frozen; everything else trains.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeechEncoderParams {
    pub codebook: Matrix,
    pub query: Matrix,
    pub key: Matrix,
    pub value: Matrix,
    pub post: Matrix,
}

fn mix(rng: &mut SeededRng, d: usize) -> Matrix {
    gaussian(rng, d, d, 1.0 / libm::sqrt(d as f64))
}

impl TextEncoderParams {
    pub fn init(vocab: usize, dim: usize, rng: &mut SeededRng) -> Self {
        Self {
            embedding: gaussian(rng, vocab, dim, EMBEDDING_STD),
            query: mix(rng, dim),
            key: mix(rng, dim),
            value: mix(rng, dim),
        }
    }
}

impl SpeechEncoderParams {
    pub fn init(vocab: usize, dim: usize, rng: &mut SeededRng) -> Self {
        Self {
            codebook: gaussian(rng, vocab, dim, EMBEDDING_STD),
            query: mix(rng, dim),
            key: mix(rng, dim),
            value: mix(rng, dim),
            post: mix(rng, dim),
        }
    }
}

/// Graph handles for one encoder's weights.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub table: Var,
    pub query: Var,
    pub key: Var,
    pub value: Var,
    /// Present for the speech encoder only.
    pub post: Option<Var>,
}

/// `E + softmax((E Wq)(E Wk)ᵀ / √d) (E Wv)` over the looked-up rows `E`.
fn self_attention_block(g: &mut Graph, ids: &[usize], w: &EncoderVars) -> Result<Var> {
    let e = g.gather_rows(w.table, ids)?;
    let d = g.value(e).cols();
    let q = g.matmul(e, w.query)?;
    let k = g.matmul(e, w.key)?;
    let v = g.matmul(e, w.value)?;
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / libm::sqrt(d as f64));
    let attn = g.row_softmax(scores);
    let mixed = g.matmul(attn, v)?;
    g.add(e, mixed)
}

/// `H_t` (l_t×d_t).
pub fn text_encode(g: &mut Graph, tokens: &[usize], w: &EncoderVars) -> Result<Var> {
    self_attention_block(g, tokens, w)
}

/// `H_s` (l_s×d_s): the attention block followed by `H + H·P`.
pub fn speech_encode(g: &mut Graph, codes: &[usize], w: &EncoderVars) -> Result<Var> {
    let h = self_attention_block(g, codes, w)?;
    match w.post {
        Some(post) => {
            let projected = g.matmul(h, post)?;
            g.add(h, projected)
        }
        None => Ok(h),
    }
}
