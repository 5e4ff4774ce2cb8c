//! Per-class label descriptions and label-embedding initialisation.
//!
//! Descriptions come from TF-IDF with each class's concatenated utterances as
//! a single document:
//!
//! ```text
//! tf(t, k)  = count(t in class k) / symbols in class k
//! idf(t)    = ln((1 + c) / (1 + df(t))) + 1      df = classes containing t
//! score     = tf * idf
//! ```
//!
//! Top-K per class, ties broken by ascending symbol id. The same extractor
//! serves text tokens and quantised speech codes.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{gaussian, seeded};

/// Standard deviation of randomly initialised label rows.
pub const RANDOM_INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSymbol {
    pub symbol: usize,
    pub score: f64,
}

/// Ranked Top-K symbols for each class.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDescriptions {
    pub classes: Vec<Vec<ScoredSymbol>>,
}

impl LabelDescriptions {
    pub fn symbols(&self, class: usize) -> impl Iterator<Item = usize> + '_ {
        self.classes[class].iter().map(|s| s.symbol)
    }
}

/// `view[k]` holds the symbol sequences of class `k`.
pub fn tfidf_topk(view: &[Vec<&[usize]>], k: usize) -> Result<LabelDescriptions> {
    if k == 0 {
        return Err(Error::Config(format!("top-K must be at least 1")));
    }
    let c = view.len();
    let mut counts: Vec<BTreeMap<usize, usize>> = Vec::with_capacity(c);
    let mut totals = Vec::with_capacity(c);
    for (class, seqs) in view.iter().enumerate() {
        let mut tally = BTreeMap::new();
        let mut total = 0usize;
        for &s in seqs.iter().flat_map(|s| s.iter()) {
            *tally.entry(s).or_insert(0usize) += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::Extraction { class });
        }
        counts.push(tally);
        totals.push(total);
    }

    let mut df: BTreeMap<usize, usize> = BTreeMap::new();
    for tally in &counts {
        for &s in tally.keys() {
            *df.entry(s).or_insert(0) += 1;
        }
    }

    let classes = counts
        .iter()
        .zip(&totals)
        .map(|(tally, &total)| {
            let mut scored: Vec<ScoredSymbol> = tally
                .iter()
                .map(|(&symbol, &n)| {
                    let tf = n as f64 / total as f64;
                    let idf = libm::log((1 + c) as f64 / (1 + df[&symbol]) as f64) + 1.0;
                    ScoredSymbol {
                        symbol,
                        score: tf * idf,
                    }
                })
                .collect();
            scored.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.symbol.cmp(&b.symbol)));
            scored.truncate(k);
            scored
        })
        .collect();
    Ok(LabelDescriptions { classes })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum TextLabelInit {
    Random,
    /// The embedding of one designated class-name token per class.
    LabelWords,
    Tfidf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum SpeechLabelInit {
    Random,
    /// Copy of the text label matrix (requires equal dimensions).
    TextEmbedding,
    /// Mean codebook vector of each class's Top-K codes.
    Codebook,
}

pub enum TextLabelSource<'a> {
    Random { classes: usize, seed: u64 },
    LabelWords(&'a [usize]),
    Tfidf(&'a LabelDescriptions),
}

pub enum SpeechLabelSource<'a> {
    Random { classes: usize, seed: u64 },
    TextEmbedding(&'a Matrix),
    Codebook(&'a LabelDescriptions),
}

fn mean_rows(table: &Matrix, symbols: impl Iterator<Item = usize>, class: usize) -> Result<Vec<f64>> {
    let mut acc = alloc::vec![0.0; table.cols()];
    let mut n = 0usize;
    for s in symbols {
        if s >= table.rows() {
            return Err(Error::Index {
                what: "description symbol",
                index: s,
                bound: table.rows(),
            });
        }
        for (a, &v) in acc.iter_mut().zip(table.row(s)) {
            *a += v;
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::Build(format!("class {class} has an empty description")));
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    Ok(acc)
}

fn table_rows(table: &Matrix, rows: impl Iterator<Item = Result<Vec<f64>>>) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        data.extend(r?);
        n += 1;
    }
    Matrix::from_vec(n, table.cols(), data)
}

/// `L_t` (c×d_t) from the token embedding table.
pub fn build_text_labels(embedding: &Matrix, source: TextLabelSource<'_>) -> Result<Matrix> {
    match source {
        TextLabelSource::Random { classes, seed } => {
            Ok(gaussian(&mut seeded(seed), classes, embedding.cols(), RANDOM_INIT_STD))
        }
        TextLabelSource::LabelWords(names) => table_rows(
            embedding,
            names
                .iter()
                .enumerate()
                .map(|(k, &t)| mean_rows(embedding, core::iter::once(t), k)),
        ),
        TextLabelSource::Tfidf(desc) => table_rows(
            embedding,
            (0..desc.classes.len()).map(|k| mean_rows(embedding, desc.symbols(k), k)),
        ),
    }
}

/// `L_s` (c×d_s) from the speech codebook.
pub fn build_speech_labels(codebook: &Matrix, source: SpeechLabelSource<'_>) -> Result<Matrix> {
    match source {
        SpeechLabelSource::Random { classes, seed } => {
            Ok(gaussian(&mut seeded(seed), classes, codebook.cols(), RANDOM_INIT_STD))
        }
        SpeechLabelSource::TextEmbedding(text_labels) => {
            if text_labels.cols() != codebook.cols() {
                return Err(Error::Dimension {
                    op: "text-embedding speech label init",
                    left: text_labels.shape(),
                    right: codebook.shape(),
                });
            }
            Ok(text_labels.clone())
        }
        SpeechLabelSource::Codebook(desc) => table_rows(
            codebook,
            (0..desc.classes.len()).map(|k| mean_rows(codebook, desc.symbols(k), k)),
        ),
    }
}

/// Both label-embedding matrices and how they were produced.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelBank {
    pub text: Matrix,
    pub speech: Matrix,
    pub trainable: bool,
    pub text_init: TextLabelInit,
    pub speech_init: SpeechLabelInit,
}
