//! Class-averaged label attention traces of a trained model.

use alloc::vec::Vec;

use crate::corpus::{Modality, PlantedMap, Utterance};
use crate::error::{Error, Result};
use crate::fusion::class_averaged_attention;
use crate::model::Model;

/// Per-position `G̃` of one modality with the symbol at each position.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub modality: Modality,
    pub symbols: Vec<usize>,
    pub values: Vec<f64>,
    pub planted: Vec<bool>,
}

pub fn attention_traces(model: &Model, utt: &Utterance, planted: &PlantedMap) -> Result<[AttentionTrace; 2]> {
    let (gt, gs) = model.label_attention(utt)?;
    let trace = |modality: Modality, g| {
        let symbols = utt.symbols(modality).to_vec();
        AttentionTrace {
            modality,
            planted: symbols.iter().map(|&s| planted.is_planted(modality, s)).collect(),
            values: class_averaged_attention(g),
            symbols,
        }
    };
    Ok([trace(Modality::Text, &gt), trace(Modality::Speech, &gs)])
}

/// Mean `G̃` over planted and over background positions.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantedContrast {
    pub planted: f64,
    pub background: f64,
    pub planted_positions: usize,
    pub background_positions: usize,
}

impl PlantedContrast {
    pub fn separates(&self) -> bool {
        self.planted > self.background
    }
}

/// Pools every position of every utterance, separately per modality.
pub fn planted_contrast(
    model: &Model,
    utterances: &[Utterance],
    planted: &PlantedMap,
) -> Result<[PlantedContrast; 2]> {
    let mut sums = [[0.0f64; 2]; 2];
    let mut counts = [[0usize; 2]; 2];
    for utt in utterances {
        for (m, trace) in attention_traces(model, utt, planted)?.iter().enumerate() {
            for (&v, &p) in trace.values.iter().zip(&trace.planted) {
                let slot = usize::from(!p);
                sums[m][slot] += v;
                counts[m][slot] += 1;
            }
        }
    }
    let mut out = [PlantedContrast {
        planted: 0.0,
        background: 0.0,
        planted_positions: 0,
        background_positions: 0,
    }; 2];
    for m in 0..2 {
        if counts[m][0] == 0 || counts[m][1] == 0 {
            return Err(Error::Evaluation("need both planted and background positions".into()));
        }
        out[m] = PlantedContrast {
            planted: sums[m][0] / counts[m][0] as f64,
            background: sums[m][1] / counts[m][1] as f64,
            planted_positions: counts[m][0],
            background_positions: counts[m][1],
        };
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate, CorpusSpec, LengthRange};
    use crate::matrix::Matrix;
    use crate::model::{Dims, ModelParams, ParamId, Task};

    fn setup() -> (Model, crate::corpus::Corpus) {
        let spec = CorpusSpec {
            text_vocab: 30,
            speech_vocab: 40,
            text_len: LengthRange { min: 3, max: 6 },
            speech_len: LengthRange { min: 4, max: 8 },
            text_salient: 3,
            speech_salient: 4,
            ..CorpusSpec::default()
        };
        let corpus = generate(&spec, 12).unwrap();
        let dims = Dims {
            classes: 4,
            text_vocab: 30,
            speech_vocab: 40,
            d_text: 6,
            d_speech: 6,
        };
        let model = Model {
            params: ModelParams::init(dims, 2),
            task: Task::Multimodal,
            fusion: Default::default(),
        };
        (model, corpus)
    }

    #[test]
    fn traces_match_class_averaged_attention() {
        let (model, corpus) = setup();
        let utt = &corpus.utterances[0];
        let [t, s] = attention_traces(&model, utt, &corpus.planted).unwrap();
        let (gt, gs) = model.label_attention(utt).unwrap();
        assert_eq!(t.values, class_averaged_attention(&gt));
        assert_eq!(s.values, class_averaged_attention(&gs));
        assert_eq!(t.symbols, utt.text);
        for (i, &sym) in s.symbols.iter().enumerate() {
            assert_eq!(s.planted[i], corpus.planted.is_planted(Modality::Speech, sym));
        }
    }

    #[test]
    fn identical_label_rows_and_tokens_give_flat_traces() {
        let (mut model, corpus) = setup();
        let row: Vec<f64> = (0..6).map(|i| 1.0 + i as f64).collect();
        *model.params.get_mut(ParamId::TextLabels) = Matrix::from_rows(&[row.clone(), row.clone(), row.clone(), row]);
        let utt = Utterance {
            text: vec![5, 5, 5, 5],
            ..corpus.utterances[0].clone()
        };
        let [t, _] = attention_traces(&model, &utt, &corpus.planted).unwrap();
        assert!(t.values.iter().all(|v| (v - t.values[0]).abs() < 1e-12));
    }

    #[test]
    fn contrast_pools_positions() {
        let (model, corpus) = setup();
        let [t, s] = planted_contrast(&model, &corpus.utterances, &corpus.planted).unwrap();
        let total_text: usize = corpus.utterances.iter().map(|u| u.text.len()).sum();
        let total_speech: usize = corpus.utterances.iter().map(|u| u.speech.len()).sum();
        assert_eq!(t.planted_positions + t.background_positions, total_text);
        assert_eq!(s.planted_positions + s.background_positions, total_speech);
    }
}
