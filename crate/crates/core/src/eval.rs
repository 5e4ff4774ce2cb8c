//! Accuracy metrics and predictors.

use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{Corpus, Utterance};
use crate::error::{Error, Result};
use crate::fusion::score_fusion;
use crate::model::Model;

/// Weighted and unweighted accuracy with the confusion matrix they came from.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalResult {
    pub wa: f64,
    pub ua: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub n: usize,
}

impl EvalResult {
    /// Per-class recall, `None` for classes without support.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        self.confusion
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let support: usize = row.iter().sum();
                (support > 0).then(|| row[k] as f64 / support as f64)
            })
            .collect()
    }
}

/// WA is overall accuracy; UA is mean recall over classes present in `truth`.
pub fn metrics(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<EvalResult> {
    if truth.len() != predicted.len() {
        return Err(Error::Dimension {
            op: "metrics",
            left: (truth.len(), 1),
            right: (predicted.len(), 1),
        });
    }
    if truth.is_empty() {
        return Err(Error::Evaluation("no utterances to evaluate".into()));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        for (what, id) in [("true class", t), ("predicted class", p)] {
            if id >= classes {
                return Err(Error::Index {
                    what,
                    index: id,
                    bound: classes,
                });
            }
        }
        confusion[t][p] += 1;
    }
    let n = truth.len();
    let correct: usize = (0..classes).map(|k| confusion[k][k]).sum();
    let mut recall_sum = 0.0;
    let mut present = 0usize;
    for (k, row) in confusion.iter().enumerate() {
        let support: usize = row.iter().sum();
        if support > 0 {
            recall_sum += row[k] as f64 / support as f64;
            present += 1;
        }
    }
    Ok(EvalResult {
        wa: correct as f64 / n as f64,
        ua: recall_sum / present as f64,
        confusion,
        n,
    })
}

/// Anything that maps an utterance to a class id.
pub trait Predictor {
    fn predict(&self, utt: &Utterance) -> Result<usize>;
}

impl Predictor for Model {
    fn predict(&self, utt: &Utterance) -> Result<usize> {
        Model::predict(self, utt)
    }
}

/// Sums the logits of a text-only and a speech-only model.
#[derive(Debug, Clone, Copy)]
pub struct ScoreFusion<'a> {
    pub text: &'a Model,
    pub speech: &'a Model,
}

impl Predictor for ScoreFusion<'_> {
    fn predict(&self, utt: &Utterance) -> Result<usize> {
        score_fusion(&self.text.logits(utt)?, &self.speech.logits(utt)?)
    }
}

pub fn predict_all<P: Predictor + ?Sized>(predictor: &P, utterances: &[Utterance]) -> Result<Vec<usize>> {
    utterances.iter().map(|u| predictor.predict(u)).collect()
}

pub fn evaluate_utterances<P: Predictor + ?Sized>(
    predictor: &P,
    utterances: &[Utterance],
    classes: usize,
) -> Result<EvalResult> {
    if utterances.is_empty() {
        return Err(Error::Evaluation("no utterances to evaluate".into()));
    }
    let predicted = predict_all(predictor, utterances)?;
    let truth: Vec<usize> = utterances.iter().map(|u| u.label).collect();
    metrics(classes, &truth, &predicted)
}

pub fn evaluate<P: Predictor + ?Sized>(predictor: &P, corpus: &Corpus) -> Result<EvalResult> {
    evaluate_utterances(predictor, &corpus.utterances, corpus.spec.classes)
}
