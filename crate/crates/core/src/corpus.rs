//! Synthetic paired-modality corpora.
//!
//! Each class owns a disjoint set of planted symbols per modality. At every
//! position an utterance emits one of its class's planted symbols with
//! probability `salience_prob`, otherwise a background symbol (one planted by
//! no class). The speech side is generated directly as discrete code ids.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{seeded, SeededRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Modality {
    Text,
    Speech,
}

/// Inclusive length range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LengthRange {
    pub min: usize,
    pub max: usize,
}

impl LengthRange {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields, rename_all = "kebab-case"))]
pub struct CorpusSpec {
    pub classes: usize,
    pub text_vocab: usize,
    pub speech_vocab: usize,
    pub text_len: LengthRange,
    pub speech_len: LengthRange,
    /// Planted token ids per class.
    pub text_salient: usize,
    /// Planted code ids per class.
    pub speech_salient: usize,
    pub salience_prob: f64,
    /// Number of earlier same-class utterances whose tokens are prepended as
    /// dialogue history. 0 disables.
    pub context_utterances: usize,
    /// Cap on text length once history is prepended; oldest tokens drop first.
    pub max_text_tokens: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            text_vocab: 200,
            speech_vocab: 1024,
            text_len: LengthRange::new(10, 30),
            speech_len: LengthRange::new(40, 120),
            text_salient: 9,
            speech_salient: 100,
            salience_prob: 0.3,
            context_utterances: 0,
            max_text_tokens: 150,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn vocab(&self, modality: Modality) -> usize {
        match modality {
            Modality::Text => self.text_vocab,
            Modality::Speech => self.speech_vocab,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: alloc::string::String| Err(Error::Spec(msg));
        if self.classes == 0 {
            return fail(format!("classes must be positive"));
        }
        for (name, salient, vocab) in [
            ("text", self.text_salient, self.text_vocab),
            ("speech", self.speech_salient, self.speech_vocab),
        ] {
            if salient == 0 {
                return fail(format!("{name}_salient must be positive"));
            }
            if salient * self.classes > vocab {
                return fail(format!(
                    "{name}_salient x classes = {} exceeds {name}_vocab = {vocab}",
                    salient * self.classes
                ));
            }
        }
        if !(0.0..=1.0).contains(&self.salience_prob) {
            return fail(format!("salience_prob = {} outside [0, 1]", self.salience_prob));
        }
        let needs_background = self.salience_prob < 1.0;
        if needs_background
            && (self.text_salient * self.classes == self.text_vocab
                || self.speech_salient * self.classes == self.speech_vocab)
        {
            return fail(format!("salience_prob < 1 requires at least one background symbol per modality"));
        }
        for (name, r) in [("text_len", self.text_len), ("speech_len", self.speech_len)] {
            if r.min == 0 || r.min > r.max {
                return fail(format!("{name} = {}..={} must satisfy 1 <= min <= max", r.min, r.max));
            }
        }
        if self.max_text_tokens < self.text_len.max {
            return fail(format!(
                "max_text_tokens = {} is below text_len.max = {}",
                self.max_text_tokens, self.text_len.max
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Utterance {
    pub text: Vec<usize>,
    pub speech: Vec<usize>,
    pub label: usize,
}

impl Utterance {
    pub fn symbols(&self, modality: Modality) -> &[usize] {
        match modality {
            Modality::Text => &self.text,
            Modality::Speech => &self.speech,
        }
    }
}

/// Ground-truth planted symbols, ascending within each class.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PlantedMap {
    pub text: Vec<Vec<usize>>,
    pub speech: Vec<Vec<usize>>,
}

impl PlantedMap {
    pub fn class_symbols(&self, modality: Modality, class: usize) -> &[usize] {
        let lists = match modality {
            Modality::Text => &self.text,
            Modality::Speech => &self.speech,
        };
        lists.get(class).map_or(&[], Vec::as_slice)
    }

    /// Whether `symbol` is planted for any class.
    pub fn is_planted(&self, modality: Modality, symbol: usize) -> bool {
        let lists = match modality {
            Modality::Text => &self.text,
            Modality::Speech => &self.speech,
        };
        lists.iter().any(|l| l.binary_search(&symbol).is_ok())
    }

    /// One designated "class name" token per class: the smallest planted text id.
    pub fn name_tokens(&self) -> Vec<usize> {
        self.text.iter().map(|l| l.first().copied().unwrap_or(0)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub spec: CorpusSpec,
    pub utterances: Vec<Utterance>,
    pub planted: PlantedMap,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = alloc::vec![0; self.spec.classes];
        for u in &self.utterances {
            counts[u.label] += 1;
        }
        counts
    }

    /// Per class, the utterances' symbol sequences for one modality.
    pub fn class_view(&self, modality: Modality) -> Vec<Vec<&[usize]>> {
        let mut view = alloc::vec![Vec::new(); self.spec.classes];
        for u in &self.utterances {
            view[u.label].push(u.symbols(modality));
        }
        view
    }

    /// Checks labels and symbol ids against the spec.
    pub fn validate(&self) -> Result<()> {
        for (i, u) in self.utterances.iter().enumerate() {
            if u.label >= self.spec.classes {
                return Err(Error::Index {
                    what: "utterance label",
                    index: u.label,
                    bound: self.spec.classes,
                });
            }
            if u.text.is_empty() || u.speech.is_empty() {
                return Err(Error::Contract(format!("utterance {i} has an empty sequence")));
            }
            for (what, ids, bound) in [
                ("text token", &u.text, self.spec.text_vocab),
                ("speech code", &u.speech, self.spec.speech_vocab),
            ] {
                if let Some(&bad) = ids.iter().find(|&&t| t >= bound) {
                    return Err(Error::Index {
                        what,
                        index: bad,
                        bound,
                    });
                }
            }
        }
        Ok(())
    }
}

fn plant(rng: &mut SeededRng, vocab: usize, classes: usize, per_class: usize) -> (Vec<Vec<usize>>, Vec<usize>) {
    let mut ids: Vec<usize> = (0..vocab).collect();
    ids.shuffle(rng);
    let mut planted: Vec<Vec<usize>> = ids[..classes * per_class]
        .chunks(per_class)
        .map(|c| c.to_vec())
        .collect();
    for p in &mut planted {
        p.sort_unstable();
    }
    let mut background = ids[classes * per_class..].to_vec();
    background.sort_unstable();
    (planted, background)
}

fn emit(rng: &mut SeededRng, len: usize, prob: f64, planted: &[usize], background: &[usize]) -> Vec<usize> {
    (0..len)
        .map(|_| {
            if rng.random::<f64>() < prob {
                planted[rng.random_range(0..planted.len())]
            } else {
                background[rng.random_range(0..background.len())]
            }
        })
        .collect()
}

/// Generates `n` utterances. The first `classes` utterances cover every class
/// once (in shuffled order); the rest draw labels uniformly.
pub fn generate(spec: &CorpusSpec, n: usize) -> Result<Corpus> {
    spec.validate()?;
    if n < spec.classes {
        return Err(Error::Spec(format!(
            "n = {n} is below classes = {}; every class needs an utterance",
            spec.classes
        )));
    }
    let mut rng = seeded(spec.seed);
    let (text_planted, text_background) = plant(&mut rng, spec.text_vocab, spec.classes, spec.text_salient);
    let (speech_planted, speech_background) =
        plant(&mut rng, spec.speech_vocab, spec.classes, spec.speech_salient);

    let mut first: Vec<usize> = (0..spec.classes).collect();
    first.shuffle(&mut rng);

    let mut history: Vec<VecDeque<Vec<usize>>> = alloc::vec![VecDeque::new(); spec.classes];
    let mut utterances = Vec::with_capacity(n);
    for i in 0..n {
        let label = if i < spec.classes {
            first[i]
        } else {
            rng.random_range(0..spec.classes)
        };
        let text_len = rng.random_range(spec.text_len.min..=spec.text_len.max);
        let speech_len = rng.random_range(spec.speech_len.min..=spec.speech_len.max);
        let own_text = emit(
            &mut rng,
            text_len,
            spec.salience_prob,
            &text_planted[label],
            &text_background,
        );
        let speech = emit(
            &mut rng,
            speech_len,
            spec.salience_prob,
            &speech_planted[label],
            &speech_background,
        );

        let text = if spec.context_utterances == 0 {
            own_text
        } else {
            let past = &mut history[label];
            let mut joined: Vec<usize> = past.iter().flatten().copied().collect();
            joined.extend_from_slice(&own_text);
            let excess = joined.len().saturating_sub(spec.max_text_tokens);
            joined.drain(..excess);
            past.push_back(own_text);
            if past.len() > spec.context_utterances {
                past.pop_front();
            }
            joined
        };
        utterances.push(Utterance { text, speech, label });
    }
    Ok(Corpus {
        spec: spec.clone(),
        utterances,
        planted: PlantedMap {
            text: text_planted,
            speech: speech_planted,
        },
    })
}

/// Stratified split. Each class sends `ceil(fraction * n_class)` utterances to
/// the train side, clamped to `1..=n_class - 1` so both sides keep every class.
/// Utterances keep their original relative order on each side.
pub fn split(corpus: &Corpus, train_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {train_fraction} outside (0, 1)")));
    }
    let mut by_class: Vec<Vec<usize>> = alloc::vec![Vec::new(); corpus.spec.classes];
    for (i, u) in corpus.utterances.iter().enumerate() {
        by_class[u.label].push(i);
    }
    let mut rng = seeded(seed);
    let mut in_train = alloc::vec![false; corpus.len()];
    for (class, members) in by_class.iter_mut().enumerate() {
        let count = members.len();
        if count < 2 {
            return Err(Error::Stratification { class, count });
        }
        members.shuffle(&mut rng);
        let take = (libm::ceil(train_fraction * count as f64 - 1e-9) as usize).clamp(1, count - 1);
        for &i in &members[..take] {
            in_train[i] = true;
        }
    }
    let pick = |side: bool| Corpus {
        spec: corpus.spec.clone(),
        utterances: corpus
            .utterances
            .iter()
            .zip(&in_train)
            .filter(|(_, &t)| t == side)
            .map(|(u, _)| u.clone())
            .collect(),
        planted: corpus.planted.clone(),
    };
    Ok((pick(true), pick(false)))
}
