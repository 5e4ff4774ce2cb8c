use lemer::checkpoint::{self, Checkpoint, MAGIC};
use lemer::Error;
use lemer_core::corpus::{generate, split, Corpus, CorpusSpec, LengthRange};
use lemer_core::trainer::{TrainConfig, TrainState};

fn data() -> (Corpus, Corpus) {
    let spec = CorpusSpec {
        text_vocab: 40,
        speech_vocab: 60,
        text_len: LengthRange::new(4, 8),
        speech_len: LengthRange::new(6, 12),
        text_salient: 3,
        speech_salient: 5,
        salience_prob: 0.4,
        ..CorpusSpec::default()
    };
    split(&generate(&spec, 48).unwrap(), 0.75, 0).unwrap()
}

fn config() -> TrainConfig {
    TrainConfig {
        epochs: 4,
        batch_size: 4,
        learning_rate: 1e-2,
        k_text: 3,
        k_speech: 5,
        d_text: 6,
        d_speech: 6,
        ..TrainConfig::default()
    }
}

fn trained(epochs: usize) -> (TrainState, Corpus, Corpus) {
    let (tr, te) = data();
    let mut s = TrainState::initialize(&tr, &TrainConfig { epochs, ..config() }).unwrap();
    s.run(&tr, Some(&te)).unwrap();
    (s, tr, te)
}

#[test]
fn round_trip_reproduces_state_and_logits_bitwise() {
    let (state, _, te) = trained(2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &Checkpoint { state: state.clone(), metrics: None }).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    assert_eq!(loaded.state, state);
    let (a, b) = (state.model(), loaded.state.model());
    for u in &te.utterances {
        let (la, lb) = (a.logits(u).unwrap(), b.logits(u).unwrap());
        assert_eq!(la.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), lb.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }
}

#[test]
fn frozen_label_state_round_trips() {
    let (tr, _) = data();
    let s = TrainState::initialize(&tr, &TrainConfig { labels_trainable: false, ..config() }).unwrap();
    let bytes = checkpoint::to_bytes(&Checkpoint { state: s.clone(), metrics: None }).unwrap();
    assert_eq!(checkpoint::from_bytes(&bytes).unwrap().state, s);
}

#[test]
fn identical_runs_write_identical_bytes() {
    let a = checkpoint::to_bytes(&Checkpoint { state: trained(2).0, metrics: None }).unwrap();
    let b = checkpoint::to_bytes(&Checkpoint { state: trained(2).0, metrics: None }).unwrap();
    assert_eq!(a, b);
}

#[test]
fn resume_from_file_matches_uninterrupted_training() {
    let (full, tr, te) = trained(4);
    let (half, _, _) = trained(2);
    let bytes = checkpoint::to_bytes(&Checkpoint { state: half, metrics: None }).unwrap();
    let mut resumed = checkpoint::from_bytes(&bytes).unwrap().state;
    resumed.config.epochs = 4;
    resumed.run(&tr, Some(&te)).unwrap();
    assert_eq!(resumed.log, full.log);
    assert_eq!(resumed.params, full.params);
    assert_eq!(resumed.adam, full.adam);
}

#[test]
fn every_corrupted_byte_is_detected() {
    let (state, _, _) = trained(1);
    let bytes = checkpoint::to_bytes(&Checkpoint { state, metrics: None }).unwrap();
    let stride = (bytes.len() / 300).max(1);
    for i in (MAGIC.len() + 4..bytes.len()).step_by(stride) {
        let mut bad = bytes.clone();
        bad[i] ^= 0x20;
        match checkpoint::from_bytes(&bad) {
            Err(Error::Integrity(_)) => {}
            other => panic!("byte {i}: {:?}", other.map(|_| ())),
        }
    }
}

#[test]
fn truncation_and_bad_headers_are_rejected() {
    let (state, _, _) = trained(1);
    let bytes = checkpoint::to_bytes(&Checkpoint { state, metrics: None }).unwrap();
    for cut in [0, 5, 12, 30, bytes.len() / 2, bytes.len() - 1] {
        assert!(matches!(checkpoint::from_bytes(&bytes[..cut]), Err(Error::Integrity(_))), "cut {cut}");
    }
    let mut wrong_version = bytes.clone();
    wrong_version[8..12].copy_from_slice(&7u32.to_le_bytes());
    assert!(matches!(
        checkpoint::from_bytes(&wrong_version),
        Err(Error::UnsupportedVersion { found: 7, supported: 1 })
    ));
    let mut extra = bytes;
    extra.push(0);
    assert!(matches!(checkpoint::from_bytes(&extra), Err(Error::Integrity(_))));
}
