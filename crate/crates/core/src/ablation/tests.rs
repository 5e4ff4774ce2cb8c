use super::*;
use crate::corpus::LengthRange;

fn protocol() -> Protocol {
    Protocol {
        corpus: CorpusSpec {
            text_vocab: 40,
            speech_vocab: 60,
            text_len: LengthRange { min: 4, max: 8 },
            speech_len: LengthRange { min: 6, max: 12 },
            text_salient: 3,
            speech_salient: 5,
            salience_prob: 0.4,
            ..CorpusSpec::default()
        },
        utterances: 40,
        train_fraction: 0.75,
    }
}

fn base() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        batch_size: 4,
        learning_rate: 1e-2,
        k_text: 3,
        k_speech: 5,
        d_text: 6,
        d_speech: 6,
        ..TrainConfig::default()
    }
}

#[test]
fn single_condition_matches_direct_training() {
    let report = run_ablation(&[Condition::train("c", base())], &protocol(), &[3]).unwrap();
    let (tr, te) = protocol().data(3).unwrap();
    let (model, _) = train(&tr, None, &TrainConfig { seed: 3, ..base() }).unwrap();
    let direct = evaluate(&model, &te).unwrap();
    assert_eq!(report.conditions[0].per_seed[0].result.as_ref().unwrap(), &direct);
    assert_eq!(report.conditions[0].mean_ua(), Some(direct.ua));
    assert_eq!(report.seeds, vec![3]);
}

#[test]
fn fusion_modes_enumerate_the_four_variants() {
    let names: Vec<String> = fusion_mode_conditions(&base()).into_iter().map(|c| c.name).collect();
    assert_eq!(names, ["constraint", "sum", "only-label", "only-vanilla"]);
}

#[test]
fn identical_conditions_give_identical_results() {
    let c = Condition::train("a", base());
    let d = Condition::train("b", base());
    let report = run_ablation(&[c, d], &protocol(), &[0, 1]).unwrap();
    assert_eq!(report.conditions[0].per_seed, report.conditions[1].per_seed);
    assert_eq!(report.conditions[0].per_seed.len(), 2);
}

#[test]
fn standard_conditions_cover_every_table_row() {
    let names: Vec<String> = standard_conditions(&base()).into_iter().map(|c| c.name).collect();
    for expected in [
        "constraint",
        "multimodal-unguided",
        "text-no-le",
        "text-le-tfidf",
        "speech-no-le",
        "speech-le-codebook",
        "speech-le-text-embedding",
        "score-fusion",
    ] {
        assert!(names.iter().any(|n| n == expected), "{expected}");
    }
    assert_eq!(names.len(), 14);
}

#[test]
fn score_fusion_condition_runs() {
    let report = run_ablation(&[score_fusion_condition(&base())], &protocol(), &[0]).unwrap();
    let r = report.conditions[0].per_seed[0].result.as_ref().unwrap();
    assert_eq!(r.n, protocol().data(0).unwrap().1.len());
}

#[test]
fn divergence_is_recorded_and_the_run_continues() {
    let bad = Condition::train(
        "bad",
        TrainConfig {
            weights: LossWeights { fused: f64::MAX, ..LossWeights::default() },
            ..base()
        },
    );
    let report = run_ablation(&[bad, Condition::train("good", base())], &protocol(), &[0]).unwrap();
    assert_eq!(report.conditions[0].failures(), 1);
    assert_eq!(report.conditions[0].mean_ua(), None);
    assert!(report.condition("good").unwrap().mean_ua().is_some());
}

#[test]
fn empty_inputs_are_rejected() {
    assert!(matches!(run_ablation(&[], &protocol(), &[0]), Err(Error::Config(_))));
    assert!(matches!(run_ablation(&[Condition::train("c", base())], &protocol(), &[]), Err(Error::Config(_))));
}

#[test]
fn sweep_shapes_and_bounds() {
    assert!(DEFAULT_SPEECH_K.contains(&100));
    assert!(DEFAULT_TEXT_K.contains(&9));
    let points = sweep_k(&[1, 5], Modality::Speech, &base(), &protocol(), &[0]).unwrap();
    assert_eq!(points.len(), 2);
    assert_eq!(points.iter().map(|p| p.k).collect::<Vec<_>>(), [1, 5]);
    assert!(matches!(sweep_k(&[61], Modality::Speech, &base(), &protocol(), &[0]), Err(Error::Config(_))));
    assert!(matches!(sweep_k(&[0], Modality::Text, &base(), &protocol(), &[0]), Err(Error::Config(_))));
    assert!(matches!(sweep_k(&[], Modality::Text, &base(), &protocol(), &[0]), Err(Error::Config(_))));
}

#[test]
fn single_k_reduces_to_one_condition() {
    let points = sweep_k(&[2], Modality::Text, &base(), &protocol(), &[0]).unwrap();
    let direct = run_ablation(&[Condition::train("x", TrainConfig { k_text: 2, ..base() })], &protocol(), &[0]).unwrap();
    assert_eq!(points[0].report.per_seed, direct.conditions[0].per_seed);
}
