use super::*;
use crate::corpus::Modality;
use crate::diff::grad_check;
use crate::model::{Dims, ModelParams, ParamId};
use crate::rng::{gaussian, seeded};
use rand::Rng;

const DIMS: Dims = Dims {
    classes: 4,
    text_vocab: 10,
    speech_vocab: 12,
    d_text: 8,
    d_speech: 8,
};

/// Every matrix redrawn at N(0, std²), so FD probes see well-conditioned gradients.
fn random_params(seed: u64, std: f64) -> ModelParams {
    let mut p = ModelParams::init(DIMS, seed);
    let mut rng = seeded(seed ^ 0xabc);
    for &id in ParamId::ALL {
        let (r, c) = p.get(id).shape();
        *p.get_mut(id) = gaussian(&mut rng, r, c, std);
    }
    p
}

fn random_utterance(seed: u64, lt: usize, ls: usize) -> Utterance {
    let mut rng = seeded(seed);
    Utterance {
        text: (0..lt).map(|_| rng.random_range(0..DIMS.text_vocab)).collect(),
        speech: (0..ls).map(|_| rng.random_range(0..DIMS.speech_vocab)).collect(),
        label: rng.random_range(0..DIMS.classes),
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    dot / (na.sqrt() * nb.sqrt())
}

#[test]
fn label_attention_self_and_orthogonal() {
    let mut g = Graph::new();
    let h = g.leaf(Matrix::from_rows(&[[1.0, 2.0, 0.0], [0.0, 0.0, 3.0]]));
    let l = g.leaf(Matrix::from_rows(&[[1.0, 2.0, 0.0], [0.0, 0.0, -1.0]]));
    let gt = label_token_attention(&mut g, h, l).unwrap();
    let v = g.value(gt);
    assert!((v[(0, 0)] - 1.0).abs() < 1e-15);
    assert_eq!(v[(0, 1)], 0.0);
    assert_eq!(v[(1, 0)], 0.0);
    assert!((v[(1, 1)] + 1.0).abs() < 1e-15);
}

#[test]
fn label_attention_matches_scalar_loop() {
    for seed in 0..10 {
        let mut rng = seeded(seed);
        let hm = gaussian(&mut rng, 3, 4, 1.0);
        let lm = gaussian(&mut rng, 2, 4, 1.0);
        let mut g = Graph::new();
        let h = g.leaf(hm.clone());
        let l = g.leaf(lm.clone());
        for att in [label_token_attention(&mut g, h, l).unwrap(), label_frame_attention(&mut g, h, l).unwrap()] {
            for i in 0..3 {
                for k in 0..2 {
                    assert!((g.value(att)[(i, k)] - cosine(hm.row(i), lm.row(k))).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn label_attention_rejects_zero_rows_and_dim_mismatch() {
    let mut g = Graph::new();
    let h = g.leaf(Matrix::from_rows(&[[1.0, 0.0], [0.0, 0.0]]));
    let l = g.leaf(Matrix::from_rows(&[[1.0, 1.0]]));
    assert!(matches!(label_token_attention(&mut g, h, l), Err(Error::DegenerateRow { row: 1, .. })));
    let wide = g.leaf(Matrix::filled(1, 3, 1.0));
    assert!(matches!(label_frame_attention(&mut g, l, wide), Err(Error::Dimension { .. })));
}

#[test]
fn guidance_logits_examples() {
    let mut g = Graph::new();
    let constant = g.leaf(Matrix::filled(5, 4, 0.3));
    let p = guidance_logits(&mut g, constant);
    assert!(g.value(p).as_slice().iter().all(|&x| (x - 0.25).abs() < 1e-15));

    let row = [0.1, -0.4, 0.9];
    let single = g.leaf(Matrix::row_vector(&row));
    let p = guidance_logits(&mut g, single);
    let z: f64 = row.iter().map(|x: &f64| x.exp()).sum();
    for (k, x) in row.iter().enumerate() {
        assert!((g.value(p)[(0, k)] - x.exp() / z).abs() < 1e-15);
    }

    let mut rng = seeded(3);
    let m = gaussian(&mut rng, 5, 4, 0.5);
    let v = g.leaf(m.clone());
    let p = guidance_logits(&mut g, v);
    let means: Vec<f64> = (0..4).map(|k| (0..5).map(|i| m[(i, k)]).sum::<f64>() / 5.0).collect();
    let z: f64 = means.iter().map(|x| x.exp()).sum();
    for k in 0..4 {
        assert!((g.value(p)[(0, k)] - means[k].exp() / z).abs() < 1e-12);
    }
}

#[test]
fn guidance_loss_examples() {
    let mut g = Graph::new();
    let constant = g.leaf(Matrix::filled(3, 4, -0.2));
    let l = guidance_loss(&mut g, constant, 1).unwrap();
    assert!((g.value(l).as_slice()[0] - 4f64.ln()).abs() < 1e-15);

    let strong = g.leaf(Matrix::from_rows(&[[60.0, 0.0, 0.0, 0.0], [40.0, 0.0, 0.0, 0.0]]));
    let l = guidance_loss(&mut g, strong, 0).unwrap();
    assert!(g.value(l).as_slice()[0] < 1e-12);
    assert!(matches!(guidance_loss(&mut g, strong, 4), Err(Error::Index { .. })));
}

#[test]
fn guidance_loss_gradient_through_cosine_matches_fd() {
    let mut rng = seeded(4);
    let inputs = [gaussian(&mut rng, 5, 6, 1.0), gaussian(&mut rng, 4, 6, 1.0)];
    let report = grad_check("guidance_loss", &inputs, 1e-5, |g, v| {
        let att = label_token_attention(g, v[0], v[1])?;
        guidance_loss(g, att, 2)
    })
    .unwrap();
    assert!(report.max_relative_error <= 1e-4, "{report:?}");
}

#[test]
fn vanilla_attention_examples() {
    let mut rng = seeded(5);
    let mut g = Graph::new();
    let ht = g.leaf(gaussian(&mut rng, 3, 4, 1.0));
    let hs1 = g.leaf(gaussian(&mut rng, 1, 5, 1.0));
    let w = g.leaf(gaussian(&mut rng, 5, 4, 1.0));
    let a = vanilla_cross_attention(&mut g, ht, hs1, w).unwrap();
    assert_eq!(g.value(a), &Matrix::filled(3, 1, 1.0));

    let hs = g.leaf(gaussian(&mut rng, 6, 5, 1.0));
    let zero = g.leaf(Matrix::zeros(5, 4));
    let a = vanilla_cross_attention(&mut g, ht, hs, zero).unwrap();
    assert!(g.value(a).as_slice().iter().all(|&x| (x - 1.0 / 6.0).abs() < 1e-15));

    let wrong = g.leaf(Matrix::zeros(4, 5));
    assert!(matches!(vanilla_cross_attention(&mut g, ht, hs, wrong), Err(Error::Dimension { .. })));
}

/// Triple loops plus a scalar softmax.
fn vanilla_oracle(ht: &Matrix, hs: &Matrix, w: &Matrix) -> Matrix {
    let (lt, ls) = (ht.rows(), hs.rows());
    let mut out = Matrix::zeros(lt, ls);
    for i in 0..lt {
        let mut scores = vec![0.0; ls];
        for j in 0..ls {
            let mut s = 0.0;
            for a in 0..hs.cols() {
                for b in 0..ht.cols() {
                    s += ht[(i, b)] * hs[(j, a)] * w[(a, b)];
                }
            }
            scores[j] = s;
        }
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        for j in 0..ls {
            out[(i, j)] = (scores[j] - m).exp() / z;
        }
    }
    out
}

#[test]
fn vanilla_attention_matches_loop_oracle() {
    for seed in 0..10 {
        let mut rng = seeded(100 + seed);
        let (htm, hsm, wm) = (gaussian(&mut rng, 4, 3, 1.0), gaussian(&mut rng, 7, 5, 1.0), gaussian(&mut rng, 5, 3, 1.0));
        let mut g = Graph::new();
        let (ht, hs, w) = (g.leaf(htm.clone()), g.leaf(hsm.clone()), g.leaf(wm.clone()));
        let a = vanilla_cross_attention(&mut g, ht, hs, w).unwrap();
        assert!(g.value(a).max_abs_diff(&vanilla_oracle(&htm, &hsm, &wm)) < 1e-12);
    }
}

#[test]
fn aligned_speech_examples() {
    let hsm = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
    let mut g = Graph::new();
    let hs = g.leaf(hsm.clone());
    let onehot = g.leaf(Matrix::from_rows(&[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]));
    let a = aligned_speech(&mut g, onehot, hs).unwrap();
    assert_eq!(g.value(a), &Matrix::from_rows(&[[5.0, 6.0], [1.0, 2.0], [3.0, 4.0]]));

    let uniform = g.leaf(Matrix::filled(2, 3, 1.0 / 3.0));
    let a = aligned_speech(&mut g, uniform, hs).unwrap();
    assert!(g.value(a).max_abs_diff(&Matrix::from_rows(&[[3.0, 4.0], [3.0, 4.0]])) < 1e-14);

    let bad = g.leaf(Matrix::zeros(2, 2));
    assert!(matches!(aligned_speech(&mut g, bad, hs), Err(Error::Dimension { .. })));
}

#[test]
fn label_guided_attention_examples() {
    let mut g = Graph::new();
    let zeros = g.leaf(Matrix::zeros(3, 4));
    let mut rng = seeded(6);
    let gsm = gaussian(&mut rng, 5, 4, 0.5);
    let gs = g.leaf(gsm.clone());
    let a = label_guided_attention(&mut g, zeros, gs).unwrap();
    assert_eq!(g.value(a), &Matrix::zeros(3, 5));

    let one = g.leaf(Matrix::from_rows(&[[1.0]]));
    let a = label_guided_attention(&mut g, one, one).unwrap();
    assert_eq!(g.value(a), &Matrix::from_rows(&[[1.0]]));

    let gtm = gaussian(&mut rng, 3, 4, 0.5);
    let gt = g.leaf(gtm.clone());
    let a = label_guided_attention(&mut g, gt, gs).unwrap();
    for i in 0..3 {
        for j in 0..5 {
            let s: f64 = (0..4).map(|k| gtm[(i, k)] * gsm[(j, k)]).sum();
            assert!((g.value(a)[(i, j)] - s).abs() < 1e-12);
        }
    }
    let three = g.leaf(Matrix::zeros(2, 3));
    assert!(matches!(label_guided_attention(&mut g, gt, three), Err(Error::Dimension { op: "label_guided_attention", .. })));
}

#[test]
fn loss_weights_default_and_combination() {
    let w = LossWeights::default();
    assert_eq!((w.fused, w.constraint, w.text_guidance, w.speech_guidance), (1.0, 0.5, 0.2, 0.2));
    assert_eq!(w.combine(0.0, 0.0, 0.0, 0.0), 0.0);
    assert!((w.combine(1.0, 2.0, 3.0, 4.0) - 3.4).abs() < 1e-12);
}

#[test]
fn forward_invariants_hold_on_random_inputs() {
    for seed in 0..200u64 {
        let params = ModelParams::init(DIMS, seed);
        let mut rng = seeded(seed);
        let utt = random_utterance(seed, rng.random_range(1..8), rng.random_range(1..12));
        let mode = FusionMode::ALL[seed as usize % 4];
        let cfg = FusionConfig { mode, ..FusionConfig::default() };
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let out = forward(&mut g, &utt, &p, &cfg).unwrap();
        let att = out.attention(&g);
        assert!(att.text_label.as_slice().iter().all(|x| x.abs() <= 1.0 + 1e-12));
        assert!(att.speech_label.as_slice().iter().all(|x| x.abs() <= 1.0 + 1e-12));
        assert!(att.label_guided.as_slice().iter().all(|x| x.abs() <= 4.0 + 1e-9));
        for i in 0..att.vanilla.rows() {
            assert!((att.vanilla.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
        let b = out.breakdown(&g);
        assert!(b.components().iter().all(|&x| x >= 0.0));
        let [m, c, t, s] = b.components();
        assert!((b.total - cfg.weights.combine(m, c, t, s)).abs() <= 1e-12);
        if mode != FusionMode::Constraint {
            assert_eq!(b.constraint, 0.0);
        }
        assert_eq!(g.value(out.logits).shape(), (1, 4));
    }
}

#[test]
fn constraint_is_zero_when_label_attention_replaces_vanilla() {
    let params = ModelParams::init(DIMS, 1);
    let utt = random_utterance(1, 5, 9);
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let out = forward(&mut g, &utt, &p, &FusionConfig::default()).unwrap();
    let same = constraint_loss(&mut g, out.label_guided_attention, out.label_guided_attention).unwrap();
    assert_eq!(g.value(same).as_slice()[0], 0.0);
    assert!(g.value(out.constraint_loss).as_slice()[0] > 0.0);
}

/// Plain cross-attention fusion, coded without any label machinery.
fn no_label_forward(params: &ModelParams, utt: &Utterance) -> f64 {
    let mut g = Graph::new();
    let p = params.bind_frozen(&mut g);
    let ht = crate::encoders::text_encode(&mut g, &utt.text, &p.text).unwrap();
    let hs = crate::encoders::speech_encode(&mut g, &utt.speech, &p.speech).unwrap();
    let hsw = g.matmul(hs, p.fusion.cross_map).unwrap();
    let hswt = g.transpose(hsw);
    let scores = g.matmul(ht, hswt).unwrap();
    let a = g.row_softmax(scores);
    let aligned = g.matmul(a, hs).unwrap();
    let hm = g.concat_cols(ht, aligned).unwrap();
    let v = g.pool(hm, Axis::Rows, PoolKind::Max);
    let z = g.matmul(v, p.fusion.fused_weight).unwrap();
    let z = g.add(z, p.fusion.fused_bias).unwrap();
    let l = g.cross_entropy(z, utt.label).unwrap();
    g.value(l).as_slice()[0]
}

#[test]
fn only_vanilla_without_guidance_is_plain_cross_attention() {
    for seed in 0..20 {
        let params = random_params(seed, 0.5);
        let utt = random_utterance(seed + 7, 4, 9);
        let cfg = FusionConfig {
            mode: FusionMode::OnlyVanilla,
            weights: LossWeights::unguided(),
            normalize_label_attention: false,
        };
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let out = forward(&mut g, &utt, &p, &cfg).unwrap();
        let total = g.value(out.total).as_slice()[0];
        assert!((total - no_label_forward(&params, &utt)).abs() <= 1e-12);
    }
}

#[test]
fn scaling_a_text_row_leaves_label_attention_unchanged() {
    let mut rng = seeded(9);
    let hm = gaussian(&mut rng, 4, 6, 1.0);
    let lm = gaussian(&mut rng, 3, 6, 1.0);
    let mut scaled = hm.clone();
    for x in scaled.row_mut(2) {
        *x *= 7.5;
    }
    let mut g = Graph::new();
    let (h, hs, l) = (g.leaf(hm), g.leaf(scaled), g.leaf(lm));
    let a = label_token_attention(&mut g, h, l).unwrap();
    let b = label_token_attention(&mut g, hs, l).unwrap();
    assert!(g.value(a).max_abs_diff(g.value(b)) <= 1e-12);
    let pa = guidance_logits(&mut g, a);
    let pb = guidance_logits(&mut g, b);
    assert!(g.value(pa).max_abs_diff(g.value(pb)) <= 1e-12);
}

#[test]
fn full_objective_gradient_matches_fd_in_every_mode() {
    for (i, mode) in FusionMode::ALL.iter().enumerate() {
        for normalize in [false, true] {
            let params = random_params(40 + i as u64, 0.5);
            let utt = random_utterance(50 + i as u64, 3, 5);
            let cfg = FusionConfig {
                mode: *mode,
                weights: LossWeights::default(),
                normalize_label_attention: normalize,
            };
            let report = grad_check("objective", &params.trainable_tensors(), 1e-5, |g, v| {
                let p = params.bind_with(g, v);
                Ok(forward(g, &utt, &p, &cfg)?.total)
            })
            .unwrap();
            assert!(report.max_relative_error <= 1e-4, "{mode:?} normalize={normalize}: {report:?}");
        }
    }
}

#[test]
fn codebook_gradient_is_identically_zero() {
    let params = random_params(3, 0.5);
    let utt = random_utterance(3, 4, 6);
    let mut g = Graph::new();
    let p = params.bind(&mut g);
    let out = forward(&mut g, &utt, &p, &FusionConfig::default()).unwrap();
    g.backward(out.total).unwrap();
    let grads = p.gradients(&g);
    assert!(grads[ParamId::Codebook.index()].as_slice().iter().all(|&x| x == 0.0));
    assert!(grads[ParamId::SpeechQuery.index()].as_slice().iter().any(|&x| x != 0.0));
}

#[test]
fn unimodal_forward_examples() {
    let params = random_params(5, 0.5);
    let utt = random_utterance(5, 4, 7);
    for modality in [Modality::Text, Modality::Speech] {
        let mut g = Graph::new();
        let p = params.bind(&mut g);
        let out = unimodal_forward(&mut g, &utt, modality, &p, 0.0).unwrap();
        assert_eq!(g.value(out.logits).shape(), (1, 4));
        assert_eq!(g.value(out.loss), g.value(out.classification_loss));

        let report = grad_check("unimodal", &params.trainable_tensors(), 1e-5, |g, v| {
            let p = params.bind_with(g, v);
            Ok(unimodal_forward(g, &utt, modality, &p, 0.2)?.loss)
        })
        .unwrap();
        assert!(report.max_relative_error <= 1e-4, "{modality:?}: {report:?}");
    }
}

#[test]
fn score_fusion_examples() {
    assert_eq!(score_fusion(&[1.0, 0.0], &[0.0, 0.5]).unwrap(), 0);
    assert_eq!(score_fusion(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0);
    assert_eq!(score_fusion(&[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]).unwrap(), 1);
    assert!(matches!(score_fusion(&[1.0], &[1.0, 2.0]), Err(Error::Dimension { .. })));

    let mut rng = seeded(10);
    for _ in 0..100 {
        let a: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut best = 0;
        for k in 1..4 {
            if a[k] + b[k] > a[best] + b[best] {
                best = k;
            }
        }
        assert_eq!(score_fusion(&a, &b).unwrap(), best);
    }
}

#[test]
fn class_averaged_attention_examples() {
    assert_eq!(class_averaged_attention(&Matrix::from_rows(&[[1.0, 1.0, 1.0, 1.0]])), vec![1.0]);
    assert_eq!(class_averaged_attention(&Matrix::from_rows(&[[1.0, -1.0]])), vec![0.0]);
    let mut rng = seeded(11);
    let m = gaussian(&mut rng, 6, 4, 1.0);
    let avg = class_averaged_attention(&m);
    for i in 0..6 {
        let mut s = 0.0;
        for k in 0..4 {
            s += m[(i, k)];
        }
        assert!((avg[i] - s / 4.0).abs() < 1e-12);
    }
}
