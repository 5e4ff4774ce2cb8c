//! Finite-difference checks for every graph op and the full objective.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::corpus::Utterance;
use crate::diff::{grad_check, Axis, GradCheckReport, Graph, PoolKind, Var};
use crate::error::Result;
use crate::fusion::{forward, FusionConfig, FusionMode};
use crate::matrix::Matrix;
use crate::model::{Dims, ModelParams, ParamId};
use crate::rng::{gaussian, seeded, seeded_stream, SeededRng};

pub const GRAD_TOLERANCE: f64 = 1e-4;
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SuiteConfig {
    pub seed: u64,
    /// Random instances per op.
    pub op_instances: usize,
    /// Random instances per fusion mode.
    pub model_instances: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            op_instances: 40,
            model_instances: 2,
        }
    }
}

/// Size of the objective instances: three tokens, five frames, width eight.
pub const SUITE_DIMS: Dims = Dims {
    classes: 4,
    text_vocab: 10,
    speech_vocab: 12,
    d_text: 8,
    d_speech: 8,
};
pub const SUITE_TEXT_LEN: usize = 3;
pub const SUITE_SPEECH_LEN: usize = 5;

fn readout(g: &mut Graph, x: Var, rng: &mut SeededRng) -> Result<Var> {
    let (r, c) = g.value(x).shape();
    let u = g.constant(gaussian(rng, 1, r, 1.0));
    let w = g.constant(gaussian(rng, c, 1, 1.0));
    let ux = g.matmul(u, x)?;
    g.matmul(ux, w)
}

fn dim(rng: &mut SeededRng) -> usize {
    rng.random_range(1..5)
}

type Builder = fn(&mut Graph, &[Var], u64) -> Result<Var>;

fn op_case(seed: u64, name: &str, inputs: Vec<Matrix>, build: Builder) -> Result<GradCheckReport> {
    grad_check(name, &inputs, FD_STEP, |g, v| build(g, v, seed))
}

fn one_op(name: &str, instance: u64, seed: u64) -> Result<GradCheckReport> {
    let mut rng = seeded_stream(seed, instance);
    let (r, k, c) = (dim(&mut rng), dim(&mut rng), dim(&mut rng));
    let mut m = |rows, cols| gaussian(&mut rng, rows, cols, 1.0);
    let probe = seed ^ (instance << 8);
    let r_out = |g: &mut Graph, x: Var, s: u64| readout(g, x, &mut seeded(s));
    match name {
        "matmul" => op_case(probe, name, [m(r, k), m(k, c)].into(), |g, v, s| {
            let y = g.matmul(v[0], v[1])?;
            readout(g, y, &mut seeded(s))
        }),
        "transpose" => op_case(probe, name, [m(r, c)].into(), |g, v, s| {
            let y = g.transpose(v[0]);
            readout(g, y, &mut seeded(s))
        }),
        "add" => op_case(probe, name, [m(r, c), m(r, c)].into(), |g, v, s| {
            let y = g.add(v[0], v[1])?;
            readout(g, y, &mut seeded(s))
        }),
        "scale" => op_case(probe, name, [m(r, c)].into(), |g, v, s| {
            let y = g.scale(v[0], -1.7);
            readout(g, y, &mut seeded(s))
        }),
        "row_softmax" => op_case(probe, name, [m(r, c)].into(), |g, v, s| {
            let y = g.row_softmax(v[0]);
            readout(g, y, &mut seeded(s))
        }),
        "row_l2_normalize" => op_case(probe, name, [m(r, c)].into(), |g, v, s| {
            let y = g.row_l2_normalize(v[0])?;
            readout(g, y, &mut seeded(s))
        }),
        "pool" => {
            let x = m(r, c);
            let mut reports = Vec::new();
            for (i, (axis, kind)) in [
                (Axis::Rows, PoolKind::Mean),
                (Axis::Rows, PoolKind::Max),
                (Axis::Cols, PoolKind::Mean),
                (Axis::Cols, PoolKind::Max),
            ]
            .into_iter()
            .enumerate()
            {
                reports.push(grad_check(name, &[x.clone()], FD_STEP, |g, v| {
                    let y = g.pool(v[0], axis, kind);
                    r_out(g, y, probe + i as u64)
                })?);
            }
            Ok(GradCheckReport::merge(name, &reports))
        }
        "concat_cols" => op_case(probe, name, [m(r, k), m(r, c)].into(), |g, v, s| {
            let y = g.concat_cols(v[0], v[1])?;
            readout(g, y, &mut seeded(s))
        }),
        "cross_entropy" => op_case(probe, name, [m(1, c + 2)].into(), |g, v, s| {
            let target = (s as usize) % g.value(v[0]).cols();
            g.cross_entropy(v[0], target)
        }),
        "mse" => op_case(probe, name, [m(r, c), m(r, c)].into(), |g, v, _| g.mse(v[0], v[1])),
        "gather_rows" => op_case(probe, name, [m(r + 2, c)].into(), |g, v, s| {
            let n = g.value(v[0]).rows();
            let ids = [0, n - 1, (s as usize) % n, 1];
            let y = g.gather_rows(v[0], &ids)?;
            readout(g, y, &mut seeded(s))
        }),
        other => Err(crate::Error::Config(format!("unknown op {other}"))),
    }
}

pub const OP_NAMES: &[&str] = &[
    "matmul",
    "transpose",
    "add",
    "scale",
    "row_softmax",
    "row_l2_normalize",
    "pool",
    "concat_cols",
    "cross_entropy",
    "mse",
    "gather_rows",
];

/// One merged report per op over `instances` random shapes and values.
pub fn op_suite(seed: u64, instances: usize) -> Result<Vec<GradCheckReport>> {
    OP_NAMES
        .iter()
        .map(|name| {
            let reports = (0..instances as u64)
                .map(|i| one_op(name, i, seed))
                .collect::<Result<Vec<_>>>()?;
            Ok(GradCheckReport::merge(name, &reports))
        })
        .collect()
}

/// Parameters with every matrix drawn at N(0, 0.25) and a random utterance.
pub fn model_instance(seed: u64) -> (ModelParams, Utterance) {
    let mut params = ModelParams::init(SUITE_DIMS, seed);
    let mut rng = seeded_stream(seed, 77);
    for &id in ParamId::ALL {
        let (r, c) = params.get(id).shape();
        *params.get_mut(id) = gaussian(&mut rng, r, c, 0.5);
    }
    let utt = Utterance {
        text: (0..SUITE_TEXT_LEN).map(|_| rng.random_range(0..SUITE_DIMS.text_vocab)).collect(),
        speech: (0..SUITE_SPEECH_LEN).map(|_| rng.random_range(0..SUITE_DIMS.speech_vocab)).collect(),
        label: rng.random_range(0..SUITE_DIMS.classes),
    };
    (params, utt)
}

/// Full objective gradient against FD in every fusion mode.
pub fn model_suite(seed: u64, instances: usize) -> Result<Vec<GradCheckReport>> {
    FusionMode::ALL
        .iter()
        .map(|&mode| {
            let name = format!("objective[{}]", mode.name());
            let cfg = FusionConfig {
                mode,
                ..FusionConfig::default()
            };
            let reports = (0..instances as u64)
                .map(|i| {
                    let (params, utt) = model_instance(seed.wrapping_mul(1000).wrapping_add(i));
                    grad_check(&name, &params.trainable_tensors(), FD_STEP, |g, v| {
                        let p = params.bind_with(g, v);
                        Ok(forward(g, &utt, &p, &cfg)?.total)
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GradCheckReport::merge(&name, &reports))
        })
        .collect()
}

/// Op reports followed by objective reports.
pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<GradCheckReport>> {
    let mut out = op_suite(cfg.seed, cfg.op_instances)?;
    out.extend(model_suite(cfg.seed, cfg.model_instances)?);
    Ok(out)
}

pub fn all_within(reports: &[GradCheckReport], tolerance: f64) -> bool {
    reports.iter().all(|r| r.max_relative_error <= tolerance)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes_with_enough_probes() {
        let reports = run_suite(&SuiteConfig::default()).unwrap();
        assert_eq!(reports.len(), OP_NAMES.len() + 4);
        for r in &reports {
            assert!(r.max_relative_error <= GRAD_TOLERANCE, "{r:?}");
            assert!(r.probe_count >= 100, "{r:?}");
        }
        assert!(all_within(&reports, GRAD_TOLERANCE));
    }

    #[test]
    fn model_instances_have_requested_shape() {
        let (params, utt) = model_instance(5);
        assert_eq!((utt.text.len(), utt.speech.len()), (3, 5));
        assert_eq!(params.dims, SUITE_DIMS);
    }
}
