//! Versioned checkpoint container.
//!
//! Layout: 8-byte magic, `u32` version, `u64` manifest length, the JSON
//! manifest, its SHA-256, then every array as raw little-endian `f64`.
//! The manifest lists each array's name, shape, byte offset and SHA-256.

use std::path::Path;

use lemer_core::eval::EvalResult;
use lemer_core::labelkit::LabelBank;
use lemer_core::model::{Dims, ModelParams, ParamId};
use lemer_core::trainer::{AdamState, TrainConfig, TrainLog, TrainState};
use lemer_core::Matrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{read_file, write_file, Error, Result};

pub const MAGIC: &[u8; 8] = b"LEMERCKP";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    /// Held-out metrics of the saved parameters, when available.
    pub metrics: Option<EvalResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArrayEntry {
    name: String,
    rows: usize,
    cols: usize,
    offset: usize,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    config: TrainConfig,
    dims: Dims,
    labels_trainable: bool,
    text_init: lemer_core::labelkit::TextLabelInit,
    speech_init: lemer_core::labelkit::SpeechLabelInit,
    epoch: usize,
    adam_step: u64,
    log: TrainLog,
    metrics: Option<EvalResult>,
    arrays: Vec<ArrayEntry>,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn named_arrays(state: &TrainState) -> Vec<(String, &Matrix)> {
    let p = &state.params;
    let mut out: Vec<(String, &Matrix)> = ParamId::ALL.iter().map(|&id| (format!("param/{}", id.name()), p.get(id))).collect();
    for (i, id) in p.trainable_ids().into_iter().enumerate() {
        out.push((format!("adam.first/{}", id.name()), &state.adam.first[i]));
        out.push((format!("adam.second/{}", id.name()), &state.adam.second[i]));
    }
    out
}

pub fn to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let state = &ckpt.state;
    let mut payload = Vec::new();
    let mut arrays = Vec::new();
    for (name, m) in named_arrays(state) {
        let start = payload.len();
        for x in m.as_slice() {
            payload.extend_from_slice(&x.to_le_bytes());
        }
        arrays.push(ArrayEntry {
            name,
            rows: m.rows(),
            cols: m.cols(),
            offset: start,
            sha256: digest(&payload[start..]),
        });
    }
    let labels = &state.params.labels;
    let manifest = Manifest {
        config: state.config.clone(),
        dims: state.params.dims,
        labels_trainable: labels.trainable,
        text_init: labels.text_init,
        speech_init: labels.speech_init,
        epoch: state.epoch,
        adam_step: state.adam.step,
        log: state.log.clone(),
        metrics: ckpt.metrics.clone(),
        arrays,
    };
    let json = serde_json::to_vec(&manifest)?;
    let mut out = Vec::with_capacity(52 + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&Sha256::digest(&json));
    out.extend_from_slice(&payload);
    Ok(out)
}

fn take<'a>(bytes: &'a [u8], at: &mut usize, n: usize, what: &str) -> Result<&'a [u8]> {
    let end = at.checked_add(n).filter(|&e| e <= bytes.len());
    match end {
        Some(end) => {
            let s = &bytes[*at..end];
            *at = end;
            Ok(s)
        }
        None => Err(Error::Integrity(format!("file truncated while reading {what}"))),
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let mut at = 0;
    if take(bytes, &mut at, 8, "magic")? != MAGIC {
        return Err(Error::Integrity("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(bytes, &mut at, 4, "version")?.try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let len = u64::from_le_bytes(take(bytes, &mut at, 8, "manifest length")?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::Integrity("manifest length overflows".into()))?;
    let json = take(bytes, &mut at, len, "manifest")?;
    let expected = take(bytes, &mut at, 32, "manifest checksum")?;
    if Sha256::digest(json).as_slice() != expected {
        return Err(Error::Integrity("manifest checksum mismatch".into()));
    }
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::Integrity(format!("unreadable manifest: {e}")))?;
    let payload = &bytes[at..];

    let mut arrays = std::collections::BTreeMap::new();
    let mut expected_end = 0;
    for entry in &manifest.arrays {
        let n = entry
            .rows
            .checked_mul(entry.cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Integrity(format!("array {} has an impossible shape", entry.name)))?;
        if entry.offset != expected_end {
            return Err(Error::Integrity(format!("array {} is not contiguous", entry.name)));
        }
        let mut cursor = entry.offset;
        let raw = take(payload, &mut cursor, n, &entry.name)?;
        expected_end = cursor;
        if digest(raw) != entry.sha256 {
            return Err(Error::Integrity(format!("checksum mismatch in array {}", entry.name)));
        }
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let m = Matrix::from_vec(entry.rows, entry.cols, data)?;
        arrays.insert(entry.name.as_str(), m);
    }
    if expected_end != payload.len() {
        return Err(Error::Integrity("trailing bytes after the last array".into()));
    }
    let mut get = |name: String| {
        arrays
            .remove(name.as_str())
            .ok_or_else(|| Error::Integrity(format!("missing array {name}")))
    };

    let mut params = ModelParams::init(manifest.dims, 0);
    for &id in ParamId::ALL {
        let m = get(format!("param/{}", id.name()))?;
        if m.shape() != params.get(id).shape() {
            return Err(Error::Integrity(format!("array param/{} has the wrong shape", id.name())));
        }
        *params.get_mut(id) = m;
    }
    params.labels = LabelBank {
        trainable: manifest.labels_trainable,
        text_init: manifest.text_init,
        speech_init: manifest.speech_init,
        ..params.labels
    };
    let mut first = Vec::new();
    let mut second = Vec::new();
    for id in params.trainable_ids() {
        first.push(get(format!("adam.first/{}", id.name()))?);
        second.push(get(format!("adam.second/{}", id.name()))?);
    }
    Ok(Checkpoint {
        state: TrainState {
            config: manifest.config,
            params,
            adam: AdamState {
                first,
                second,
                step: manifest.adam_step,
            },
            epoch: manifest.epoch,
            log: manifest.log,
        },
        metrics: manifest.metrics,
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    write_file(path, to_bytes(ckpt)?)
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_bytes(&read_file(path)?)
}
