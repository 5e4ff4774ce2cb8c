//! Plain-text corpus format.
//!
//! ```text
//! lemer-corpus v1
//! spec {"classes":4,...}
//! planted text 0 3 17 42
//! planted speech 0 5 6 900
//! utt 2 | 4 5 6 | 100 101 102
//! ```
//!
//! One `planted` line per modality and class, in class order, then one `utt`
//! line per utterance: label, text tokens, speech codes. Blank lines and lines
//! starting with `#` are ignored.

use std::fmt::Write as _;
use std::path::Path;

use lemer_core::corpus::{Corpus, CorpusSpec, Modality, PlantedMap, Utterance};

use crate::error::{read_file, write_file, Error, Result};

pub const HEADER: &str = "lemer-corpus v1";

fn join(ids: &[usize]) -> String {
    let mut s = String::new();
    for (i, id) in ids.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{id}").expect("write to string");
    }
    s
}

pub fn to_string(corpus: &Corpus) -> Result<String> {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    writeln!(out, "spec {}", serde_json::to_string(&corpus.spec)?).expect("write to string");
    for (name, sets) in [("text", &corpus.planted.text), ("speech", &corpus.planted.speech)] {
        for (class, ids) in sets.iter().enumerate() {
            writeln!(out, "planted {name} {class} {}", join(ids)).expect("write to string");
        }
    }
    for u in &corpus.utterances {
        writeln!(out, "utt {} | {} | {}", u.label, join(&u.text), join(&u.speech)).expect("write to string");
    }
    Ok(out)
}

pub fn save(path: &Path, corpus: &Corpus) -> Result<()> {
    write_file(path, to_string(corpus)?)
}

pub fn load(path: &Path) -> Result<Corpus> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "file is not UTF-8".into(),
    })?;
    parse(&text, path)
}

fn ids(field: &str) -> std::result::Result<Vec<usize>, String> {
    field
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| format!("`{t}` is not a symbol id")))
        .collect()
}

/// `origin` only labels error messages.
pub fn parse(text: &str, origin: &Path) -> Result<Corpus> {
    let fail = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    match lines.next() {
        Some((_, HEADER)) => {}
        Some((n, other)) => return Err(fail(n, format!("expected `{HEADER}`, found `{other}`"))),
        None => return Err(fail(0, "empty corpus file".into())),
    }
    let spec: CorpusSpec = match lines.next() {
        Some((n, l)) => {
            let json = l.strip_prefix("spec ").ok_or_else(|| fail(n, "expected a `spec` line".into()))?;
            serde_json::from_str(json).map_err(|e| fail(n, format!("bad spec: {e}")))?
        }
        None => return Err(fail(0, "missing spec line".into())),
    };

    let mut planted = PlantedMap {
        text: vec![Vec::new(); spec.classes],
        speech: vec![Vec::new(); spec.classes],
    };
    let mut seen = [vec![false; spec.classes], vec![false; spec.classes]];
    let mut utterances = Vec::new();
    for (n, l) in lines {
        let (kind, rest) = l.split_once(' ').unwrap_or((l, ""));
        match kind {
            "planted" => {
                let mut parts = rest.splitn(3, ' ');
                let modality = match parts.next() {
                    Some("text") => Modality::Text,
                    Some("speech") => Modality::Speech,
                    other => return Err(fail(n, format!("unknown modality {other:?}"))),
                };
                let class: usize = parts
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| fail(n, "missing class id".into()))?;
                if class >= spec.classes {
                    return Err(fail(n, format!("class {class} out of range")));
                }
                let m = modality as usize;
                if seen[m][class] {
                    return Err(fail(n, format!("duplicate planted line for class {class}")));
                }
                seen[m][class] = true;
                let set = ids(parts.next().unwrap_or("")).map_err(|e| fail(n, e))?;
                match modality {
                    Modality::Text => planted.text[class] = set,
                    Modality::Speech => planted.speech[class] = set,
                }
            }
            "utt" => {
                let fields: Vec<&str> = rest.split('|').collect();
                if fields.len() != 3 {
                    return Err(fail(n, "expected `utt <label> | <text> | <speech>`".into()));
                }
                let label: usize = fields[0]
                    .trim()
                    .parse()
                    .map_err(|_| fail(n, format!("bad label `{}`", fields[0].trim())))?;
                utterances.push(Utterance {
                    label,
                    text: ids(fields[1]).map_err(|e| fail(n, e))?,
                    speech: ids(fields[2]).map_err(|e| fail(n, e))?,
                });
            }
            other => return Err(fail(n, format!("unknown record `{other}`"))),
        }
    }
    let corpus = Corpus {
        spec,
        utterances,
        planted,
    };
    corpus.validate().map_err(|e| fail(0, e.to_string()))?;
    Ok(corpus)
}
