use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("degenerate row {row} in {op}: L2 norm below 1e-12")]
    DegenerateRow { op: &'static str, row: usize },
    #[error("index {index} out of range 0..{bound} in {what}")]
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{0}")]
    Contract(String),
    #[error("invalid corpus spec: {0}")]
    Spec(String),
    #[error("stratification failed: class {class} has {count} utterance(s), need at least 2")]
    Stratification { class: usize, count: usize },
    #[error("label extraction failed: class {class} has no symbols")]
    Extraction { class: usize },
    #[error("label build failed: {0}")]
    Build(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}, batch {batch}: non-finite loss")]
    Divergence { epoch: usize, batch: usize },
    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
