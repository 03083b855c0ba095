use alloc::string::String;

use crate::tensor::Shape;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {left} and {right}")]
    ShapeMismatch {
        op: &'static str,
        left: Shape,
        right: Shape,
    },
    #[error("{op}: expected rank {expected}, found shape {found}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        found: Shape,
    },
    #[error("invalid shape: {0}")]
    InvalidShape(&'static str),
    #[error("embedding dimension {dim} ({block}) is not divisible by head count {heads}")]
    HeadDivisibility {
        block: &'static str,
        dim: usize,
        heads: usize,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("variable does not belong to this tape")]
    ForeignVar,
    #[error("backward requires a single-element output, found shape {0}")]
    NotScalar(Shape),
    #[error("empty batch")]
    EmptyBatch,
    #[error("label count {labels} does not match batch size {batch}")]
    LabelCount { labels: usize, batch: usize },
    #[error("input {found} does not match model input {expected}")]
    InputMismatch { expected: Shape, found: Shape },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("missing parameter tensor `{0}`")]
    MissingTensor(String),
    #[error("unexpected parameter tensor `{0}`")]
    UnexpectedTensor(String),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("no samples")]
    Empty,
}
