use std::io;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected rank {expected}, got {got}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),
    #[error("rows have differing lengths")]
    RaggedRows,
    #[error("index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("slice {start}..{end} out of range for extent {extent}")]
    SliceRange {
        start: usize,
        end: usize,
        extent: usize,
    },
    #[error("{op}: value {value} outside the domain")]
    Domain { op: &'static str, value: f64 },
    #[error("{0}: no inputs")]
    EmptyInputs(&'static str),
    #[error("{op}: expected {expected} inputs, got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("tape has already been consumed by backward")]
    TapeConsumed,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("joint angle {index} = {value} outside limits [{min}, {max}]")]
    AngleOutOfLimits {
        index: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("joint {joint} has non-positive depth {depth}")]
    NonPositiveDepth { joint: usize, depth: f64 },
    #[error("degenerate pose: reference bone has zero length")]
    DegeneratePose,
    #[error("handedness flag required by modality {0} but not supplied")]
    MissingHandedness(String),
    #[error("non-finite loss in pair {pair} at epoch {epoch}")]
    NonFiniteLoss { pair: String, epoch: usize },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
