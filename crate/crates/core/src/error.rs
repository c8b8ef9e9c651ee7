use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: invalid axis {axis} for shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("attention row {row} is fully masked")]
    DegenerateAttention { row: usize },

    #[error("class index {target} out of range for {classes} classes")]
    TargetOutOfRange { target: usize, classes: usize },

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("parameter `{name}`: expected shape {expected:?}, found {found:?}")]
    ParameterShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("invalid scene spec: {0}")]
    InvalidSceneSpec(String),

    #[error("could not generate a valid scene after {0} attempts")]
    UnsatisfiableScene(usize),

    #[error("target category {0} is not present in the scene")]
    TargetAbsent(usize),

    #[error("target category {0} is unreachable from this pose")]
    Unreachable(usize),

    #[error("step called on a finished episode")]
    EpisodeFinished,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("checkpoint config hash {found:016x} does not match run config hash {expected:016x}")]
    ConfigHash { expected: u64, found: u64 },

    #[error("dataset {path}: {message}")]
    Dataset { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
