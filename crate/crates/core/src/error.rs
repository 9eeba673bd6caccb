//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("mask incompatible with network: {0}")]
    MaskShape(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("grouping mismatch: {0}")]
    GroupingMismatch(String),

    #[error("degenerate grouping: {0}")]
    DegenerateGrouping(String),

    #[error("degenerate normalization bounds: {0}")]
    DegenerateBounds(String),

    #[error("selection needs at least {need} members, got {have}")]
    UndersizedUnion { need: usize, have: usize },

    #[error("parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },

    #[error("unknown label {label} in task split")]
    UnknownLabel { label: usize },

    #[error("invalid config at `{field}`: {msg}")]
    Validation { field: String, msg: String },

    #[error("missing run artifacts: {0}")]
    MissingArtifacts(String),

    #[error("run directory is locked by another process: {0}")]
    Locked(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-parsable tag, printed by the CLI on failure.
    pub fn tag(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::MaskShape(_) => "mask-shape",
            Error::EmptyBatch => "empty-batch",
            Error::Divergence(_) => "divergence",
            Error::Numeric(_) => "numeric",
            Error::GroupingMismatch(_) => "grouping-mismatch",
            Error::DegenerateGrouping(_) => "degenerate-grouping",
            Error::DegenerateBounds(_) => "degenerate-bounds",
            Error::UndersizedUnion { .. } => "undersized-union",
            Error::Parse { .. } => "parse",
            Error::UnknownLabel { .. } => "unknown-label",
            Error::Validation { .. } => "config-validation",
            Error::MissingArtifacts(_) => "missing-artifacts",
            Error::Locked(_) => "run-dir-locked",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
        }
    }

    pub(crate) fn validation(field: &str, msg: impl Into<String>) -> Error {
        Error::Validation {
            field: field.to_string(),
            msg: msg.into(),
        }
    }
}
