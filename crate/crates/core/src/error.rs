use std::path::PathBuf;

use crate::volume::Modality;

/// Errors produced across the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid label {value} at voxel ({}, {}, {})", .position.0, .position.1, .position.2)]
    InvalidLabel {
        value: i64,
        position: (usize, usize, usize),
    },
    #[error("invalid class index {value} at flat offset {offset}")]
    InvalidIndex { value: u8, offset: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimMismatch {
        expected: (usize, usize, usize),
        found: (usize, usize, usize),
    },
    #[error("missing modality {0}")]
    MissingModality(Modality),
    #[error("corrupt header in {path}: {reason}")]
    CorruptHeader { path: PathBuf, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("phantom spec error: {0}")]
    Spec(String),
    #[error("volume has no nonzero voxels")]
    EmptyBrain,
    #[error("degenerate intensity: nonzero-voxel std {0} below threshold")]
    DegenerateIntensity(f64),
    #[error("case {0} carries no label volume")]
    MissingLabels(String),
    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("network config error: {0}")]
    Config(String),
    #[error("class index {index} out of range for {classes} classes")]
    IndexOutOfRange { index: u8, classes: usize },
    #[error("loss became non-finite at epoch {epoch}, step {step}: {value}")]
    NonFiniteLoss { epoch: usize, step: usize, value: f64 },
    #[error("view mismatch: {0}")]
    ViewMismatch(String),
    #[error("empty cohort")]
    EmptyCohort,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("serialization error: {0}")]
    Serde(String),
    #[error("output {0} already exists (use --force to overwrite)")]
    OutputExists(PathBuf),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidLabel { .. } => "InvalidLabel",
            Error::InvalidIndex { .. } => "InvalidIndex",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::DimMismatch { .. } => "DimMismatch",
            Error::MissingModality(_) => "MissingModality",
            Error::CorruptHeader { .. } => "CorruptHeader",
            Error::Io { .. } => "IoError",
            Error::Spec(_) => "SpecError",
            Error::EmptyBrain => "EmptyBrain",
            Error::DegenerateIntensity(_) => "DegenerateIntensity",
            Error::MissingLabels(_) => "MissingLabels",
            Error::TooFewSamples { .. } => "TooFewSamples",
            Error::Config(_) => "ConfigError",
            Error::IndexOutOfRange { .. } => "IndexOutOfRange",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::ViewMismatch(_) => "ViewMismatch",
            Error::EmptyCohort => "EmptyCohort",
            Error::Checkpoint(_) => "CheckpointError",
            Error::Serde(_) => "SerdeError",
            Error::OutputExists(_) => "OutputExists",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
