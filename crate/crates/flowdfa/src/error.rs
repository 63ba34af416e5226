//! Crate-wide error type.

use std::path::PathBuf;

/// Errors produced by any stage of the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("{rejected} of {total} rows rejected (> {limit:.2}% limit); first: {first}")]
    TooManyRejects {
        rejected: usize,
        total: usize,
        limit: f64,
        first: String,
    },

    #[error("dataset is empty after validation")]
    EmptyDataset,

    #[error("train partition contains {0} malicious flows; training data must be benign")]
    MaliciousInTraining(usize),

    #[error("empty {0} partition after split")]
    EmptyPartition(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("encoder not fitted for scheme {0}")]
    NotFitted(&'static str),

    #[error("contextual encoder was fitted with sorting level {fitted}, traces use {requested}")]
    SortingLevelMismatch { fitted: String, requested: String },

    #[error("no group produced a trace (window {window}); group lengths: {report}")]
    NoTraces { window: usize, report: String },

    #[error("malformed trace file at line {line}: {reason}")]
    TraceFormat { line: usize, reason: String },

    #[error("training traces must be benign; trace {0} is labeled malicious")]
    MaliciousTrace(usize),

    #[error("model probabilities not estimated; call estimate_probs first")]
    NotEstimated,

    #[error("state {0} does not exist")]
    NoSuchState(u32),

    #[error("cannot merge: state {blue} reaches state {red}; fold would loop")]
    MergeCycle { red: u32, blue: u32 },

    #[error("fingerprint mismatch: artifact {artifact} was produced under {found}, current config is {expected}")]
    FingerprintMismatch {
        artifact: String,
        found: String,
        expected: String,
    },

    #[error("malformed {kind} file: {reason}")]
    ArtifactFormat { kind: &'static str, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tag an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 for data problems, 3 for
    /// fingerprint mismatches, 1 for configuration/usage errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::FingerprintMismatch { .. } => 3,
            Error::Config(_) | Error::InvalidParameter(_) => 1,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
