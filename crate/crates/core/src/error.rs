use std::path::PathBuf;

use chrono::NaiveDate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schedule error: {0}")]
    Schedule(String),

    #[error("unsupported stride {0} (expected 2, 3 or 5)")]
    UnsupportedStride(u32),

    #[error("{what} index {index} out of range (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("empty sequence")]
    EmptySequence,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("sharding not applicable: {0}")]
    ShardingUnnecessary(String),

    #[error("shard for day {day} failed: {source}")]
    Shard {
        day: NaiveDate,
        #[source]
        source: Box<Error>,
    },

    #[error("input too large for the reference oracle: {0}")]
    OracleTooLarge(String),

    #[error("missing chunk file {path}")]
    MissingChunk { path: String },

    #[error("corrupt chunk {path}: level {level}, slots {start}..{end}: {detail}")]
    CorruptChunk {
        path: String,
        level: usize,
        start: usize,
        end: usize,
        detail: String,
    },

    #[error("checksum mismatch for {what}: manifest {expected}, computed {actual}")]
    Checksum {
        what: String,
        expected: String,
        actual: String,
    },

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("ingest error: {0}")]
    Ingest(String),

    #[error("encoder failed ({command}): {detail}")]
    Encoder { command: String, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used by the CLI for machine-parsable errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Schedule(_) => "schedule",
            Error::UnsupportedStride(_) => "stride",
            Error::OutOfRange { .. } => "range",
            Error::EmptySequence => "empty",
            Error::ShapeMismatch { .. } => "shape",
            Error::InvalidArgument(_) => "argument",
            Error::GridMismatch(_) => "grid",
            Error::ShardingUnnecessary(_) => "sharding",
            Error::Shard { .. } => "shard",
            Error::OracleTooLarge(_) => "oracle",
            Error::MissingChunk { .. } => "missing-chunk",
            Error::CorruptChunk { .. } => "corrupt-chunk",
            Error::Checksum { .. } => "checksum",
            Error::Manifest(_) => "manifest",
            Error::Ingest(_) => "ingest",
            Error::Encoder { .. } => "encoder",
            Error::Io { .. } => "io",
            Error::Image(_) => "image",
            Error::Json(_) => "json",
        }
    }
}
