//! Error types for the engine.
//!
//! Each subsystem has its own enum; [`Error`] is the crate-level union used
//! at boundaries (CLI, service, ingest pipeline) where errors from several
//! subsystems meet.

use crate::node::NodeId;

/// A configuration field failed validation.
#[derive(Debug, Clone, thiserror::Error)]
#[error("invalid config: field `{field}`: {reason}")]
pub struct ConfigError {
    /// Name of the offending field.
    pub field: &'static str,
    /// Human-readable constraint that was violated.
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        Self {
            field,
            reason: reason.into(),
        }
    }
}

/// Errors raised by store operations (insert, lookup, dynamics, retrieval).
#[derive(Debug, Clone, thiserror::Error)]
pub enum StoreError {
    #[error("node {0} not found")]
    NotFound(NodeId),

    #[error("node {0} is not an episode (layer {layer} of {levels})", layer = .0.layer, levels = .1)]
    NotAnEpisode(NodeId, u8),

    #[error("vector dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("vector at level {level} is not unit-norm (|v| = {norm})")]
    NotUnitNorm { level: u8, norm: f64 },

    #[error("record supplies {got} levels but the store has {expected}")]
    LevelMismatch { expected: u8, got: u8 },

    #[error("cannot change hierarchy depth on a populated store")]
    DepthChangeOnPopulatedStore,

    #[error("episode text is empty")]
    EmptyEpisodeText,

    #[error("episode timestamp must be positive, got {0}")]
    NonPositiveTimestamp(i64),

    #[error("retention value out of bounds: {0}")]
    RetentionOutOfBounds(String),

    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Degenerate input to a similarity computation.
#[derive(Debug, Clone, thiserror::Error)]
pub enum SimilarityError {
    #[error("vectors have different dimensions: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("zero-norm vector has no direction")]
    ZeroNorm,
}

/// Errors from the embedding boundary.
#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("embedding request failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },

    #[error("embedding endpoint returned {got}-dim vectors, store expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("malformed embedding response: {0}")]
    MalformedResponse(String),

    #[error("embedding endpoint not configured: {0}")]
    NotConfigured(String),
}

/// Errors from extraction and corpus loading.
#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("extraction reply invalid after repair retry: {reason} (raw reply: {raw})")]
    Extraction { reason: String, raw: String },

    #[error(transparent)]
    Record(#[from] crate::ingest::RecordError),

    #[error("extraction request failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },

    #[error("extraction endpoint not configured: {0}")]
    NotConfigured(String),

    #[error("corpus parse error at line {line}, column {column}: {message}")]
    CorpusParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("corpus is invalid: {0}")]
    CorpusInvalid(String),

    #[error("failed to read corpus {path}: {source}")]
    CorpusIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Errors from snapshot persistence.
#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("snapshot i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("snapshot format version {found} is not supported (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("checksum mismatch in vector block for layer {layer}: manifest {expected:#010x}, file {actual:#010x}")]
    ChecksumMismatch {
        layer: u8,
        expected: u32,
        actual: u32,
    },

    #[error("vector block for layer {layer} is truncated: expected {expected} bytes, found {actual}")]
    Truncated {
        layer: u8,
        expected: u64,
        actual: u64,
    },

    #[error("snapshot manifest is invalid: {0}")]
    ManifestInvalid(String),

    #[error("refusing to save an inconsistent store: {0} integrity violations, first: {1}")]
    IntegrityFailed(usize, String),

    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Crate-level error union.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
}

impl From<crate::ingest::RecordError> for Error {
    fn from(e: crate::ingest::RecordError) -> Self {
        Error::Ingest(IngestError::Record(e))
    }
}

impl Error {
    /// True when the failure came from a remote endpoint rather than local
    /// data. Callers use this to distinguish transport failures (retryable,
    /// exit code 3 in the CLI) from data errors (exit code 2).
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            Error::Encoder(EncoderError::Transport { .. })
                | Error::Encoder(EncoderError::NotConfigured(_))
                | Error::Ingest(IngestError::Transport { .. })
                | Error::Ingest(IngestError::NotConfigured(_))
        )
    }
}
