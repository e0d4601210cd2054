//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{0}")]
    Config(String),

    #[error("dataset {path}: duplicate sample id {id:?} (line {line})")]
    DuplicateSampleId {
        path: String,
        id: String,
        line: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("ground truth {value:?} is not numeric; use literal_contains mode")]
    NonNumericGroundTruth { value: String },

    #[error("train_fraction must lie in (0,1), got {0}")]
    BadTrainFraction(f64),

    #[error("instruction must be non-empty")]
    EmptyInstruction,

    #[error("token id {id} out of range (vocab size {vocab_size})")]
    TokenOutOfRange { id: u32, vocab_size: u32 },

    #[error("character {ch:?} outside backend alphabet")]
    CharOutsideAlphabet { ch: char },

    #[error("layer {layer} out of range [0, {max}]")]
    LayerOutOfRange { layer: usize, max: usize },

    #[error("position {position} out of range (sequence length {len})")]
    PositionOutOfRange { position: usize, len: usize },

    #[error("vector length {got} does not match hidden dim {expected}")]
    DimMismatch { got: usize, expected: usize },

    #[error("mixed {what} in activation records: {a:?} vs {b:?}")]
    MixedRecords {
        what: &'static str,
        a: String,
        b: String,
    },

    #[error("duplicate record for sample {0:?}")]
    DuplicateRecord(String),

    #[error("layer mismatch: expected {expected}, got {got}")]
    LayerMismatch { expected: usize, got: usize },

    #[error("unequal per-instruction sample counts: {a} vs {b}")]
    UnequalSampleCounts { a: usize, b: usize },

    #[error("duplicate instruction {0:?} in mean list")]
    DuplicateInstruction(String),

    #[error("cosine similarity undefined for zero-norm input")]
    ZeroNorm,

    #[error("length mismatch: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },

    #[error("store format_version {found} unsupported (this build reads version {supported})")]
    VersionMismatch { found: i64, supported: i64 },

    #[error("store contains mixed hidden dims ({a} vs {b}); refusing to save")]
    MixedHiddenDim { a: usize, b: usize },

    #[error("store contains a duplicate entry for {0}")]
    DuplicateStoreKey(String),

    #[error("malformed store file {path}: {detail}")]
    MalformedStore { path: String, detail: String },

    #[error("candidate pool is empty after filtering")]
    EmptyPool,

    #[error("no steering vector for pair {source_label}->{target_label} at layer {layer}")]
    MissingVector {
        source_label: String,
        target_label: String,
        layer: usize,
    },

    #[error("external backend {model_id:?} is not bundled; implement the Backend trait and drive the library API directly")]
    ExternalBackendUnavailable { model_id: String },

    #[error("self-check failed: {0}")]
    SelfCheck(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the CLI: 2 for configuration/usage problems,
    /// 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io { .. } | Error::BadTrainFraction(_) => 2,
            _ => 1,
        }
    }
}
