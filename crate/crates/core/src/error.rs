use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("row {row} has near-zero norm ({norm:e})")]
    ZeroRow { row: usize, norm: f64 },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("row {row} is not unit norm (norm {norm})")]
    NotUnitNorm { row: usize, norm: f64 },

    #[error("correlation entry ({row}, {col}) = {value} is outside [0, 1]")]
    OutOfRange { row: usize, col: usize, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("temperature must be positive, got {0}")]
    NonPositiveTau(f64),

    #[error("prior temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("batch carries no positive sets")]
    MissingPositiveSets,

    #[error("no (anchor, positive, negative) triple exists in this batch")]
    EmptyTripleSet,

    #[error("query has no relevant item")]
    NoRelevant,

    #[error("gain at position {index} is negative ({value})")]
    NegativeGain { index: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scene-negative pairing: {0}")]
    InvalidPairing(String),

    #[error("training diverged at epoch {epoch} (loss {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("{path}: line {line}: missing key `{key}`")]
    MissingKey {
        path: PathBuf,
        line: usize,
        key: &'static str,
    },

    #[error("{path}: line {line}: bad type for `{key}`: {detail}")]
    BadType {
        path: PathBuf,
        line: usize,
        key: String,
        detail: String,
    },

    #[error("{path}: line {line}: t_start must be below t_end")]
    BadSpan { path: PathBuf, line: usize },

    #[error("{path}: bad magic, expected \"MIRK\"")]
    BadMagic { path: PathBuf },

    #[error("{path}: truncated, expected {expected} bytes, found {actual}")]
    TruncatedFile {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: unsupported format version {version}")]
    VersionUnsupported { path: PathBuf, version: u32 },

    #[error("{path}: line {line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for failures of the numerical kind (divergence, NaN/Inf), as
    /// opposed to malformed inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::NonFinite { .. })
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
