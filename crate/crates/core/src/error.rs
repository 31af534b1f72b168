use std::path::PathBuf;

use crate::graph::OperatorId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid search space: {0}")]
    InvalidSpace(String),

    #[error("invalid child model: {0}")]
    InvalidChild(String),

    #[error("no valid child found after {attempts} sampling attempts")]
    SamplingExhausted { attempts: usize },

    #[error("operator {0} is not live in this space")]
    UnknownOperator(OperatorId),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite activations or weights in {0}")]
    NumericalOverflow(String),

    #[error("weight vector is empty")]
    EmptyVector,

    #[error("weight vector has zero norm")]
    ZeroNormVector,

    #[error("{paths} root-to-leaf paths exceed the cap of {cap}; use block-wise construction")]
    PathExplosion { paths: u128, cap: usize },

    #[error("space defines no blocks")]
    MissingBlocks,

    #[error("every live operator is the sole survivor of its edge")]
    NoRemovableOperator,

    #[error("space has {children} children, above the cap of {cap}")]
    CapExceeded { children: u128, cap: usize },

    #[error("no benchmark table at {0}; run the bench command first")]
    MissingBenchmark(PathBuf),

    #[error("subspace contains no benchmarked child")]
    EmptySubspace,

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("ranking needs at least two items")]
    TooShort,

    #[error("rankings contain tied values")]
    TiedRanks,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("space hash mismatch: file was built for {expected}, got {actual}")]
    SpaceMismatch { expected: String, actual: String },

    #[error("unsupported schema {found:?}, expected {expected:?}")]
    Schema { expected: String, found: String },

    #[error("malformed file {path}: {reason}")]
    Malformed { path: PathBuf, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

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
}
