use thiserror::Error;

/// Errors raised by chain construction, propagation and optimization.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("chain needs at least 2 spins, got {0}")]
    TooFewSpins(usize),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{name} coupling matrix is not symmetric at ({row}, {col})")]
    Asymmetric {
        name: &'static str,
        row: usize,
        col: usize,
    },
    #[error("{name} coupling matrix has nonzero self-coupling at site {site}")]
    SelfCoupling { name: &'static str, site: usize },
    #[error("couplings inconsistent with model {model}: {reason}")]
    ModelMismatch { model: String, reason: String },
    #[error("site index {site} out of range 1..={n}")]
    SiteOutOfRange { site: usize, n: usize },
    #[error("disorder strength must be nonnegative, got {0}")]
    NegativeEpsilon(f64),
    #[error("disorder requires a nearest-neighbour chain; found coupling between sites {m} and {n}")]
    NotNearestNeighbour { m: usize, n: usize },
    #[error("matrix is not Hermitian (max deviation {0:e})")]
    NotHermitian(f64),
    #[error("negative duration {value} at segment {index}")]
    NegativeDuration { index: usize, value: f64 },
    #[error("switching sequence must contain at least one segment")]
    EmptySequence,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("initial sequence infeasible: {0}")]
    Infeasible(String),
    #[error("chain file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
