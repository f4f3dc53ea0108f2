use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("cell index {index} out of range for map with {n} cells")]
    CellOutOfRange { index: usize, n: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("observation has zero probability under the attacker's mechanism model")]
    InconsistentObservation,

    #[error("domain too large for exact enumeration: {0}")]
    DomainTooLarge(String),

    #[error("target QoS loss {target} is not bracketed: q({lo}) = {q_lo}, q({hi}) = {q_hi}")]
    NoBracket {
        target: f64,
        lo: f64,
        hi: f64,
        q_lo: f64,
        q_hi: f64,
    },

    #[error("q(epsilon) is not monotone over the bracket; crossings near epsilon = {crossings:?}")]
    NonMonotoneBracket { crossings: Vec<f64> },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
