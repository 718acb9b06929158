use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{op}: dimension mismatch, left is {left:?}, right is {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("matrix data has length {len}, expected {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("empty matrix")]
    Empty,

    #[error("svd did not converge after {iterations} sweeps")]
    SvdNoConvergence { iterations: usize },

    #[error("rank {rank} out of range for a {rows}x{cols} weight")]
    RankOutOfRange { rank: usize, rows: usize, cols: usize },

    #[error("gradient has numerical rank {found}, at least {required} is needed")]
    RankDeficient { required: usize, found: usize },

    #[error("adapter gradients vanish simultaneously")]
    ZeroGradients,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
