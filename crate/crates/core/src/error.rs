use thiserror::Error;

use crate::gaussian::Label;
use crate::score::Beat;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("covariance matrix is singular or not positive definite")]
    SingularCovariance,
    #[error("improper potential: {0}")]
    ImproperPotential(&'static str),
    #[error("label {0:?} is not part of the potential domain")]
    UnknownLabel(Label),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("location {0} is not on the subdivision grid")]
    OffGrid(Beat),
    #[error("negative score interval {0}")]
    NegativeInterval(Beat),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no feasible extension at step {0}")]
    NoFeasibleExtension(usize),
    #[error("every assignment of the block starting at slice {0} has zero probability")]
    InfeasibleBlock(usize),
    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("degenerate sufficient statistics: {0}")]
    DegenerateStatistics(&'static str),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
