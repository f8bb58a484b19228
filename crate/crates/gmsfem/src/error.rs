//! Error type shared by the library and the CLI.

use std::fmt;
use std::io;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug)]
pub enum Error {
    /// Bad configuration key, value, or combination.
    Config(String),
    /// Underlying file I/O failure.
    Io(io::Error),
    /// Malformed coefficient/solution field file.
    FieldFormat(String),
    /// Invalid argument to a library operation (not tied to a config file).
    InvalidArgument(String),
    /// A linear solve missed its residual target or hit a non-SPD matrix.
    Solver { what: String, residual: f64 },
    /// Dense factorization or eigensolve failure.
    Eigen(String),
    /// Global coarse matrix is singular: the basis is rank deficient.
    SingularCoarse,
    /// Projected enrichment residuals have rank below the requested mode
    /// count; the local space cannot grow further from random draws.
    EnrichmentSaturated {
        node: usize,
        rank: usize,
        wanted: usize,
    },
    /// An adaptive indicator needs the first excluded eigenvalue, but the
    /// reduction kept every snapshot mode.
    MissingExcludedEigenvalue { node: usize },
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems,
    /// 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Io(_) | Error::FieldFormat(_) | Error::InvalidArgument(_) => {
                2
            }
            _ => 3,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::FieldFormat(msg) => write!(f, "field file error: {msg}"),
            Error::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            Error::Solver { what, residual } => {
                write!(
                    f,
                    "solver failure in {what}: relative residual {residual:.3e}"
                )
            }
            Error::Eigen(msg) => write!(f, "eigensolver failure: {msg}"),
            Error::SingularCoarse => write!(f, "coarse matrix is singular (rank-deficient basis)"),
            Error::EnrichmentSaturated { node, rank, wanted } => write!(
                f,
                "enrichment saturated at node {node}: residual rank {rank} < {wanted}"
            ),
            Error::MissingExcludedEigenvalue { node } => write!(
                f,
                "node {node} kept all snapshot modes; no excluded eigenvalue for the indicator"
            ),
        }
    }
}

impl std::error::Error for Error {}

impl From<io::Error> for Error {
    fn from(e: io::Error) -> Self {
        Error::Io(e)
    }
}
