use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::mdp::State;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error(
        "state space of {max_age} x {query_period} x {buckets} states does not fit the index range"
    )]
    StateSpaceTooLarge {
        max_age: usize,
        query_period: usize,
        buckets: usize,
    },

    #[error("action Transmit is infeasible in state {0:?} (empty bucket)")]
    InfeasibleAction(State),

    #[error("invalid solver configuration: {0}")]
    InvalidSolverConfig(String),

    #[error("policy evaluation did not converge after {sweeps} sweeps (residual {residual:e})")]
    EvaluationDiverged { sweeps: usize, residual: f64 },

    #[error("policy iteration did not converge in {rounds} rounds ({changed} states still changing, last residual {residual:e})")]
    PolicyIterationExhausted {
        rounds: usize,
        changed: usize,
        residual: f64,
    },

    #[error("value iteration did not converge after {sweeps} sweeps (residual {residual:e})")]
    ValueIterationExhausted { sweeps: usize, residual: f64 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid simulation configuration: {0}")]
    InvalidSimConfig(String),

    #[error("no query slots in the measured window")]
    NoQuerySlots,

    #[error("no records in the measured window")]
    NoRecords,

    #[error("record at t={t} is out of range: {reason}")]
    InvalidRecord { t: u64, reason: String },

    #[error("cannot merge an empty list of reports")]
    EmptyMerge,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("grid point {point}: {source}")]
    AtGridPoint {
        point: String,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Coarse classification used by the command-line driver to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Solver,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::EvaluationDiverged { .. }
            | Error::PolicyIterationExhausted { .. }
            | Error::ValueIterationExhausted { .. } => ErrorKind::Solver,
            Error::Io { .. } => ErrorKind::Io,
            Error::AtGridPoint { source, .. } => source.kind(),
            _ => ErrorKind::Config,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
