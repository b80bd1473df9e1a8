use thiserror::Error;

use crate::expr::ParseError;
use crate::matrix_game::MatrixGameError;

/// Broad classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Model,
    Solver,
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Usage(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("game model: {0}")]
    Model(String),

    #[error("dynamics returned a non-finite value at t={t}, x={x:?}, u={u:?}, v={v:?}")]
    NonFiniteDynamics {
        t: f64,
        x: Vec<f64>,
        u: Vec<f64>,
        v: Vec<f64>,
    },

    #[error("terminal payoff is non-finite at x={x:?}")]
    NonFiniteTerminal { x: Vec<f64> },

    #[error(transparent)]
    MatrixGame(#[from] MatrixGameError),

    #[error("matrix game failed at node {node:?} (time {time}): {source}")]
    NodeSolve {
        time: f64,
        node: Vec<f64>,
        #[source]
        source: MatrixGameError,
    },

    #[error("non-finite value at node {node:?} (time {time})")]
    NonFiniteValue { time: f64, node: Vec<f64> },

    #[error("pde solver produced a non-finite value at step {step}")]
    PdeBlowUp { step: usize },

    #[error("player {player} block {interval} read opponent block {index} (delay violated)")]
    DelayViolation {
        player: u8,
        interval: usize,
        index: usize,
    },

    #[error("sample {sample}: {source}")]
    Sample {
        sample: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Usage(_) | Error::Parse(_) => ErrorKind::Usage,
            Error::Model(_) | Error::NonFiniteDynamics { .. } | Error::NonFiniteTerminal { .. } => {
                ErrorKind::Model
            }
            Error::MatrixGame(_)
            | Error::NodeSolve { .. }
            | Error::NonFiniteValue { .. }
            | Error::PdeBlowUp { .. } => ErrorKind::Solver,
            Error::DelayViolation { .. } | Error::Internal(_) => ErrorKind::Internal,
            Error::Sample { source, .. } => source.kind(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
