use std::io;

use thiserror::Error;

/// Errors produced by the repair engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("link {0} has no known weight")]
    UnknownWeight(String),
    #[error("link {0} has weight 0, which the ECMP evaluator does not accept")]
    ZeroWeight(String),
    #[error("path {0} is not a simple path of the instance")]
    InvalidPath(String),
    #[error("node {from} cannot reach {to}")]
    Unreachable { from: String, to: String },
    #[error("mandated preferences are infeasible; conflicting constraints: {}", conflict.join("; "))]
    Infeasible { conflict: Vec<String> },
    #[error("the path digraph contains a cycle")]
    Cyclic,
    #[error("start weights violate the mandated preferences")]
    InfeasibleStart,
    #[error("no feasible start was supplied")]
    NoFeasibleStart,
    #[error("search budget exhausted: {0}")]
    Budget(String),
    #[error("LP solver failure: {0}")]
    Lp(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
