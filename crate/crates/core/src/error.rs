use thiserror::Error;

use crate::kernel::SolverError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid demands: {0}")]
    InvalidDemands(String),
    #[error("invalid layer set: {0}")]
    InvalidLayers(String),
    #[error("invalid rates: {0}")]
    InvalidRates(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("decoding set for user {user} contains a layer the user cannot decode")]
    NotDecodable { user: usize },
    #[error("linear program failed: {0}")]
    Lp(String),
    #[error("subproblem solve failed at iteration {iteration}: {source}")]
    Subproblem {
        iteration: usize,
        #[source]
        source: SolverError,
    },
    #[error("all {restarts} restarts failed; last error: {last}")]
    AllRestartsFailed { restarts: usize, last: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
