use thiserror::Error;

use crate::dual::HistoryEntry;

#[derive(Debug, Error)]
pub enum Error {
    #[error("value {value} outside domain {domain}")]
    Domain { value: f64, domain: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("invalid landscape: {0}")]
    Landscape(String),

    #[error("solver failure at iteration {iteration}: {message}")]
    Solver {
        iteration: usize,
        message: String,
        history: Vec<HistoryEntry>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn domain(value: f64, domain: impl Into<String>) -> Self {
        Error::Domain {
            value,
            domain: domain.into(),
        }
    }
}
