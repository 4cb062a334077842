use thiserror::Error;

use crate::model::Condition;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("sensor `{sensor}` has {samples} sample(s) for {condition}; at least 2 are needed")]
    InsufficientData {
        sensor: String,
        condition: Condition,
        samples: usize,
    },
    #[error("invalid sensor model `{sensor}`: {reason}")]
    InvalidModel { sensor: String, reason: String },
    #[error("invalid vote policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid trace: {0}")]
    InvalidTrace(String),
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("no simulation results to export")]
    EmptyResults,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
