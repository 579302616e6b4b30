use thiserror::Error;

/// Errors produced by the model, simulator, chain solver and optimizer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },

    #[error("device with {energy} energy units cannot pay a transmission costing {tx_cost}")]
    InsufficientEnergy { energy: u32, tx_cost: u32 },

    #[error("transition matrix is not stochastic: {0}")]
    NotStochastic(String),

    #[error("chain has {} recurrent classes: {classes:?}", classes.len())]
    Reducible { classes: Vec<Vec<usize>> },

    #[error("solver did not converge after {iterations} iterations (last residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("parameter grid has no valid points: {0}")]
    EmptyGrid(String),
}

impl Error {
    pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParam {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
