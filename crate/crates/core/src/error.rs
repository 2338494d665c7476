use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Error)]
pub enum PbnError {
    #[error("node index {node} out of range for a {n_nodes}-node network")]
    NodeOutOfRange { node: usize, n_nodes: usize },

    #[error("state has {got} bits, network has {expected} nodes")]
    WidthMismatch { expected: usize, got: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid model: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    InvalidModel(Vec<Violation>),

    #[error("state space too large ({n_nodes} nodes, cap {cap}); use Monte-Carlo SSD")]
    StateSpaceTooLarge { n_nodes: usize, cap: usize },

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
