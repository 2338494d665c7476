//! Feed-forward Q-function approximator: rectifier MLP, Huber loss, Adam.

mod adam;
mod checkpoint;
mod mlp;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{Dense, ForwardCache, MlpParams, MlpSpec};

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("diverged: non-finite gradient")]
    Diverged,

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Huber loss of the error `pred - target` and its derivative in `pred`.
///
/// Quadratic for `|e| <= delta`, linear beyond; the derivative is clipped
/// to `[-delta, delta]`.
pub fn huber_loss(pred: f64, target: f64, delta: f64) -> (f64, f64) {
    let e = pred - target;
    if e.abs() <= delta {
        (0.5 * e * e, e)
    } else {
        (delta * (e.abs() - 0.5 * delta), delta * e.signum())
    }
}

/// Deep copy used for the periodically synchronized target network.
pub fn copy_params(src: &MlpParams) -> MlpParams {
    src.clone()
}
