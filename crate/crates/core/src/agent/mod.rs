//! Double DQN with proportional prioritized replay.

mod config;
mod replay;
mod train;

use rand::Rng;
use thiserror::Error;

use crate::analysis::Controller;
use crate::env::{ControlTask, EnvError};
use crate::neural::{MlpParams, NeuralError};
use crate::state::NetworkState;

pub use config::{preset, Schedule, TargetUpdate, TrainConfig, UpdateUnit, PRESET_NAMES};
pub use replay::{Experience, ReplayBuffer, ReplayError, SampledBatch};
pub use train::{train, train_with_observer, write_metrics_csv, EpochMetrics, TrainArtifacts};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("training diverged at gradient step {step}: non-finite loss")]
    Diverged { step: u64, checkpoint: Box<MlpParams> },

    #[error(transparent)]
    Replay(#[from] ReplayError),

    #[error(transparent)]
    Neural(#[from] NeuralError),

    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn encode(state: &NetworkState) -> Vec<f64> {
    let mut x = vec![0.0; state.len()];
    state.write_f64(&mut x);
    x
}

/// Epsilon-greedy behaviour policy.
pub fn select_action<R: Rng + ?Sized>(
    params: &MlpParams,
    state: &NetworkState,
    epsilon: f64,
    action_count: usize,
    rng: &mut R,
) -> Result<usize, NeuralError> {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        return Ok(rng.gen_range(0..action_count));
    }
    let q = params.forward(&encode(state))?;
    Ok(argmax(&q))
}

/// Double-Q regression targets for a batch of transitions.
///
/// `next_states` is `batch x n` row-major. The policy network picks the
/// next action and the target network scores it.
pub fn double_q_targets(
    policy: &MlpParams,
    target: &MlpParams,
    next_states: &[f64],
    rewards: &[f64],
    terminals: &[bool],
    gamma: f64,
) -> Result<Vec<f64>, NeuralError> {
    let batch = rewards.len();
    let a = policy.output_size();
    let q_policy = policy.forward_batch(next_states, batch)?;
    let q_target = target.forward_batch(next_states, batch)?;
    Ok((0..batch)
        .map(|b| {
            if terminals[b] {
                rewards[b]
            } else {
                let best = argmax(&q_policy[b * a..(b + 1) * a]);
                rewards[b] + gamma * q_target[b * a + best]
            }
        })
        .collect())
}

/// Pure argmax controller over trained parameters.
#[derive(Debug, Clone)]
pub struct GreedyPolicy {
    pub params: MlpParams,
    pub controllable: Vec<usize>,
}

impl GreedyPolicy {
    pub fn action(&self, state: &NetworkState) -> usize {
        let q = self
            .params
            .forward(&encode(state))
            .expect("policy input width matches network");
        argmax(&q)
    }
}

impl Controller for GreedyPolicy {
    fn intervention(&self, state: &NetworkState) -> usize {
        match self.action(state) {
            0 => 0,
            a => self.controllable[a - 1],
        }
    }
}

pub fn greedy_policy(params: MlpParams, task: &ControlTask) -> GreedyPolicy {
    GreedyPolicy {
        params,
        controllable: task.controllable.clone(),
    }
}
