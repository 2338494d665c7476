use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{Schedule, TrainConfig, UpdateUnit};
use super::replay::{Experience, ReplayBuffer};
use super::{double_q_targets, select_action, AgentError};
use crate::env::{ControlTask, PbnEnv, TerminalReason};
use crate::network::Network;
use crate::neural::{huber_loss, AdamConfig, AdamState, MlpParams, MlpSpec, NeuralError};

/// Metrics for one epoch (episodic) or window (stepwise).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: u64,
    /// Episodes finished during the epoch.
    pub episodes: u64,
    pub env_steps: u64,
    /// Mean number of non-zero actions per finished episode.
    pub avg_perturbations: f64,
    /// Mean undiscounted return per finished episode.
    pub avg_reward: f64,
    /// Exploration rate at the end of the epoch.
    pub epsilon: f64,
    pub beta: f64,
    /// Mean weighted Huber loss over the epoch's gradient steps.
    pub loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub params: MlpParams,
    pub metrics: Vec<EpochMetrics>,
    pub gradient_steps: u64,
    pub env_steps: u64,
    pub episodes: u64,
    /// Parameters after each epoch listed in `checkpoint_epochs`.
    pub checkpoints: Vec<(u64, MlpParams)>,
}

pub fn train<R: Rng + ?Sized>(
    network: &Network,
    task: &ControlTask,
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainArtifacts, AgentError> {
    train_with_observer(network, task, config, rng, &mut |_, _| {})
}

struct Accumulator {
    episodes: u64,
    steps: u64,
    perturbations: u64,
    reward: f64,
    loss_sum: f64,
    loss_count: u64,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            episodes: 0,
            steps: 0,
            perturbations: 0,
            reward: 0.0,
            loss_sum: 0.0,
            loss_count: 0,
        }
    }

    fn finish(&self, epoch: u64, epsilon: f64, beta: f64) -> EpochMetrics {
        let per_episode = |x: f64| {
            if self.episodes == 0 {
                f64::NAN
            } else {
                x / self.episodes as f64
            }
        };
        EpochMetrics {
            epoch,
            episodes: self.episodes,
            env_steps: self.steps,
            avg_perturbations: per_episode(self.perturbations as f64),
            avg_reward: per_episode(self.reward),
            epsilon,
            beta,
            loss: (self.loss_count > 0).then(|| self.loss_sum / self.loss_count as f64),
        }
    }
}

struct Learner<'c> {
    config: &'c TrainConfig,
    params: MlpParams,
    target: MlpParams,
    adam: AdamState,
    buffer: ReplayBuffer,
    n: usize,
    actions: usize,
    gradient_steps: u64,
}

impl Learner<'_> {
    /// One prioritized Double-Q update; returns the batch loss.
    fn gradient_step<R: Rng + ?Sized>(&mut self, beta: f64, rng: &mut R) -> Result<f64, AgentError> {
        let cfg = self.config;
        let b = cfg.batch_size;
        let (n, a) = (self.n, self.actions);
        let batch = self.buffer.sample(b, beta, rng)?;
        let mut states = vec![0.0; b * n];
        let mut next = vec![0.0; b * n];
        let mut acts = Vec::with_capacity(b);
        let mut rewards = Vec::with_capacity(b);
        let mut terminals = Vec::with_capacity(b);
        for (k, &i) in batch.indices.iter().enumerate() {
            let e = self.buffer.get(i);
            e.state.write_f64(&mut states[k * n..(k + 1) * n]);
            e.next_state.write_f64(&mut next[k * n..(k + 1) * n]);
            acts.push(e.action);
            rewards.push(e.reward);
            terminals.push(e.terminal);
        }
        let targets = double_q_targets(&self.params, &self.target, &next, &rewards, &terminals, cfg.gamma)?;
        let cache = self.params.forward_cached(&states, b)?;
        let q = cache.output();
        let mut grad_out = vec![0.0; b * a];
        let mut td = Vec::with_capacity(b);
        let mut loss = 0.0;
        for k in 0..b {
            let pred = q[k * a + acts[k]];
            let (l, dl) = huber_loss(pred, targets[k], cfg.huber_delta);
            let w = batch.weights[k];
            loss += w * l / b as f64;
            grad_out[k * a + acts[k]] = w * dl / b as f64;
            td.push(pred - targets[k]);
        }
        if !loss.is_finite() {
            return Err(self.diverged());
        }
        let grads = self.params.backward(&cache, &grad_out)?;
        match self.adam.apply(&mut self.params, &grads) {
            Err(NeuralError::Diverged) => return Err(self.diverged()),
            r => r?,
        }
        self.buffer
            .update_priorities(&batch.indices, &td, cfg.priority_offset)?;
        self.gradient_steps += 1;
        if cfg.target_update.unit == UpdateUnit::GradientSteps && self.gradient_steps % cfg.target_update.every == 0 {
            self.sync();
        }
        Ok(loss)
    }

    fn diverged(&self) -> AgentError {
        AgentError::Diverged {
            step: self.gradient_steps,
            checkpoint: Box::new(self.params.clone()),
        }
    }

    fn sync(&mut self) {
        self.target = self.params.clone();
    }
}

/// Training loop with a callback invoked after each logged epoch or window.
pub fn train_with_observer<R: Rng + ?Sized>(
    network: &Network,
    task: &ControlTask,
    config: &TrainConfig,
    rng: &mut R,
    observer: &mut dyn FnMut(&EpochMetrics, &MlpParams),
) -> Result<TrainArtifacts, AgentError> {
    config.validate()?;
    let n = network.n_nodes();
    let actions = task.action_count();
    let spec = MlpSpec::new(n, config.hidden.clone(), actions);
    let params = MlpParams::init(&spec, rng)?;
    let adam = AdamState::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        &params,
    );
    let mut learner = Learner {
        config,
        target: params.clone(),
        params,
        adam,
        buffer: ReplayBuffer::new(config.buffer_capacity, config.omega)?,
        n,
        actions,
        gradient_steps: 0,
    };
    let mut env = PbnEnv::new(network, task).with_horizon(config.horizon.unwrap_or(task.horizon));

    let total = config.schedule.total_units();
    let (epoch_len, stepwise) = match config.schedule {
        Schedule::Episodic { episodes_per_epoch, .. } => (episodes_per_epoch, false),
        Schedule::Stepwise { window, .. } => (window, true),
    };
    let progress = |units: u64| if total == 0 { 1.0 } else { units as f64 / total as f64 };

    let mut metrics = Vec::new();
    let mut checkpoints = Vec::new();
    let mut acc = Accumulator::new();
    let mut env_steps = 0u64;
    let mut episodes = 0u64;
    let mut epoch = 0u64;
    let mut epsilon = config.epsilon_at(0.0);
    let mut beta = config.beta_at(0.0);

    let mut close_epoch = |epoch: &mut u64,
                           acc: &mut Accumulator,
                           eps: f64,
                           beta: f64,
                           params: &MlpParams,
                           metrics: &mut Vec<EpochMetrics>,
                           checkpoints: &mut Vec<(u64, MlpParams)>| {
        let m = acc.finish(*epoch, eps, beta);
        observer(&m, params);
        if config.checkpoint_epochs.contains(epoch) {
            checkpoints.push((*epoch, params.clone()));
        }
        metrics.push(m);
        *acc = Accumulator::new();
        *epoch += 1;
    };

    let units_done = |episodes: u64, env_steps: u64| if stepwise { env_steps } else { episodes };
    while units_done(episodes, env_steps) < total {
        if !stepwise {
            epsilon = config.epsilon_at(progress(episodes));
            beta = config.beta_at(progress(episodes));
        }
        env.reset(rng);
        let mut ep_reward = 0.0;
        let mut ep_perturb = 0u64;
        let mut finished = env.at_target();
        while !finished {
            if stepwise {
                if env_steps >= total {
                    break;
                }
                epsilon = config.epsilon_at(progress(env_steps));
                beta = config.beta_at(progress(env_steps));
            }
            let state = env.state().clone();
            let action = select_action(&learner.params, &state, epsilon, actions, rng)?;
            let outcome = env.step(action, rng)?;
            // a time limit is not an absorbing state, so only reaching the
            // target stops bootstrapping
            let terminal = outcome.terminal == Some(TerminalReason::ReachedTarget);
            let outcome_terminal = outcome.is_terminal();
            learner.buffer.add(Experience {
                state,
                action,
                reward: outcome.reward,
                next_state: outcome.next_state,
                terminal,
            });
            ep_reward += outcome.reward;
            ep_perturb += u64::from(action != 0);
            env_steps += 1;
            acc.steps += 1;
            if learner.buffer.len() >= config.batch_size {
                let loss = learner.gradient_step(beta, rng)?;
                acc.loss_sum += loss;
                acc.loss_count += 1;
            }
            if config.target_update.unit == UpdateUnit::EnvSteps && env_steps % config.target_update.every == 0 {
                learner.sync();
            }
            finished = outcome_terminal;
            if finished {
                acc.episodes += 1;
                acc.reward += ep_reward;
                acc.perturbations += ep_perturb;
                episodes += 1;
            }
            if stepwise && env_steps % epoch_len == 0 {
                close_epoch(
                    &mut epoch,
                    &mut acc,
                    epsilon,
                    beta,
                    &learner.params,
                    &mut metrics,
                    &mut checkpoints,
                );
            }
        }
        if env.steps_taken() == 0 {
            // started inside the target: an empty episode
            acc.episodes += 1;
            episodes += 1;
        }
        if !stepwise {
            if config.target_update.unit == UpdateUnit::Episodes && episodes % config.target_update.every == 0 {
                learner.sync();
            }
            if episodes % epoch_len == 0 {
                close_epoch(
                    &mut epoch,
                    &mut acc,
                    epsilon,
                    beta,
                    &learner.params,
                    &mut metrics,
                    &mut checkpoints,
                );
            }
        }
    }
    if stepwise && acc.steps > 0 {
        close_epoch(
            &mut epoch,
            &mut acc,
            epsilon,
            beta,
            &learner.params,
            &mut metrics,
            &mut checkpoints,
        );
    }

    Ok(TrainArtifacts {
        params: learner.params,
        metrics,
        gradient_steps: learner.gradient_steps,
        env_steps,
        episodes,
        checkpoints,
    })
}

/// Writes `epoch,avg_perturbations,avg_reward,epsilon,beta,loss` rows.
pub fn write_metrics_csv<W: Write>(metrics: &[EpochMetrics], mut out: W) -> std::io::Result<()> {
    writeln!(
        out,
        "epoch,episodes,env_steps,avg_perturbations,avg_reward,epsilon,beta,loss"
    )?;
    for m in metrics {
        let loss = m.loss.map(|l| l.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.epoch, m.episodes, m.env_steps, m.avg_perturbations, m.avg_reward, m.epsilon, m.beta, loss
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{TargetUpdate, UpdateUnit};
    use crate::env::TaskSpec;
    use crate::fixtures;
    use crate::rng::seeded;

    fn n10() -> (Network, ControlTask) {
        let net = Network::new(fixtures::n10()).unwrap();
        let spec: TaskSpec = serde_json::from_str(fixtures::N10_TASK_JSON).unwrap();
        let task = spec.resolve(&net).unwrap();
        (net, task)
    }

    fn small() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            buffer_capacity: 500,
            hidden: vec![16],
            target_update: TargetUpdate {
                every: 50,
                unit: UpdateUnit::GradientSteps,
            },
            schedule: Schedule::Episodic {
                epochs: 4,
                episodes_per_epoch: 25,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_budget_returns_initial_params() {
        let (net, task) = n10();
        let cfg = TrainConfig {
            schedule: Schedule::Stepwise {
                total_steps: 0,
                window: 10,
            },
            ..small()
        };
        let art = train(&net, &task, &cfg, &mut seeded(3)).unwrap();
        let init = MlpParams::init(&MlpSpec::new(10, vec![16], 11), &mut seeded(3)).unwrap();
        assert_eq!(art.params, init);
        assert!(art.metrics.is_empty());
        assert_eq!(art.gradient_steps, 0);
    }

    #[test]
    fn same_seed_same_log() {
        let (net, task) = n10();
        let a = train(&net, &task, &small(), &mut seeded(11)).unwrap();
        let b = train(&net, &task, &small(), &mut seeded(11)).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.params, b.params);
        assert_eq!(a.metrics.len(), 4);
        assert_eq!(a.episodes, 100);
        assert!(a.gradient_steps > 0);
    }

    #[test]
    fn stepwise_windows_cover_budget() {
        let (net, task) = n10();
        let cfg = TrainConfig {
            schedule: Schedule::Stepwise {
                total_steps: 250,
                window: 100,
            },
            ..small()
        };
        let art = train(&net, &task, &cfg, &mut seeded(2)).unwrap();
        assert_eq!(art.env_steps, 250);
        let steps: Vec<u64> = art.metrics.iter().map(|m| m.env_steps).collect();
        assert_eq!(steps, vec![100, 100, 50]);
        assert_eq!(art.metrics.last().unwrap().epsilon, cfg.epsilon_at(249.0 / 250.0));
    }

    #[test]
    fn checkpoints_follow_request() {
        let (net, task) = n10();
        let cfg = TrainConfig {
            checkpoint_epochs: vec![0, 3],
            ..small()
        };
        let art = train(&net, &task, &cfg, &mut seeded(5)).unwrap();
        let epochs: Vec<u64> = art.checkpoints.iter().map(|c| c.0).collect();
        assert_eq!(epochs, vec![0, 3]);
        assert_eq!(art.checkpoints[1].1, art.params);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let m = EpochMetrics {
            epoch: 0,
            episodes: 2,
            env_steps: 7,
            avg_perturbations: 1.5,
            avg_reward: -2.0,
            epsilon: 1.0,
            beta: 0.4,
            loss: None,
        };
        let mut out = Vec::new();
        write_metrics_csv(&[m], &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text,
            "epoch,episodes,env_steps,avg_perturbations,avg_reward,epsilon,beta,loss\n0,2,7,1.5,-2,1,0.4,\n"
        );
    }
}
