//! A network as an episodic control problem.
//!
//! One environment step is one intervention opportunity followed by one
//! natural network step. Action `0` is "do nothing"; action `k >= 1` flips
//! the `k`-th controllable node. Rewards are computed on the post-evolution
//! state.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{find_attractors, DEFAULT_ATTRACTOR_CAP};
use crate::error::PbnError;
use crate::network::Network;
use crate::state::NetworkState;

/// Horizon used by subset tasks that do not set one.
pub const DEFAULT_SUBSET_HORIZON: u32 = 100;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("action {action} outside action space of size {size}")]
    InvalidAction { action: usize, size: usize },

    #[error("invalid task: {0}")]
    InvalidTask(String),

    #[error(transparent)]
    Pbn(#[from] PbnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardParams {
    /// Reward for reaching the desired attractor; must exceed 2.
    pub success_reward: f64,
    pub undesirable_attractor_penalty: f64,
    pub step_penalty: f64,
    pub subset_good: f64,
    pub subset_bad: f64,
    /// Subtracted whenever the action is not the no-op.
    pub action_cost: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        Self {
            success_reward: 5.0,
            undesirable_attractor_penalty: -2.0,
            step_penalty: -1.0,
            subset_good: 10.0,
            subset_bad: -10.0,
            action_cost: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    /// Reach any state of `desired`; states of an `undesired` attractor are
    /// penalized. An empty `undesired` list gives every non-desired state
    /// the plain step penalty.
    Attractor {
        desired: HashSet<NetworkState>,
        undesired: HashMap<NetworkState, usize>,
    },
    /// Keep node `node` (1-based) at `value`.
    Subset { node: usize, value: bool },
}

impl Target {
    pub fn is_desired(&self, state: &NetworkState) -> bool {
        match self {
            Target::Attractor { desired, .. } => desired.contains(state),
            Target::Subset { node, value } => state.get(node - 1) == *value,
        }
    }

    pub fn is_attractor(&self) -> bool {
        matches!(self, Target::Attractor { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TerminalReason {
    ReachedTarget,
    HorizonExhausted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: NetworkState,
    pub reward: f64,
    pub terminal: Option<TerminalReason>,
}

impl StepOutcome {
    pub fn is_terminal(&self) -> bool {
        self.terminal.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlTask {
    pub name: String,
    /// 1-based controllable nodes; action `k` flips `controllable[k - 1]`.
    pub controllable: Vec<usize>,
    pub target: Target,
    pub horizon: u32,
    pub rewards: RewardParams,
}

impl ControlTask {
    pub fn new(
        name: impl Into<String>,
        n_nodes: usize,
        controllable: Vec<usize>,
        target: Target,
        horizon: u32,
        rewards: RewardParams,
    ) -> Result<Self, EnvError> {
        let task = Self {
            name: name.into(),
            controllable,
            target,
            horizon,
            rewards,
        };
        task.validate(n_nodes)?;
        Ok(task)
    }

    fn validate(&self, n_nodes: usize) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidTask(msg));
        if self.controllable.is_empty() {
            return bad("controllable node set is empty".into());
        }
        if let Some(&i) = self.controllable.iter().find(|&&i| i == 0 || i > n_nodes) {
            return bad(format!("controllable node {i} out of range [1, {n_nodes}]"));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        match &self.target {
            Target::Attractor { desired, undesired } => {
                if desired.is_empty() {
                    return bad("desired state set is empty".into());
                }
                if desired.iter().chain(undesired.keys()).any(|s| s.len() != n_nodes) {
                    return bad(format!("target states must have {n_nodes} bits"));
                }
                if desired.iter().any(|s| undesired.contains_key(s)) {
                    return bad("desired and undesired states overlap".into());
                }
                if self.rewards.success_reward <= 2.0 {
                    return bad(format!(
                        "success reward must exceed 2, got {}",
                        self.rewards.success_reward
                    ));
                }
            }
            Target::Subset { node, .. } => {
                if *node == 0 || *node > n_nodes {
                    return bad(format!("target node {node} out of range [1, {n_nodes}]"));
                }
            }
        }
        Ok(())
    }

    pub fn action_count(&self) -> usize {
        self.controllable.len() + 1
    }

    /// Node flipped by `action` (0 for the no-op).
    pub fn node_for_action(&self, action: usize) -> Result<usize, EnvError> {
        match action {
            0 => Ok(0),
            a if a <= self.controllable.len() => Ok(self.controllable[a - 1]),
            _ => Err(EnvError::InvalidAction {
                action,
                size: self.action_count(),
            }),
        }
    }

    /// Reward for landing in `next` after taking `action`.
    pub fn reward(&self, action: usize, next: &NetworkState) -> f64 {
        let r = &self.rewards;
        let base = match &self.target {
            Target::Attractor { desired, undesired } => {
                if desired.contains(next) {
                    r.success_reward
                } else if undesired.contains_key(next) {
                    r.undesirable_attractor_penalty
                } else {
                    r.step_penalty
                }
            }
            Target::Subset { .. } => {
                if self.target.is_desired(next) {
                    r.subset_good
                } else {
                    r.subset_bad
                }
            }
        };
        if action == 0 {
            base
        } else {
            base - r.action_cost
        }
    }

    pub fn load(path: impl AsRef<Path>, network: &Network) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(PbnError::from)?;
        Self::from_json(&text, network)
    }

    pub fn from_json(text: &str, network: &Network) -> Result<Self, EnvError> {
        let spec: TaskSpec = serde_json::from_str(text).map_err(PbnError::from)?;
        spec.resolve(network)
    }
}

/// Number of actions: one per controllable node plus the no-op.
pub fn action_space_size(task: &ControlTask) -> usize {
    task.action_count()
}

/// Intervention then natural evolution; returns the next state and reward.
/// Depends only on its arguments.
pub fn transition<R: Rng + ?Sized>(
    task: &ControlTask,
    network: &Network,
    state: &NetworkState,
    action: usize,
    rng: &mut R,
) -> Result<(NetworkState, f64), EnvError> {
    let node = task.node_for_action(action)?;
    let perturbed = state.intervene(node)?;
    let next = network.step(&perturbed, rng);
    let reward = task.reward(action, &next);
    Ok((next, reward))
}

/// Episode driver around [`transition`] that tracks the step count.
#[derive(Debug, Clone)]
pub struct PbnEnv<'a> {
    pub network: &'a Network,
    pub task: &'a ControlTask,
    state: NetworkState,
    t: u32,
    horizon: u32,
}

impl<'a> PbnEnv<'a> {
    pub fn new(network: &'a Network, task: &'a ControlTask) -> Self {
        Self {
            network,
            task,
            state: NetworkState::zeros(network.n_nodes()),
            t: 0,
            horizon: task.horizon,
        }
    }

    /// Overrides the task horizon (evaluation with a longer budget).
    pub fn with_horizon(mut self, horizon: u32) -> Self {
        self.horizon = horizon;
        self
    }

    /// Starts an episode from a uniform random state.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> &NetworkState {
        self.state = NetworkState::random(self.network.n_nodes(), rng);
        self.t = 0;
        &self.state
    }

    /// Starts an episode from `state`.
    pub fn reset_to(&mut self, state: NetworkState) -> Result<&NetworkState, EnvError> {
        self.network.model().check_state(&state)?;
        self.state = state;
        self.t = 0;
        Ok(&self.state)
    }

    pub fn state(&self) -> &NetworkState {
        &self.state
    }

    pub fn steps_taken(&self) -> u32 {
        self.t
    }

    /// Whether the current state already satisfies an attractor target.
    pub fn at_target(&self) -> bool {
        self.task.target.is_attractor() && self.task.target.is_desired(&self.state)
    }

    pub fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Result<StepOutcome, EnvError> {
        let (next, reward) = transition(self.task, self.network, &self.state, action, rng)?;
        self.t += 1;
        self.state = next.clone();
        let terminal = if self.task.target.is_attractor() && self.task.target.is_desired(&next) {
            Some(TerminalReason::ReachedTarget)
        } else if self.t >= self.horizon {
            Some(TerminalReason::HorizonExhausted)
        } else {
            None
        };
        Ok(StepOutcome {
            next_state: next,
            reward,
            terminal,
        })
    }
}

// ---- task file format ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ControllableSpec {
    All(AllNodes),
    Nodes(Vec<usize>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllNodes {
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UndesiredSpec {
    /// `"auto"`: every other attractor of the network, or none when the
    /// state space is too large to enumerate.
    Auto(AutoUndesired),
    States(Vec<Vec<NetworkState>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoUndesired {
    Auto,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetSpec {
    Attractor {
        desired: Vec<NetworkState>,
        #[serde(default = "default_undesired")]
        undesired: UndesiredSpec,
    },
    Subset {
        node: usize,
        value: u8,
    },
}

fn default_undesired() -> UndesiredSpec {
    UndesiredSpec::Auto(AutoUndesired::Auto)
}

/// On-disk task description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub controllable: ControllableSpec,
    pub target: TargetSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u32>,
    #[serde(default)]
    pub rewards: RewardParams,
}

impl TaskSpec {
    pub fn resolve(&self, network: &Network) -> Result<ControlTask, EnvError> {
        let n = network.n_nodes();
        let controllable = match &self.controllable {
            ControllableSpec::All(_) => (1..=n).collect(),
            ControllableSpec::Nodes(v) => v.clone(),
        };
        let (target, default_horizon) = match &self.target {
            TargetSpec::Subset { node, value } => {
                if *value > 1 {
                    return Err(EnvError::InvalidTask(format!(
                        "subset value must be 0 or 1, got {value}"
                    )));
                }
                (
                    Target::Subset {
                        node: *node,
                        value: *value == 1,
                    },
                    Some(DEFAULT_SUBSET_HORIZON),
                )
            }
            TargetSpec::Attractor { desired, undesired } => {
                let desired: HashSet<NetworkState> = desired.iter().cloned().collect();
                let groups: Vec<Vec<NetworkState>> = match undesired {
                    UndesiredSpec::States(groups) => groups.clone(),
                    UndesiredSpec::Auto(_) => auto_undesired(network, &desired)?,
                };
                let undesired = groups
                    .into_iter()
                    .enumerate()
                    .flat_map(|(k, g)| g.into_iter().map(move |s| (s, k)))
                    .collect();
                (Target::Attractor { desired, undesired }, None)
            }
        };
        let horizon = self
            .horizon
            .or(default_horizon)
            .ok_or_else(|| EnvError::InvalidTask("attractor tasks need a horizon".into()))?;
        ControlTask::new(self.name.clone(), n, controllable, target, horizon, self.rewards)
    }
}

fn auto_undesired(network: &Network, desired: &HashSet<NetworkState>) -> Result<Vec<Vec<NetworkState>>, EnvError> {
    if network.n_nodes() > DEFAULT_ATTRACTOR_CAP {
        return Ok(Vec::new());
    }
    let attractors = find_attractors(network, DEFAULT_ATTRACTOR_CAP)?;
    Ok(attractors
        .attractors
        .into_iter()
        .filter(|a| !a.iter().any(|s| desired.contains(s)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::rng::seeded;

    fn n10() -> Network {
        Network::new(fixtures::n10()).unwrap()
    }

    fn st(s: &str) -> NetworkState {
        s.parse().unwrap()
    }

    #[test]
    fn n10_task_fixture_resolves_with_auto_undesired() {
        let net = n10();
        let task = ControlTask::from_json(fixtures::N10_TASK_JSON, &net).unwrap();
        assert_eq!(task.horizon, 11);
        assert_eq!(action_space_size(&task), 11);
        match &task.target {
            Target::Attractor { desired, undesired } => {
                assert_eq!(desired.len(), 1);
                assert_eq!(undesired.len(), 257);
            }
            _ => panic!("attractor target expected"),
        }
        assert_eq!(task.reward(0, &st("1000000000")), -2.0);
        assert_eq!(task.reward(3, &st("1000000000")), -3.0);
    }

    #[test]
    fn attractor_reward_branches() {
        let net = n10();
        let task = ControlTask::from_json(fixtures::N10_TASK_JSON, &net).unwrap();
        let mut env = PbnEnv::new(&net, &task);
        env.reset_to(st("0000000000")).unwrap();
        let out = env.step(0, &mut seeded(0)).unwrap();
        assert_eq!(out.reward, 5.0);
        assert_eq!(out.terminal, Some(TerminalReason::ReachedTarget));

        // flipping node 5 of 0000100000 lands on the desired fixed point
        env.reset_to(st("0000100000")).unwrap();
        let out = env.step(5, &mut seeded(0)).unwrap();
        assert_eq!(out.reward, 4.0);
        assert!(out.is_terminal());

        // from 1100000000 node 1 stays on and node 9 stays off, so the next
        // state is either the fixed point 1000000000 or an ordinary state
        let mut seen = (false, false);
        for seed in 0..50 {
            env.reset_to(st("1000000000")).unwrap();
            let out = env.step(2, &mut seeded(seed)).unwrap();
            assert!(out.next_state.get(0) && !out.next_state.get(8));
            assert!(!out.is_terminal());
            if out.next_state == st("1000000000") {
                assert_eq!(out.reward, -2.0 - 1.0);
                seen.0 = true;
            } else {
                assert_eq!(out.reward, -1.0 - 1.0);
                seen.1 = true;
            }
        }
        assert_eq!(seen, (true, true));
    }

    #[test]
    fn every_transition_hits_exactly_one_reward_branch() {
        let net = n10();
        let task = ControlTask::from_json(fixtures::N10_TASK_JSON, &net).unwrap();
        let Target::Attractor { desired, undesired } = &task.target else {
            unreachable!()
        };
        let mut rng = seeded(11);
        for _ in 0..5000 {
            let s = NetworkState::random(10, &mut rng);
            let a = rng.gen_range(0..11);
            let (next, r) = transition(&task, &net, &s, a, &mut rng).unwrap();
            let base = if desired.contains(&next) {
                5.0
            } else if undesired.contains_key(&next) {
                -2.0
            } else {
                -1.0
            };
            assert_eq!(r, if a == 0 { base } else { base - 1.0 });
            assert_eq!(
                task.reward(a, &next),
                task.reward(0, &next) - if a == 0 { 0.0 } else { 1.0 }
            );
        }
    }

    #[test]
    fn subset_reward_with_action_cost() {
        let net = n10();
        let task = ControlTask::new(
            "subset",
            10,
            vec![1],
            Target::Subset { node: 2, value: false },
            DEFAULT_SUBSET_HORIZON,
            RewardParams::default(),
        )
        .unwrap();
        assert_eq!(task.reward(1, &st("0000000000")), 9.0);
        assert_eq!(task.reward(0, &st("0000000000")), 10.0);
        assert_eq!(task.reward(0, &st("0100000000")), -10.0);
        assert_eq!(task.reward(1, &st("0100000000")), -11.0);
        // subset episodes end only at the horizon, even on desirable states
        let mut env = PbnEnv::new(&net, &task);
        env.reset_to(st("0000000000")).unwrap();
        let mut rng = seeded(1);
        for t in 1..=DEFAULT_SUBSET_HORIZON {
            let out = env.step(0, &mut rng).unwrap();
            assert_eq!(out.is_terminal(), t == DEFAULT_SUBSET_HORIZON);
        }
    }

    #[test]
    fn horizon_bounds_episode_length() {
        let net = n10();
        let task = ControlTask::from_json(fixtures::N10_TASK_JSON, &net).unwrap();
        let mut env = PbnEnv::new(&net, &task);
        let mut rng = seeded(3);
        for _ in 0..200 {
            env.reset(&mut rng);
            let mut steps = 0;
            loop {
                let out = env.step(rng.gen_range(0..11), &mut rng).unwrap();
                steps += 1;
                if out.is_terminal() {
                    break;
                }
            }
            assert!(steps <= 11);
        }
    }

    #[test]
    fn invalid_actions_and_tasks() {
        let net = n10();
        let task = ControlTask::from_json(fixtures::N10_TASK_JSON, &net).unwrap();
        let mut env = PbnEnv::new(&net, &task);
        env.reset(&mut seeded(0));
        assert!(matches!(
            env.step(11, &mut seeded(0)),
            Err(EnvError::InvalidAction { action: 11, size: 11 })
        ));
        let empty = ControlTask::new(
            "x",
            10,
            vec![],
            Target::Subset { node: 1, value: false },
            5,
            RewardParams::default(),
        );
        assert!(empty.is_err());
        let low_reward = RewardParams {
            success_reward: 2.0,
            ..RewardParams::default()
        };
        let t = ControlTask::new(
            "x",
            10,
            vec![1],
            Target::Attractor {
                desired: [st("0000000000")].into(),
                undesired: HashMap::new(),
            },
            5,
            low_reward,
        );
        assert!(t.is_err());
    }

    #[test]
    fn pirin_style_task_has_two_actions() {
        let net = n10();
        let task = ControlTask::from_json(
            r#"{"name":"p","controllable":[1],"target":{"subset":{"node":2,"value":0}}}"#,
            &net,
        )
        .unwrap();
        assert_eq!(action_space_size(&task), 2);
        assert_eq!(task.horizon, DEFAULT_SUBSET_HORIZON);
        assert_eq!(task.node_for_action(1).unwrap(), 1);
    }

    #[test]
    fn reset_is_seeded_and_explicit_variant_is_exact() {
        let net = n10();
        let task = ControlTask::from_json(fixtures::N10_TASK_JSON, &net).unwrap();
        let mut env = PbnEnv::new(&net, &task);
        let a = env.reset(&mut seeded(42)).clone();
        let b = env.reset(&mut seeded(42)).clone();
        assert_eq!(a, b);
        assert_eq!(env.reset_to(st("1010101010")).unwrap(), &st("1010101010"));
        assert!(env.reset_to(st("101")).is_err());
    }
}
