//! Controller quality: success sweeps, steady-state shift, training curves.

mod plot;

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::agent::{EpochMetrics, GreedyPolicy};
use crate::analysis::{monte_carlo_ssd, Controller, SimulationPlan, SsdHistogram};
use crate::env::{transition, ControlTask, EnvError, Target};
use crate::error::PbnError;
use crate::network::Network;
use crate::rng::{self, SimRng};
use crate::state::NetworkState;

pub use plot::{histogram_svg, line_chart_svg};

pub const DEFAULT_ATTEMPTS: u32 = 10;
pub const SAMPLED_INITIAL_STATES: u64 = 10_000;
/// Largest N swept exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 20;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{0}")]
    WrongMode(String),

    #[error("metrics log is empty")]
    EmptyLog,

    #[error("invalid evaluation setting: {0}")]
    InvalidSetting(String),

    #[error(transparent)]
    Env(#[from] EnvError),

    #[error(transparent)]
    Pbn(#[from] PbnError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Action source for evaluation episodes.
pub trait ActionPolicy: Sync {
    fn act(&self, state: &NetworkState, rng: &mut SimRng) -> usize;
}

impl ActionPolicy for GreedyPolicy {
    fn act(&self, state: &NetworkState, _rng: &mut SimRng) -> usize {
        self.action(state)
    }
}

/// Never intervenes.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoOpPolicy;

impl ActionPolicy for NoOpPolicy {
    fn act(&self, _state: &NetworkState, _rng: &mut SimRng) -> usize {
        0
    }
}

/// Uniform over the whole action space, no-op included.
#[derive(Debug, Clone, Copy)]
pub struct RandomPolicy {
    pub actions: usize,
}

impl ActionPolicy for RandomPolicy {
    fn act(&self, _state: &NetworkState, rng: &mut SimRng) -> usize {
        rng.gen_range(0..self.actions)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialStates {
    Exhaustive,
    Sampled { count: u64 },
}

impl InitialStates {
    /// Every state up to [`EXHAUSTIVE_LIMIT`] nodes, else a uniform sample.
    pub fn auto(n_nodes: usize) -> Self {
        if n_nodes <= EXHAUSTIVE_LIMIT {
            InitialStates::Exhaustive
        } else {
            InitialStates::Sampled {
                count: SAMPLED_INITIAL_STATES,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateOutcome {
    pub state: NetworkState,
    pub successes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuccessReport {
    pub horizon: u32,
    pub attempts_per_state: u32,
    pub initial_states: InitialStates,
    pub n_initial_states: u64,
    pub attempts: u64,
    pub successes: u64,
    pub success_rate: f64,
    /// Binomial standard error of `success_rate`.
    pub std_error: f64,
    /// `perturbation_counts[k]` attempts used exactly `k` interventions.
    pub perturbation_counts: Vec<u64>,
    pub mean_perturbations: f64,
    pub per_state: Vec<StateOutcome>,
}

struct Attempt {
    /// Step at which a desired state was first seen.
    hit: Option<u32>,
    /// Cumulative intervention count after each step.
    perturbed: Vec<u32>,
}

fn run_attempt(
    network: &Network,
    task: &ControlTask,
    policy: &dyn ActionPolicy,
    start: &NetworkState,
    max_h: u32,
    rng: &mut SimRng,
) -> Result<Attempt, EnvError> {
    let mut s = start.clone();
    let mut perturbed = Vec::with_capacity(max_h as usize);
    let mut count = 0;
    for t in 0..max_h {
        if task.target.is_desired(&s) {
            return Ok(Attempt {
                hit: Some(t),
                perturbed,
            });
        }
        let a = policy.act(&s, rng);
        count += u32::from(a != 0);
        perturbed.push(count);
        s = transition(task, network, &s, a, rng)?.0;
    }
    let hit = task.target.is_desired(&s).then_some(max_h);
    Ok(Attempt { hit, perturbed })
}

fn initial_state_list<R: Rng + ?Sized>(
    n: usize,
    initial: InitialStates,
    rng: &mut R,
) -> Result<Vec<NetworkState>, EvalError> {
    match initial {
        InitialStates::Exhaustive => {
            if n > EXHAUSTIVE_LIMIT {
                return Err(EvalError::InvalidSetting(format!(
                    "exhaustive sweep needs N <= {EXHAUSTIVE_LIMIT}, got {n}"
                )));
            }
            Ok((0..1u64 << n).map(|i| NetworkState::from_index(n, i)).collect())
        }
        InitialStates::Sampled { count } => Ok((0..count).map(|_| NetworkState::random(n, rng)).collect()),
    }
}

/// Success rates at several horizons from shared trajectories.
///
/// Each attempt runs once to the largest horizon on its own seeded stream;
/// an attempt succeeds at horizon `H` if a desired state is reached within
/// `H` steps, so rates are monotone in `H`.
pub fn success_sweep_horizons<R: Rng + ?Sized>(
    network: &Network,
    task: &ControlTask,
    policy: &dyn ActionPolicy,
    attempts_per_state: u32,
    horizons: &[u32],
    initial: InitialStates,
    rng: &mut R,
) -> Result<Vec<SuccessReport>, EvalError> {
    if !matches!(task.target, Target::Attractor { .. }) {
        return Err(EvalError::WrongMode("success sweeps need an attractor task".into()));
    }
    if attempts_per_state == 0 || horizons.is_empty() {
        return Err(EvalError::InvalidSetting(
            "need at least one attempt and one horizon".into(),
        ));
    }
    let states = initial_state_list(network.n_nodes(), initial, rng)?;
    let base = rng::fork(rng);
    let max_h = *horizons.iter().max().unwrap();
    let attempts: Vec<Vec<Attempt>> = states
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            (0..attempts_per_state)
                .map(|k| {
                    let mut r = rng::stream(base, i as u64 * attempts_per_state as u64 + k as u64);
                    run_attempt(network, task, policy, s, max_h, &mut r)
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;

    Ok(horizons
        .iter()
        .map(|&h| {
            let mut per_state = Vec::with_capacity(states.len());
            let mut counts: Vec<u64> = Vec::new();
            let mut successes = 0u64;
            let mut perturb_total = 0u64;
            for (s, runs) in states.iter().zip(&attempts) {
                let mut ok = 0u32;
                for a in runs {
                    let used = match a.hit {
                        Some(t) if t <= h => {
                            ok += 1;
                            t
                        }
                        _ => h,
                    };
                    let k = if used == 0 { 0 } else { a.perturbed[used as usize - 1] } as usize;
                    if counts.len() <= k {
                        counts.resize(k + 1, 0);
                    }
                    counts[k] += 1;
                    perturb_total += k as u64;
                }
                successes += ok as u64;
                per_state.push(StateOutcome {
                    state: s.clone(),
                    successes: ok,
                });
            }
            let total = states.len() as u64 * attempts_per_state as u64;
            let rate = successes as f64 / total as f64;
            SuccessReport {
                horizon: h,
                attempts_per_state,
                initial_states: initial,
                n_initial_states: states.len() as u64,
                attempts: total,
                successes,
                success_rate: rate,
                std_error: (rate * (1.0 - rate) / total as f64).sqrt(),
                perturbation_counts: counts,
                mean_perturbations: perturb_total as f64 / total as f64,
                per_state,
            }
        })
        .collect())
}

/// Success rate at one horizon (the task's own when `horizon` is `None`).
pub fn success_sweep<R: Rng + ?Sized>(
    network: &Network,
    task: &ControlTask,
    policy: &dyn ActionPolicy,
    attempts_per_state: u32,
    horizon: Option<u32>,
    initial: InitialStates,
    rng: &mut R,
) -> Result<SuccessReport, EvalError> {
    let h = horizon.unwrap_or(task.horizon);
    Ok(success_sweep_horizons(network, task, policy, attempts_per_state, &[h], initial, rng)?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RandomBaselineReport {
    pub attempts: u64,
    pub max_steps: u32,
    pub reached: u64,
    /// Mean steps to the target over attempts that reached it; every step
    /// counts, no-ops included.
    pub mean_steps: f64,
    /// Mean non-zero actions over the same attempts.
    pub mean_perturbations: f64,
}

/// Uniformly random control from uniform initial states.
pub fn random_baseline<R: Rng + ?Sized>(
    network: &Network,
    task: &ControlTask,
    attempts: u64,
    max_steps: u32,
    rng: &mut R,
) -> Result<RandomBaselineReport, EvalError> {
    if !matches!(task.target, Target::Attractor { .. }) {
        return Err(EvalError::WrongMode("random baseline needs an attractor task".into()));
    }
    let base = rng::fork(rng);
    let policy = RandomPolicy {
        actions: task.action_count(),
    };
    let n = network.n_nodes();
    let runs: Vec<Attempt> = (0..attempts)
        .into_par_iter()
        .map(|k| {
            let mut r = rng::stream(base, k);
            let start = NetworkState::random(n, &mut r);
            run_attempt(network, task, &policy, &start, max_steps, &mut r)
        })
        .collect::<Result<_, _>>()?;
    let (mut reached, mut steps, mut perturb) = (0u64, 0u64, 0u64);
    for a in &runs {
        if let Some(t) = a.hit {
            reached += 1;
            steps += t as u64;
            perturb += if t == 0 { 0 } else { a.perturbed[t as usize - 1] as u64 };
        }
    }
    let mean = |x: u64| {
        if reached == 0 {
            f64::NAN
        } else {
            x as f64 / reached as f64
        }
    };
    Ok(RandomBaselineReport {
        attempts,
        max_steps,
        reached,
        mean_steps: mean(steps),
        mean_perturbations: mean(perturb),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SsdShiftReport {
    pub plan: SimulationPlan,
    pub uncontrolled_mass: f64,
    pub controlled_mass: f64,
    pub uncontrolled_std_error: f64,
    pub controlled_std_error: f64,
    /// `sqrt(se_u^2 + se_c^2)`.
    pub pooled_std_error: f64,
    pub uncontrolled: SsdHistogram,
    pub controlled: SsdHistogram,
}

impl SsdShiftReport {
    pub fn shift(&self) -> f64 {
        self.controlled_mass - self.uncontrolled_mass
    }
}

/// Desirable-state mass with and without `controller`.
pub fn ssd_shift<R: Rng + ?Sized>(
    network: &Network,
    task: &ControlTask,
    controller: &dyn Controller,
    plan: SimulationPlan,
    rng: &mut R,
) -> Result<SsdShiftReport, EvalError> {
    if !matches!(task.target, Target::Subset { .. }) {
        return Err(EvalError::WrongMode("ssd shift needs a subset task".into()));
    }
    let target = &task.target;
    let pred = |s: &NetworkState| target.is_desired(s);
    let free = monte_carlo_ssd(network, None, plan, Some(&pred), rng)?;
    let held = monte_carlo_ssd(network, Some(controller), plan, Some(&pred), rng)?;
    let se_u = free.predicate_std_error().unwrap_or(0.0);
    let se_c = held.predicate_std_error().unwrap_or(0.0);
    Ok(SsdShiftReport {
        plan,
        uncontrolled_mass: free.mass_where(pred),
        controlled_mass: held.mass_where(pred),
        uncontrolled_std_error: se_u,
        controlled_std_error: se_c,
        pooled_std_error: (se_u * se_u + se_c * se_c).sqrt(),
        uncontrolled: free,
        controlled: held,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurveFiles {
    pub csv: PathBuf,
    pub perturbations_svg: PathBuf,
    pub reward_svg: PathBuf,
}

/// Writes the metrics CSV and line charts of average perturbations and
/// average reward into `dir`.
pub fn training_curves(metrics: &[EpochMetrics], dir: impl AsRef<Path>) -> Result<CurveFiles, EvalError> {
    if metrics.is_empty() {
        return Err(EvalError::EmptyLog);
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let files = CurveFiles {
        csv: dir.join("metrics.csv"),
        perturbations_svg: dir.join("perturbations.svg"),
        reward_svg: dir.join("reward.svg"),
    };
    let mut csv = Vec::new();
    crate::agent::write_metrics_csv(metrics, &mut csv)?;
    std::fs::write(&files.csv, csv)?;
    let xs: Vec<f64> = metrics.iter().map(|m| m.epoch as f64).collect();
    let pert: Vec<f64> = metrics.iter().map(|m| m.avg_perturbations).collect();
    let reward: Vec<f64> = metrics.iter().map(|m| m.avg_reward).collect();
    std::fs::write(
        &files.perturbations_svg,
        line_chart_svg("Average perturbations", "epoch", "avg perturbations", &xs, &pert),
    )?;
    std::fs::write(
        &files.reward_svg,
        line_chart_svg("Average reward", "epoch", "avg reward", &xs, &reward),
    )?;
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::TaskSpec;
    use crate::fixtures;
    use crate::rng::seeded;

    fn n10() -> (Network, ControlTask) {
        let net = Network::new(fixtures::n10()).unwrap();
        let spec: TaskSpec = serde_json::from_str(fixtures::N10_TASK_JSON).unwrap();
        let task = spec.resolve(&net).unwrap();
        (net, task)
    }

    #[test]
    fn uncontrolled_success_is_rare() {
        let (net, task) = n10();
        let r = success_sweep(
            &net,
            &task,
            &NoOpPolicy,
            2,
            None,
            InitialStates::Exhaustive,
            &mut seeded(0),
        )
        .unwrap();
        assert_eq!(r.attempts, 2048);
        assert!(r.success_rate < 0.1, "{}", r.success_rate);
        assert_eq!(r.perturbation_counts, vec![2048]);
        let weighted: u64 = r.per_state.iter().map(|s| s.successes as u64).sum();
        assert_eq!(weighted, r.successes);
    }

    #[test]
    fn rates_grow_with_horizon() {
        let (net, task) = n10();
        let p = RandomPolicy { actions: 11 };
        let reports = success_sweep_horizons(
            &net,
            &task,
            &p,
            3,
            &[3, 11, 14, 40],
            InitialStates::Exhaustive,
            &mut seeded(4),
        )
        .unwrap();
        for w in reports.windows(2) {
            assert!(w[0].successes <= w[1].successes);
        }
        let again = success_sweep(&net, &task, &p, 3, Some(14), InitialStates::Exhaustive, &mut seeded(4)).unwrap();
        assert_eq!(again, reports[2]);
    }

    #[test]
    fn sampled_initial_states_are_reported() {
        let (net, task) = n10();
        let r = success_sweep(
            &net,
            &task,
            &NoOpPolicy,
            1,
            Some(5),
            InitialStates::Sampled { count: 50 },
            &mut seeded(1),
        )
        .unwrap();
        assert_eq!(r.n_initial_states, 50);
        assert_eq!(r.initial_states, InitialStates::Sampled { count: 50 });
        assert_eq!(InitialStates::auto(28), InitialStates::Sampled { count: 10_000 });
    }

    #[test]
    fn random_baseline_reaches_target() {
        let (net, task) = n10();
        let r = random_baseline(&net, &task, 200, 100_000, &mut seeded(9)).unwrap();
        assert_eq!(r.reached, 200);
        assert!(r.mean_steps > r.mean_perturbations);
    }

    #[test]
    fn ssd_shift_rejects_attractor_task() {
        let (net, task) = n10();
        let plan = SimulationPlan {
            runs: 2,
            steps_per_run: 10,
            burn_in: 0,
        };
        assert!(matches!(
            ssd_shift(&net, &task, &crate::NullController, plan, &mut seeded(0)),
            Err(EvalError::WrongMode(_))
        ));
    }

    #[test]
    fn curves_need_metrics() {
        let dir = std::env::temp_dir().join("pbn-rl-curves-empty");
        assert!(matches!(training_curves(&[], &dir), Err(EvalError::EmptyLog)));
    }
}
