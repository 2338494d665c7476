use serde::{Deserialize, Serialize};

use super::AgentError;

/// What the target-update interval counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateUnit {
    GradientSteps,
    EnvSteps,
    Episodes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetUpdate {
    pub every: u64,
    pub unit: UpdateUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `epochs x episodes_per_epoch` episodes; metrics logged per epoch.
    Episodic { epochs: u64, episodes_per_epoch: u64 },
    /// A fixed number of environment steps; metrics logged per window.
    Stepwise { total_steps: u64, window: u64 },
}

impl Schedule {
    /// Progress units: episodes or environment steps.
    pub fn total_units(&self) -> u64 {
        match *self {
            Schedule::Episodic {
                epochs,
                episodes_per_epoch,
            } => epochs * episodes_per_epoch,
            Schedule::Stepwise { total_steps, .. } => total_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub gamma: f64,
    pub min_epsilon: f64,
    pub exploration_fraction: f64,
    pub omega: f64,
    pub beta0: f64,
    pub beta_fraction: f64,
    pub learning_rate: f64,
    pub priority_offset: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub target_update: TargetUpdate,
    pub hidden: Vec<usize>,
    /// Overrides the task horizon when set.
    #[serde(default)]
    pub horizon: Option<u32>,
    pub schedule: Schedule,
    #[serde(default = "default_huber_delta")]
    pub huber_delta: f64,
    #[serde(default)]
    pub seed: u64,
    /// Epochs (or windows) after which parameters are kept.
    #[serde(default)]
    pub checkpoint_epochs: Vec<u64>,
}

fn default_huber_delta() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            min_epsilon: 0.05,
            exploration_fraction: 0.75,
            omega: 0.6,
            beta0: 0.4,
            beta_fraction: 0.75,
            learning_rate: 1e-4,
            priority_offset: 500.0,
            batch_size: 128,
            buffer_capacity: 10_000,
            target_update: TargetUpdate {
                every: 1000,
                unit: UpdateUnit::GradientSteps,
            },
            hidden: vec![64, 64],
            horizon: None,
            schedule: Schedule::Episodic {
                epochs: 100,
                episodes_per_epoch: 100,
            },
            huber_delta: 1.0,
            seed: 0,
            checkpoint_epochs: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::InvalidConfig(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.min_epsilon) {
            return bad(format!("min_epsilon must be in [0, 1], got {}", self.min_epsilon));
        }
        if !(self.exploration_fraction > 0.0 && self.exploration_fraction <= 1.0) {
            return bad("exploration_fraction must be in (0, 1]".into());
        }
        if !(self.beta_fraction > 0.0 && self.beta_fraction <= 1.0) {
            return bad("beta_fraction must be in (0, 1]".into());
        }
        if !(self.omega >= 0.0) {
            return bad(format!("omega must be >= 0, got {}", self.omega));
        }
        if !(0.0..=1.0).contains(&self.beta0) {
            return bad("beta0 must be in [0, 1]".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive".into());
        }
        if !(self.priority_offset > 0.0) {
            return bad("priority_offset must be positive".into());
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return bad(format!(
                "batch size {} must be in [1, buffer capacity {}]",
                self.batch_size, self.buffer_capacity
            ));
        }
        if self.target_update.every == 0 {
            return bad("target update interval must be >= 1".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden widths must be >= 1".into());
        }
        if self.horizon == Some(0) {
            return bad("horizon must be >= 1".into());
        }
        if let Schedule::Stepwise { window: 0, .. } = self.schedule {
            return bad("metrics window must be >= 1".into());
        }
        if !(self.huber_delta > 0.0) {
            return bad("huber_delta must be positive".into());
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| AgentError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Linear decay from 1 to `min_epsilon`, reached exactly at
    /// `exploration_fraction` of training and held afterwards.
    pub fn epsilon_at(&self, progress: f64) -> f64 {
        if progress >= self.exploration_fraction {
            self.min_epsilon
        } else {
            1.0 - (1.0 - self.min_epsilon) * progress / self.exploration_fraction
        }
    }

    /// Linear growth from `beta0` to 1 over `beta_fraction` of training.
    pub fn beta_at(&self, progress: f64) -> f64 {
        if progress >= self.beta_fraction {
            1.0
        } else {
            self.beta0 + (1.0 - self.beta0) * progress / self.beta_fraction
        }
    }
}

pub const PRESET_NAMES: [&str; 7] = [
    "n10-attractor",
    "n20-attractor",
    "n20-attractor-desk",
    "n7-attractor",
    "subset-pirin",
    "subset-n70",
    "subset-n200",
];

/// Bundled configurations.
pub fn preset(name: &str) -> Option<TrainConfig> {
    let base = TrainConfig::default();
    let episodes = |every| TargetUpdate {
        every,
        unit: UpdateUnit::Episodes,
    };
    let env_steps = |every| TargetUpdate {
        every,
        unit: UpdateUnit::EnvSteps,
    };
    let cfg = match name {
        "n10-attractor" => TrainConfig {
            priority_offset: 500.0,
            buffer_capacity: 10_000,
            batch_size: 128,
            target_update: episodes(400),
            schedule: Schedule::Episodic {
                epochs: 750,
                episodes_per_epoch: 400,
            },
            ..base
        },
        "n20-attractor" => TrainConfig {
            priority_offset: 5000.0,
            buffer_capacity: 500_000,
            target_update: episodes(5000),
            schedule: Schedule::Episodic {
                epochs: 134,
                episodes_per_epoch: 5000,
            },
            ..base
        },
        "n20-attractor-desk" => TrainConfig {
            priority_offset: 5000.0,
            buffer_capacity: 500_000,
            target_update: episodes(5000),
            schedule: Schedule::Episodic {
                epochs: 40,
                episodes_per_epoch: 5000,
            },
            ..base
        },
        "n7-attractor" => TrainConfig {
            gamma: 0.9,
            priority_offset: 500.0,
            target_update: episodes(1000),
            schedule: Schedule::Episodic {
                epochs: 30,
                episodes_per_epoch: 5000,
            },
            ..base
        },
        "subset-pirin" => TrainConfig {
            exploration_fraction: 0.1,
            priority_offset: 1.0,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            target_update: env_steps(10_000),
            schedule: Schedule::Stepwise {
                total_steps: 150_000,
                window: 10_000,
            },
            ..base
        },
        "subset-n70" => TrainConfig {
            exploration_fraction: 0.5,
            priority_offset: 1.0,
            batch_size: 128,
            buffer_capacity: 5120,
            target_update: env_steps(1000),
            hidden: vec![128, 64],
            schedule: Schedule::Stepwise {
                total_steps: 150_000,
                window: 10_000,
            },
            ..base
        },
        "subset-n200" => TrainConfig {
            exploration_fraction: 0.5,
            priority_offset: 1.0,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            target_update: env_steps(10_000),
            hidden: vec![256, 128, 64],
            schedule: Schedule::Stepwise {
                total_steps: 150_000,
                window: 10_000,
            },
            ..base
        },
        _ => return None,
    };
    Some(cfg)
}
