use std::path::{Path, PathBuf};

use jacobi_core::approximator::{ModelConfig, PolicyHead};
use jacobi_core::env::RewardConfig;
use jacobi_core::mcts::SearchConfig;
use jacobi_core::selfplay::{GameSettings, TrainRoundConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mdp,
    Smdp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub out_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("runs/default"),
            checkpoint: None,
        }
    }
}

/// Agent used by `bench` when no checkpoint is given.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    /// Run a network-free search agent alongside the baselines.
    pub search_only: bool,
    pub search: SearchConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            search_only: false,
            search: SearchConfig {
                c_puct: 0.0,
                num_simulations: 2000,
                temperature: 0.0,
                ..SearchConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub mode: Mode,
    pub sizes: Vec<usize>,
    pub seed: u64,
    /// Convergence threshold as a multiple of `‖M⁰‖_F`.
    pub threshold_rel: f64,
    /// Matrices generated per size.
    pub count: usize,
    pub train_fraction: f64,
    pub rounds: usize,
    pub max_depth: Option<usize>,
    pub max_sweeps: Option<usize>,
    pub heavy_rollout: bool,
    pub search: SearchConfig,
    pub rewards: RewardConfig,
    pub training: TrainRoundConfig,
    pub model: ModelConfig,
    pub agent: AgentConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mdp,
            sizes: vec![4],
            seed: 0,
            threshold_rel: 1e-8,
            count: 1000,
            train_fraction: 0.75,
            rounds: 1,
            max_depth: None,
            max_sweeps: None,
            heavy_rollout: false,
            search: SearchConfig::default(),
            rewards: RewardConfig::default(),
            training: TrainRoundConfig::default(),
            model: ModelConfig::default(),
            agent: AgentConfig::default(),
            paths: Paths::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| ConfigError(format!("{}: {e}", p.display())))
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sizes.is_empty() || self.sizes.iter().any(|&n| n < 2) {
            return Err(ConfigError(
                "sizes must be nonempty and every size >= 2".into(),
            ));
        }
        if !(self.threshold_rel > 0.0) {
            return Err(ConfigError("threshold_rel must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(ConfigError("train_fraction must lie in [0, 1]".into()));
        }
        let wrap = |e: jacobi_core::Error| ConfigError(e.to_string());
        self.search.validate().map_err(wrap)?;
        self.rewards.validate().map_err(wrap)?;
        self.training.validate().map_err(wrap)?;
        self.model.validate().map_err(wrap)?;
        Ok(())
    }

    pub fn settings(&self) -> GameSettings {
        GameSettings {
            threshold_rel: self.threshold_rel,
            max_depth: self.max_depth,
            max_sweeps: self.max_sweeps,
            rewards: self.rewards,
            heavy_rollout: self.heavy_rollout,
            n_max: self.model_config().n_max,
        }
    }

    /// Model configuration with the head implied by the mode and `n_max` covering every
    /// configured size.
    pub fn model_config(&self) -> ModelConfig {
        let largest = self.sizes.iter().copied().max().unwrap_or(2);
        ModelConfig {
            n_max: self.model.n_max.max(largest),
            head: match self.mode {
                Mode::Mdp => PolicyHead::Pivot,
                Mode::Smdp => PolicyHead::Sweep,
            },
            ..self.model
        }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}
