//! Experiment configuration: a TOML document with defaults for every field,
//! plus named presets.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{self, EnvError, TabularDecPomdp};
use crate::local_models::{ModelBackend, ModelHyper};
use crate::model_reward::RewardHyper;
use crate::policy::{PolicyBackend, PolicyHyper};
use crate::rollout::RolloutConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Invalid(String),
    #[error("config: cannot parse: {0}")]
    Parse(String),
    #[error("config: unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("config: {0}")]
    Env(#[from] EnvError),
    #[error("config: {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Planned rollouts guided by the learned error predictor.
    Mag,
    /// One-step sampled rollouts; no error predictor.
    Greedy,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mag" => Ok(Self::Mag),
            "greedy" => Ok(Self::Greedy),
            other => Err(format!("unknown mode `{other}` (expected mag or greedy)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Built-in environment name; ignored when `env_file` is set.
    pub env: String,
    pub env_file: Option<PathBuf>,
    pub seed: u64,
    pub mode: Mode,
    /// Outer-loop iterations, one real episode each.
    pub episodes: usize,
    /// Policy gradient steps per iteration.
    pub g: usize,
    pub model_epochs: usize,
    pub reward_epochs: usize,
    /// Discount for policy learning and evaluation; the environment's when unset.
    pub gamma: Option<f64>,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Count evaluation episodes towards `env_steps`.
    pub count_eval_steps: bool,
    /// Capacity of the model dataset; `M * k` when unset.
    pub model_dataset_capacity: Option<usize>,
    pub env_dataset_capacity: usize,
    /// Run a bound audit every this many iterations (0 disables).
    pub audit_every: usize,
    pub rollout: RolloutConfig,
    pub model: ModelHyper,
    pub policy: PolicyHyper,
    pub reward: RewardHyper,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "coop_matrix_chain".into(),
            env_file: None,
            seed: 0,
            mode: Mode::Mag,
            episodes: 200,
            g: 8,
            model_epochs: 1,
            reward_epochs: 1,
            gamma: None,
            eval_every: 10,
            eval_episodes: 20,
            count_eval_steps: false,
            model_dataset_capacity: None,
            env_dataset_capacity: crate::dataset::DEFAULT_CAPACITY,
            audit_every: 0,
            rollout: RolloutConfig::default(),
            model: ModelHyper::default(),
            policy: PolicyHyper::default(),
            reward: RewardHyper::default(),
        }
    }
}

/// Planning settings per scenario, as `(name, L, H)`.
pub const SCENARIO_PLANNING: [(&str, usize, usize); 8] = [
    ("2s_vs_1sc", 5, 10),
    ("3s_vs_3z", 5, 10),
    ("2s3z", 5, 10),
    ("3s_vs_4z", 4, 10),
    ("3s_vs_5z", 5, 7),
    ("2c_vs_64zg", 5, 7),
    ("corridor", 4, 6),
    ("3s5z_vs_3s6z", 4, 7),
];

/// Error-predictor width and depth used with the scenario presets.
pub const SCENARIO_REWARD_HIDDEN: [usize; 4] = [256, 256, 256, 256];
/// Local-model learning rate used with the scenario presets.
pub const SCENARIO_MODEL_LR: f64 = 5e-4;
/// Rollout length used with the scenario presets; covers every `H` above.
pub const SCENARIO_ROLLOUT_K: usize = 15;

/// Names accepted by [`ExperimentConfig::preset`].
pub fn preset_names() -> Vec<String> {
    let mut names: Vec<String> = envs::PRESET_NAMES.iter().map(|s| s.to_string()).collect();
    names.extend(SCENARIO_PLANNING.iter().map(|(n, _, _)| format!("scenario-{n}")));
    names
}

impl ExperimentConfig {
    /// Desk-scale settings for a built-in environment, or a scenario preset
    /// `scenario-<name>` carrying its planning settings on the default
    /// environment.
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        if let Some(scenario) = name.strip_prefix("scenario-") {
            let &(_, l, h) = SCENARIO_PLANNING
                .iter()
                .find(|(n, _, _)| *n == scenario)
                .ok_or_else(|| ConfigError::UnknownPreset(name.into()))?;
            let mut cfg = Self::desk("coop_matrix_chain")?;
            cfg.rollout.l = l;
            cfg.rollout.h = h;
            cfg.rollout.k = SCENARIO_ROLLOUT_K;
            cfg.reward.hidden = SCENARIO_REWARD_HIDDEN.to_vec();
            cfg.model.lr = SCENARIO_MODEL_LR;
            return Ok(cfg);
        }
        Self::desk(name)
    }

    fn desk(env: &str) -> Result<Self, ConfigError> {
        if !envs::PRESET_NAMES.contains(&env) {
            return Err(ConfigError::UnknownPreset(env.into()));
        }
        let mut cfg = Self { env: env.into(), ..Self::default() };
        cfg.policy.actor_lr = 1e-2;
        cfg.policy.critic_lr = 1e-2;
        cfg.reward.samples_per_epoch = 512;
        cfg.rollout = RolloutConfig { k: 10, m: 8, h: 5, l: 5, ..RolloutConfig::default() };
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    pub fn model_dataset_capacity(&self) -> usize {
        self.model_dataset_capacity.unwrap_or(self.rollout.m * self.rollout.k)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.episodes == 0 || self.g == 0 || self.model_epochs == 0 || self.reward_epochs == 0 {
            return bad("episodes, g, model_epochs and reward_epochs must be positive".into());
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be positive".into());
        }
        if self.env_dataset_capacity == 0 || self.model_dataset_capacity() == 0 {
            return bad("dataset capacities must be positive".into());
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g < 1.0) {
                return bad(format!("gamma must lie in (0, 1), got {g}"));
            }
        }
        self.rollout.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let p = &self.policy;
        if !(p.clip > 0.0 && p.gae_lambda >= 0.0 && p.gae_lambda <= 1.0 && p.actor_lr > 0.0 && p.critic_lr > 0.0) {
            return bad("policy hyperparameters out of range".into());
        }
        if p.batch_size == 0 || (p.backend == PolicyBackend::Mlp && p.hidden.contains(&0)) {
            return bad("policy batch size and hidden widths must be positive".into());
        }
        let m = &self.model;
        if m.alpha < 0.0 || m.lr <= 0.0 || m.batch_size == 0 || (m.backend == ModelBackend::Mlp && m.hidden.contains(&0)) {
            return bad("model hyperparameters out of range".into());
        }
        let r = &self.reward;
        if r.n_draws == 0 || r.lr <= 0.0 || r.batch_size == 0 || r.hidden.contains(&0) {
            return bad("error-predictor hyperparameters out of range".into());
        }
        if !(0.0..1.0).contains(&r.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)".into());
        }
        Ok(())
    }

    pub fn load_env(&self) -> Result<TabularDecPomdp, ConfigError> {
        match &self.env_file {
            Some(path) => {
                let text =
                    std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
                Ok(envs::parse_env_file(&text)?)
            }
            None => Ok(envs::preset(&self.env)?),
        }
    }
}

/// Checks that every scenario preset carries its planning settings, the
/// error-predictor architecture and the model learning rate, and that the
/// resulting configs validate.
pub fn check_scenario_presets() -> Result<(), String> {
    for &(name, l, h) in SCENARIO_PLANNING.iter() {
        let cfg = ExperimentConfig::preset(&format!("scenario-{name}")).map_err(|e| e.to_string())?;
        if cfg.rollout.l != l || cfg.rollout.h != h {
            return Err(format!("{name}: expected (L, H) = ({l}, {h}), got ({}, {})", cfg.rollout.l, cfg.rollout.h));
        }
        if cfg.reward.hidden != SCENARIO_REWARD_HIDDEN {
            return Err(format!("{name}: error predictor hidden layers {:?}", cfg.reward.hidden));
        }
        if cfg.model.lr != SCENARIO_MODEL_LR {
            return Err(format!("{name}: model learning rate {}", cfg.model.lr));
        }
        cfg.validate().map_err(|e| format!("{name}: {e}"))?;
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).map_err(|e| format!("{name}: {e}"))?;
        if back != cfg {
            return Err(format!("{name}: preset does not survive a TOML round trip"));
        }
    }
    Ok(())
}
