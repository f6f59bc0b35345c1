//! Experiment configuration: a single JSON file that pins everything an
//! execution needs. Unknown keys are rejected so a typo cannot silently
//! fall back to a default.

use crate::agent::{AgentKind, TrainSettings};
use crate::env::{DeepSea, Environment, GridWorld, UmbrellaChain};
use crate::error::{Error, Result};
use crate::meta::{MetricKind, OptimizeSettings, OptimizerKind};
use crate::space::{HyperparamDim, HyperparamSpace, Scale};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Environment selection with native parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvConfig {
    Gridworld {
        width: usize,
        height: usize,
        #[serde(default = "default_goal_reward")]
        goal_reward: f64,
        #[serde(default = "default_step_reward")]
        step_reward: f64,
    },
    DeepSea {
        size: usize,
        #[serde(default)]
        stochastic: bool,
    },
    Umbrella {
        chain_length: usize,
        #[serde(default = "default_distractors")]
        n_distractors: usize,
    },
}

fn default_goal_reward() -> f64 {
    1.0
}
fn default_step_reward() -> f64 {
    -0.01
}
fn default_distractors() -> usize {
    2
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match *self {
            EnvConfig::Gridworld { width, height, goal_reward, step_reward } => {
                Box::new(GridWorld::new(width, height, goal_reward, step_reward)?)
            }
            EnvConfig::DeepSea { size, stochastic } => Box::new(DeepSea::new(size, stochastic)?),
            EnvConfig::Umbrella { chain_length, n_distractors } => {
                Box::new(UmbrellaChain::new(chain_length, n_distractors)?)
            }
        })
    }
}

/// The three shipped range sets. `original` follows the published ranges;
/// the other two widen every interval for range-sensitivity experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpacePreset {
    Original,
    Broader,
    Ample,
}

fn dims(rows: &[(&str, f64, f64, Scale)]) -> HyperparamSpace {
    let dims = rows
        .iter()
        .map(|&(name, low, high, scale)| HyperparamDim::new(name, low, high, scale).unwrap())
        .collect();
    HyperparamSpace::new(dims).unwrap()
}

pub fn preset_space(agent: AgentKind, preset: SpacePreset) -> HyperparamSpace {
    use Scale::{Linear, Log10};
    match (agent, preset) {
        (AgentKind::TabularQPer, SpacePreset::Original) => dims(&[
            ("alpha_lr", 1e-5, 1e-1, Log10),
            ("gamma", 0.8, 0.9999, Linear),
            ("epsilon0", 0.1, 0.9, Linear),
            ("per_alpha", 0.4, 0.8, Linear),
            ("per_beta0", 0.4, 0.8, Linear),
        ]),
        (AgentKind::TabularQPer, SpacePreset::Broader) => dims(&[
            ("alpha_lr", 1e-6, 1e-1, Log10),
            ("gamma", 0.5, 0.9999, Linear),
            ("epsilon0", 0.05, 0.95, Linear),
            ("per_alpha", 0.2, 1.0, Linear),
            ("per_beta0", 0.2, 1.0, Linear),
        ]),
        (AgentKind::TabularQPer, SpacePreset::Ample) => dims(&[
            ("alpha_lr", 1e-7, 1e-1, Log10),
            ("gamma", 0.0001, 0.9999, Linear),
            ("epsilon0", 0.0, 1.0, Linear),
            ("per_alpha", 0.0, 1.0, Linear),
            ("per_beta0", 0.0, 1.0, Linear),
        ]),
        (AgentKind::LinearPg, SpacePreset::Original) => dims(&[
            ("alpha_lr", 1e-4, 1e-3, Log10),
            ("gamma", 0.8, 0.9999, Linear),
            ("gae_lambda", 0.85, 0.9999, Linear),
            ("entropy_coef", 0.0, 0.1, Linear),
            ("value_coef", 0.5, 1.0, Linear),
        ]),
        (AgentKind::LinearPg, SpacePreset::Broader) => dims(&[
            ("alpha_lr", 1e-5, 1e-3, Log10),
            ("gamma", 0.5, 0.9999, Linear),
            ("gae_lambda", 0.5, 0.9999, Linear),
            ("entropy_coef", 0.0, 0.15, Linear),
            ("value_coef", 0.25, 1.0, Linear),
        ]),
        (AgentKind::LinearPg, SpacePreset::Ample) => dims(&[
            ("alpha_lr", 1e-7, 1e-3, Log10),
            ("gamma", 0.0001, 0.9999, Linear),
            ("gae_lambda", 0.0, 0.9999, Linear),
            ("entropy_coef", 0.0, 0.2, Linear),
            ("value_coef", 0.1, 1.0, Linear),
        ]),
    }
}

fn default_optimizers() -> Vec<OptimizerKind> {
    vec![OptimizerKind::RloptBc, OptimizerKind::Rlopt, OptimizerKind::RandomSearch]
}
fn default_eval_every() -> usize {
    100
}
fn default_eval_episodes() -> usize {
    5
}
fn default_metric() -> MetricKind {
    MetricKind::BestEvalScore
}
fn default_m() -> usize {
    10
}
fn default_psi_size() -> usize {
    5
}
fn default_demo_subset() -> usize {
    3
}
fn default_n_init() -> usize {
    2
}
fn default_candidate_batch() -> usize {
    500
}
fn default_rs_radius() -> f64 {
    0.2
}
fn default_preset() -> SpacePreset {
    SpacePreset::Original
}
fn default_bc_enabled() -> bool {
    true
}

/// The on-disk experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvConfig,
    pub agent_kind: AgentKind,
    #[serde(default = "default_preset")]
    pub space_preset: SpacePreset,
    /// Explicit search dimensions; overrides the preset when present.
    #[serde(default)]
    pub space: Option<Vec<HyperparamDim>>,
    /// Hyperparameters fixed to a native value and excluded from the search
    /// space (one-at-a-time sensitivity runs).
    #[serde(default)]
    pub pinned: BTreeMap<String, f64>,
    #[serde(default = "default_optimizers")]
    pub optimizers: Vec<OptimizerKind>,
    pub meta_episodes: usize,
    pub training_episodes: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_eval_episodes")]
    pub eval_episodes: usize,
    #[serde(default = "default_metric")]
    pub metric: MetricKind,
    #[serde(default = "default_m")]
    pub m: usize,
    /// Candidate rollout episodes e; defaults to max(3, 2.5% of the
    /// training budget).
    #[serde(default)]
    pub rollout_episodes: Option<usize>,
    #[serde(default = "default_psi_size")]
    pub psi_size: usize,
    #[serde(default = "default_demo_subset")]
    pub demo_subset: usize,
    #[serde(default = "default_n_init")]
    pub n_init: usize,
    #[serde(default = "default_candidate_batch")]
    pub candidate_batch: usize,
    #[serde(default = "default_rs_radius")]
    pub rs_radius: f64,
    pub seeds: Vec<u64>,
    #[serde(default = "default_bc_enabled")]
    pub bc_enabled: bool,
    #[serde(default)]
    pub skip_rollouts: bool,
    /// When false (the default) wallclock columns are written as 0 so
    /// repeated runs produce byte-identical outputs.
    #[serde(default)]
    pub record_timings: bool,
}

/// A validated config with the search space materialized.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub name: String,
    pub env: EnvConfig,
    pub optimizers: Vec<OptimizerKind>,
    pub seeds: Vec<u64>,
    pub settings: OptimizeSettings,
}

impl ExperimentConfig {
    /// Derived candidate rollout budget.
    pub fn resolved_rollout_episodes(&self) -> usize {
        self.rollout_episodes
            .unwrap_or_else(|| ((self.training_episodes as f64 * 0.025).ceil() as usize).max(3))
    }

    pub fn validate(&self) -> Result<ResolvedConfig> {
        if self.name.is_empty()
            || self.name.contains(std::path::is_separator)
            || self.name.starts_with('.')
        {
            return Err(Error::Config("name must be a non-empty plain directory name".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must be non-empty".into()));
        }
        if self.optimizers.is_empty() {
            return Err(Error::Config("optimizers must be non-empty".into()));
        }
        for (field, v) in [
            ("meta_episodes", self.meta_episodes),
            ("eval_every", self.eval_every),
            ("eval_episodes", self.eval_episodes),
            ("m", self.m),
            ("psi_size", self.psi_size),
            ("n_init", self.n_init),
            ("candidate_batch", self.candidate_batch),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{field} must be >= 1")));
            }
        }
        self.env.build()?;
        let names = self.agent_kind.hyperparam_names();
        let space = match &self.space {
            Some(raw) => {
                // Re-run constructor validation: serde accepts raw fields.
                let dims = raw
                    .iter()
                    .map(|d| HyperparamDim::new(d.name.clone(), d.low, d.high, d.scale))
                    .collect::<Result<Vec<_>>>()?;
                HyperparamSpace::new(dims)?
            }
            None => {
                let full = preset_space(self.agent_kind, self.space_preset);
                let dims = full
                    .dims()
                    .iter()
                    .filter(|d| !self.pinned.contains_key(&d.name))
                    .cloned()
                    .collect();
                HyperparamSpace::new(dims)?
            }
        };
        for dim in space.dims() {
            if !names.contains(&dim.name.as_str()) {
                return Err(Error::Config(format!(
                    "dimension \"{}\" is not a hyperparameter of {:?}",
                    dim.name, self.agent_kind
                )));
            }
            if self.pinned.contains_key(&dim.name) {
                return Err(Error::Config(format!(
                    "\"{}\" is both searched and pinned",
                    dim.name
                )));
            }
            check_native_bounds(&dim.name, dim.low)?;
            check_native_bounds(&dim.name, dim.high)?;
        }
        for (name, &value) in &self.pinned {
            if !names.contains(&name.as_str()) {
                return Err(Error::Config(format!(
                    "pinned \"{name}\" is not a hyperparameter of {:?}",
                    self.agent_kind
                )));
            }
            check_native_bounds(name, value)?;
        }
        for &name in names {
            let covered =
                space.dims().iter().any(|d| d.name == name) || self.pinned.contains_key(name);
            if !covered {
                return Err(Error::Config(format!(
                    "hyperparameter \"{name}\" is neither searched nor pinned"
                )));
            }
        }
        if space.is_empty() {
            return Err(Error::Config("search space has no free dimensions".into()));
        }
        let settings = OptimizeSettings {
            agent_kind: self.agent_kind,
            metric: self.metric,
            train: TrainSettings {
                episodes: self.training_episodes,
                eval_every: self.eval_every,
                eval_episodes: self.eval_episodes,
            },
            meta_episodes: self.meta_episodes,
            n_init: self.n_init,
            m: self.m,
            rollout_episodes: self.resolved_rollout_episodes(),
            psi_size: self.psi_size,
            demo_subset: self.demo_subset,
            candidate_batch: self.candidate_batch,
            bc_enabled: self.bc_enabled,
            skip_rollouts: self.skip_rollouts,
            rs_radius: self.rs_radius,
            record_timings: self.record_timings,
            space,
            pinned: self.pinned.clone(),
        };
        settings.validate()?;
        Ok(ResolvedConfig {
            name: self.name.clone(),
            env: self.env.clone(),
            optimizers: self.optimizers.clone(),
            seeds: self.seeds.clone(),
            settings,
        })
    }
}

/// Range sanity per hyperparameter name, shared by searched and pinned
/// values. Named in errors so a bad config points at the exact field.
fn check_native_bounds(name: &str, value: f64) -> Result<()> {
    let ok = match name {
        "gamma" => (0.0..1.0).contains(&value),
        "gae_lambda" | "epsilon0" | "per_alpha" | "per_beta0" => (0.0..=1.0).contains(&value),
        "alpha_lr" => value > 0.0,
        _ => value.is_finite(),
    };
    if !ok {
        return Err(Error::Config(format!("\"{name}\" value {value} is out of range")));
    }
    Ok(())
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(config)
}

pub fn save_config(config: &ExperimentConfig, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(config)
        .map_err(|e| Error::Parse(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}
