//! Hyperparameter meta-optimization for desk-scale reinforcement learning.
//!
//! The crate tunes the hyperparameters of small RL agents (tabular
//! Q-learning with prioritized replay, linear-softmax policy gradient) by
//! sequential Bayesian optimization whose acquisition step is informed by
//! behavioral cloning from the best policy found so far, alongside plain
//! GP-EI and hypersphere random-search baselines and a deterministic
//! experiment harness.

pub mod acquisition;
pub mod agent;
pub mod baselines;
pub mod bc;
pub mod config;
pub mod env;
pub mod error;
pub mod gp;
pub mod harness;
pub mod meta;
pub mod replay;
pub mod rng;
pub mod space;

pub use agent::{AgentKind, PGAgentConfig, QAgentConfig, TrainSettings, TrainedPolicy};
pub use config::{load_config, save_config, EnvConfig, ExperimentConfig, SpacePreset};
pub use env::{Environment, EvaluationResult, Trajectory, Transition};
pub use error::{Error, Result};
pub use harness::{report, run_experiment, ExecutionRecord};
pub use meta::{
    optimize, run_comparison, MetaEpisodeRecord, MetricKind, OptimizeOutcome, OptimizeSettings,
    OptimizerKind,
};
pub use space::{HyperparamDim, HyperparamSpace, Scale, ThetaVector};
