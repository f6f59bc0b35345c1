//! Tunable learners and the meta-episode runner that maps a hyperparameter
//! vector to a scalar score.

pub mod policy_grad;
pub mod qlearn;

pub use policy_grad::{
    collect_rollout, gae_advantages, pg_objective, pg_update, train_pg_agent, PGAgent,
    PGAgentConfig, PGTrainOutcome, Rollout, RolloutStep,
};
pub use qlearn::{
    anneal_fraction, epsilon_greedy, q_update, train_q_agent, QAgent, QAgentConfig,
    QTrainOutcome, OPTIMISTIC_INIT, REPLAY_BATCH, REPLAY_CAPACITY, REPLAY_WARMUP_STEPS,
};

use crate::env::{Environment, EvaluationResult, Observation, Trajectory};
use crate::error::{Error, Result};
use crate::meta::MetricKind;
use crate::rng::substream;
use crate::space::{HyperparamSpace, ThetaVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    TabularQPer,
    LinearPg,
}

impl AgentKind {
    /// Hyperparameter names this agent expects, in canonical order.
    pub fn hyperparam_names(&self) -> &'static [&'static str] {
        match self {
            AgentKind::TabularQPer => {
                &["alpha_lr", "gamma", "epsilon0", "per_alpha", "per_beta0"]
            }
            AgentKind::LinearPg => {
                &["alpha_lr", "gamma", "gae_lambda", "entropy_coef", "value_coef"]
            }
        }
    }
}

/// Resolves a point in the active search space plus any pinned dimensions
/// into a full name -> native-value map.
pub fn hyperparam_values(
    space: &HyperparamSpace,
    theta: &ThetaVector,
    pinned: &BTreeMap<String, f64>,
) -> Result<BTreeMap<String, f64>> {
    if theta.0.len() != space.len() {
        return Err(Error::Shape { expected: space.len(), got: theta.0.len() });
    }
    let mut values = pinned.clone();
    for (dim, &v) in space.dims().iter().zip(&theta.0) {
        values.insert(dim.name.clone(), v);
    }
    Ok(values)
}

fn require(values: &BTreeMap<String, f64>, name: &str) -> Result<f64> {
    values
        .get(name)
        .copied()
        .ok_or_else(|| Error::Config(format!("missing hyperparameter \"{name}\"")))
}

pub fn q_config_from(values: &BTreeMap<String, f64>) -> Result<QAgentConfig> {
    Ok(QAgentConfig {
        alpha_lr: require(values, "alpha_lr")?,
        gamma: require(values, "gamma")?,
        epsilon0: require(values, "epsilon0")?,
        per_alpha: require(values, "per_alpha")?,
        per_beta0: require(values, "per_beta0")?,
    })
}

pub fn pg_config_from(values: &BTreeMap<String, f64>) -> Result<PGAgentConfig> {
    Ok(PGAgentConfig {
        alpha_lr: require(values, "alpha_lr")?,
        gamma: require(values, "gamma")?,
        gae_lambda: require(values, "gae_lambda")?,
        entropy_coef: require(values, "entropy_coef")?,
        value_coef: require(values, "value_coef")?,
    })
}

/// A trained policy of either agent family, usable for greedy evaluation and
/// demonstration recording.
#[derive(Debug, Clone)]
pub enum TrainedPolicy {
    Tabular(QAgent),
    Linear(PGAgent),
}

impl TrainedPolicy {
    pub fn act_greedy(&self, obs: &Observation) -> usize {
        match self {
            TrainedPolicy::Tabular(agent) => agent.greedy_action(obs.id),
            TrainedPolicy::Linear(agent) => agent.greedy_action(&obs.features),
        }
    }
}

/// Training-loop shape of one meta-episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    /// Training episodes (the meta-episode budget).
    pub episodes: usize,
    /// Greedy evaluation every this many training episodes.
    pub eval_every: usize,
    /// Episodes per evaluation.
    pub eval_episodes: usize,
}

#[derive(Debug)]
pub struct MetaRunOutcome {
    pub y: f64,
    pub diverged: bool,
    pub train_steps: u64,
    pub traces: Vec<EvaluationResult>,
    pub policy: TrainedPolicy,
}

/// Instantiates a fresh agent from the hyperparameter vector, optionally
/// pretrains it from demonstrations, trains for the budget with periodic
/// greedy evaluation, and scores the run. Deterministic in (theta, seed,
/// stream tag): the agent, environment, and evaluation streams are derived
/// independently from the tag.
#[allow(clippy::too_many_arguments)]
pub fn run_meta_episode(
    kind: AgentKind,
    theta: &ThetaVector,
    space: &HyperparamSpace,
    pinned: &BTreeMap<String, f64>,
    env: &mut dyn Environment,
    settings: &TrainSettings,
    metric: MetricKind,
    demos: &[Trajectory],
    master_seed: u64,
    stream_tag: &str,
) -> Result<MetaRunOutcome> {
    if settings.eval_every == 0 || settings.eval_episodes == 0 {
        return Err(Error::Config("eval_every and eval_episodes must be >= 1".into()));
    }
    let values = hyperparam_values(space, theta, pinned)?;
    let mut agent_rng = substream(master_seed, &format!("{stream_tag}/agent"));
    let mut env_rng = substream(master_seed, &format!("{stream_tag}/env"));
    let mut eval_rng = substream(master_seed, &format!("{stream_tag}/eval"));
    match kind {
        AgentKind::TabularQPer => {
            let config = q_config_from(&values)?;
            let mut agent = QAgent::new(config, env.state_count(), env.action_count())?;
            if !demos.is_empty() {
                let mut policy = TrainedPolicy::Tabular(agent);
                crate::bc::pretrain(&mut policy, demos, env, &crate::bc::BcSettings::default())?;
                agent = match policy {
                    TrainedPolicy::Tabular(a) => a,
                    _ => unreachable!(),
                };
            }
            let outcome = train_q_agent(
                &mut agent,
                env,
                settings.episodes,
                settings.eval_every,
                settings.eval_episodes,
                &mut agent_rng,
                &mut env_rng,
                &mut eval_rng,
            )?;
            let (y, diverged) = if outcome.diverged {
                (env.min_return(), true)
            } else {
                (crate::meta::compute_metric(metric, &outcome.traces)?, false)
            };
            Ok(MetaRunOutcome {
                y,
                diverged,
                train_steps: outcome.train_steps,
                traces: outcome.traces,
                policy: TrainedPolicy::Tabular(agent),
            })
        }
        AgentKind::LinearPg => {
            let config = pg_config_from(&values)?;
            let mut agent = PGAgent::new(config, env.feature_dim(), env.action_count())?;
            if !demos.is_empty() {
                let mut policy = TrainedPolicy::Linear(agent);
                crate::bc::pretrain(&mut policy, demos, env, &crate::bc::BcSettings::default())?;
                agent = match policy {
                    TrainedPolicy::Linear(a) => a,
                    _ => unreachable!(),
                };
            }
            let outcome = train_pg_agent(
                &mut agent,
                env,
                settings.episodes,
                settings.eval_every,
                settings.eval_episodes,
                &mut agent_rng,
                &mut env_rng,
                &mut eval_rng,
            )?;
            let (y, diverged) = if outcome.diverged {
                (env.min_return(), true)
            } else {
                (crate::meta::compute_metric(metric, &outcome.traces)?, false)
            };
            Ok(MetaRunOutcome {
                y,
                diverged,
                train_steps: outcome.train_steps,
                traces: outcome.traces,
                policy: TrainedPolicy::Linear(agent),
            })
        }
    }
}
