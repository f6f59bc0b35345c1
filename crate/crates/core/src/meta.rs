//! The meta-optimization loop: demonstration-informed expected-improvement
//! acquisition and the sequential hyperparameter search it drives, plus the
//! objective metrics and cross-execution aggregation.
//!
//! One engine runs all three optimizers. Every random draw comes from a
//! named substream keyed by meta-episode index, so disabling a component
//! (cloning, candidate rollouts) cannot perturb the streams of the others —
//! that is what makes the degeneracy check against the plain-BO baseline a
//! byte-level equality.

use crate::acquisition::{expected_improvement, lhs_sample, top_m_candidates, Candidate};
use crate::agent::{
    anneal_fraction, collect_rollout, hyperparam_values, pg_config_from, pg_update,
    q_config_from, run_meta_episode, AgentKind, PGAgent, QAgent, TrainSettings, TrainedPolicy,
};
use crate::baselines::{random_search_step, RandomSearchState};
use crate::bc::{pretrain, record_demonstrations, sample_demos, BcSettings, DemonstrationSet};
use crate::env::{Environment, EvaluationResult, Trajectory};
use crate::error::{Error, Result};
use crate::gp::{fit, GPModel, ObservationDataset};
use crate::rng::substream;
use crate::space::{HyperparamSpace, ThetaVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// How a meta-episode's evaluation traces collapse to the scalar y.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Mean over all evaluation episode returns.
    MeanEvalReward,
    /// Maximum single evaluation episode return.
    MaxEvalReward,
    /// Maximum over evaluations of the per-evaluation mean.
    BestEvalScore,
}

pub fn compute_metric(kind: MetricKind, traces: &[EvaluationResult]) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::Domain("compute_metric needs >= 1 evaluation".into()));
    }
    Ok(match kind {
        MetricKind::MeanEvalReward => {
            let total: f64 = traces.iter().flat_map(|t| &t.episode_returns).sum();
            let count: usize = traces.iter().map(|t| t.episode_returns.len()).sum();
            total / count as f64
        }
        MetricKind::MaxEvalReward => {
            traces.iter().map(|t| t.max).fold(f64::NEG_INFINITY, f64::max)
        }
        MetricKind::BestEvalScore => {
            traces.iter().map(|t| t.mean).fold(f64::NEG_INFINITY, f64::max)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Demonstration-informed BO (the full method).
    RloptBc,
    /// Plain GP-EI BO.
    Rlopt,
    /// Hypersphere random search.
    RandomSearch,
}

impl OptimizerKind {
    pub fn dir_name(&self) -> &'static str {
        match self {
            OptimizerKind::RloptBc => "rlopt_bc",
            OptimizerKind::Rlopt => "rlopt",
            OptimizerKind::RandomSearch => "random_search",
        }
    }
}

/// One row of an execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaEpisodeRecord {
    pub index: usize,
    pub theta: ThetaVector,
    pub y: f64,
    pub best_so_far: f64,
    pub is_new_max: bool,
    pub diverged: bool,
    pub train_steps: u64,
    pub rollout_steps: u64,
    pub wallclock_ms: u64,
    pub seed: u64,
}

/// Everything the engine needs besides the environment and seed.
#[derive(Debug, Clone)]
pub struct OptimizeSettings {
    pub agent_kind: AgentKind,
    pub metric: MetricKind,
    pub train: TrainSettings,
    pub meta_episodes: usize,
    /// LHS bootstrap points before the model/acquisition path activates.
    pub n_init: usize,
    /// Top candidates re-scored by cloning rollouts.
    pub m: usize,
    /// Rollout episodes e per candidate.
    pub rollout_episodes: usize,
    /// Demonstration set size |psi|.
    pub psi_size: usize,
    /// Demonstrations sampled per cloning call (i).
    pub demo_subset: usize,
    pub candidate_batch: usize,
    pub bc_enabled: bool,
    pub skip_rollouts: bool,
    pub rs_radius: f64,
    pub record_timings: bool,
    pub space: HyperparamSpace,
    pub pinned: BTreeMap<String, f64>,
}

impl OptimizeSettings {
    pub fn validate(&self) -> Result<()> {
        if self.meta_episodes == 0 {
            return Err(Error::Config("meta_episodes must be >= 1".into()));
        }
        if self.n_init == 0 || self.m == 0 || self.candidate_batch < self.m {
            return Err(Error::Config(
                "n_init and m must be >= 1 and candidate_batch >= m".into(),
            ));
        }
        if self.m > 1 && !self.skip_rollouts && self.rollout_episodes < 2 {
            return Err(Error::Config(
                "rollout_episodes must be >= 2 (the empirical std needs two samples)".into(),
            ));
        }
        Ok(())
    }
}

/// The acquisition's pick plus its simulator cost.
#[derive(Debug, Clone)]
pub struct AcquisitionChoice {
    pub theta: ThetaVector,
    /// Index into the step-one top-m ranking.
    pub rank: usize,
    pub rollout_steps: u64,
}

/// Lowest index among exact-maximum entries; candidates arrive in step-one
/// EI rank order, so ties fall back to that ranking.
fn argmax_by_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Trains one fresh candidate agent (optionally cloned from demos) for `e`
/// episodes and returns the per-episode returns, a divergence flag, and the
/// environment steps consumed.
fn candidate_rollout(
    settings: &OptimizeSettings,
    theta: &ThetaVector,
    env: &mut dyn Environment,
    demos: &[Trajectory],
    master_seed: u64,
    tag: &str,
) -> Result<(Vec<f64>, bool, u64)> {
    let e = settings.rollout_episodes;
    let values = hyperparam_values(&settings.space, theta, &settings.pinned)?;
    let mut agent_rng = substream(master_seed, &format!("{tag}/agent"));
    let mut env_rng = substream(master_seed, &format!("{tag}/env"));
    let mut returns = Vec::with_capacity(e);
    let mut steps = 0u64;
    match settings.agent_kind {
        AgentKind::TabularQPer => {
            let config = q_config_from(&values)?;
            let mut agent = QAgent::new(config, env.state_count(), env.action_count())?;
            if !demos.is_empty() {
                let mut policy = TrainedPolicy::Tabular(agent);
                pretrain(&mut policy, demos, env, &BcSettings::default())?;
                agent = match policy {
                    TrainedPolicy::Tabular(a) => a,
                    _ => unreachable!(),
                };
            }
            for ep in 0..e {
                let frac = anneal_fraction(ep, e);
                let epsilon = agent.config.epsilon0 * (1.0 - frac);
                let beta = agent.config.per_beta0 + (1.0 - agent.config.per_beta0) * frac;
                let (s, r) =
                    agent.train_episode(env, epsilon, beta, &mut agent_rng, &mut env_rng)?;
                steps += s as u64;
                returns.push(r);
                if !agent.is_finite() {
                    return Ok((returns, true, steps));
                }
            }
        }
        AgentKind::LinearPg => {
            let config = pg_config_from(&values)?;
            let mut agent = PGAgent::new(config, env.feature_dim(), env.action_count())?;
            if !demos.is_empty() {
                let mut policy = TrainedPolicy::Linear(agent);
                pretrain(&mut policy, demos, env, &BcSettings::default())?;
                agent = match policy {
                    TrainedPolicy::Linear(a) => a,
                    _ => unreachable!(),
                };
            }
            for _ in 0..e {
                let rollout = collect_rollout(&agent, env, &mut agent_rng, &mut env_rng);
                steps += rollout.len() as u64;
                returns.push(rollout.iter().map(|s| s.reward).sum());
                match pg_update(&agent, &[rollout]) {
                    Ok(next) => agent = next,
                    Err(Error::Numerical(_)) => return Ok((returns, true, steps)),
                    Err(e) => return Err(e),
                }
            }
        }
    }
    Ok((returns, false, steps))
}

/// Demonstration-informed acquisition: score a fresh candidate batch by
/// standard EI, take the top m, clone one fresh agent per candidate from a
/// shared demo subset, run each briefly, and re-score candidates by the EI
/// of their empirical rollout statistics. Ties keep step-one EI rank order.
#[allow(clippy::too_many_arguments)]
pub fn ei_bc_acquisition(
    model: &GPModel,
    f_star: f64,
    psi: &DemonstrationSet,
    settings: &OptimizeSettings,
    env: &mut dyn Environment,
    master_seed: u64,
    meta_index: usize,
) -> Result<AcquisitionChoice> {
    let mut acq_rng = substream(master_seed, &format!("acq/{meta_index}"));
    let batch = lhs_sample(&settings.space, settings.candidate_batch, &mut acq_rng)?;
    let top: Vec<Candidate> =
        top_m_candidates(model, &settings.space, &batch, f_star, settings.m)?;
    if settings.m == 1 || settings.skip_rollouts {
        return Ok(AcquisitionChoice { theta: top[0].theta.clone(), rank: 0, rollout_steps: 0 });
    }
    let demos = if settings.bc_enabled && !psi.is_empty() {
        let mut demo_rng = substream(master_seed, &format!("acqdemo/{meta_index}"));
        sample_demos(psi, settings.demo_subset, &mut demo_rng)
    } else {
        Vec::new()
    };
    let mut eis = Vec::with_capacity(top.len());
    let mut rollout_steps = 0u64;
    for (p, candidate) in top.iter().enumerate() {
        let tag = format!("roll/{meta_index}/{p}");
        let (returns, diverged, steps) =
            candidate_rollout(settings, &candidate.theta, env, &demos, master_seed, &tag)?;
        rollout_steps += steps;
        if diverged || returns.len() < 2 {
            eis.push(0.0);
            continue;
        }
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
        eis.push(expected_improvement(mean, var.sqrt(), f_star));
    }
    let rank = argmax_by_first(&eis);
    Ok(AcquisitionChoice { theta: top[rank].theta.clone(), rank, rollout_steps })
}

#[derive(Debug)]
pub struct OptimizeOutcome {
    pub best_theta: ThetaVector,
    pub best_y: f64,
    pub records: Vec<MetaEpisodeRecord>,
    pub dataset: ObservationDataset,
    pub psi: DemonstrationSet,
}

/// The sequential meta-loop shared by all three optimizers: propose a
/// hyperparameter vector, train a fresh agent on the full budget, score it,
/// maintain the incumbent and (for the cloning optimizer) the demonstration
/// set, and grow the observation dataset.
pub fn optimize(
    kind: OptimizerKind,
    settings: &OptimizeSettings,
    env: &mut dyn Environment,
    master_seed: u64,
) -> Result<OptimizeOutcome> {
    settings.validate()?;
    let dim = settings.space.len();
    let mut dataset = ObservationDataset::new();
    let mut model = GPModel::prior(dim);
    let mut psi = DemonstrationSet::empty();
    let mut rs_state = RandomSearchState::new(settings.rs_radius)?;
    let mut best_y = f64::NEG_INFINITY;
    let mut best_theta: Option<ThetaVector> = None;
    let mut records = Vec::with_capacity(settings.meta_episodes);
    for k in 0..settings.meta_episodes {
        let started = std::time::Instant::now();
        let (theta, rollout_steps) = match kind {
            OptimizerKind::RandomSearch => {
                let mut rng = substream(master_seed, &format!("rs/{k}"));
                (random_search_step(&rs_state, &settings.space, &mut rng)?, 0)
            }
            _ if dataset.len() < settings.n_init => {
                let mut rng = substream(master_seed, &format!("boot/{k}"));
                (lhs_sample(&settings.space, 1, &mut rng)?.remove(0), 0)
            }
            OptimizerKind::Rlopt => {
                let mut rng = substream(master_seed, &format!("acq/{k}"));
                let theta = crate::baselines::plain_bo_step(
                    &model,
                    &settings.space,
                    best_y,
                    settings.candidate_batch,
                    &mut rng,
                )?;
                (theta, 0)
            }
            OptimizerKind::RloptBc => {
                let choice =
                    ei_bc_acquisition(&model, best_y, &psi, settings, env, master_seed, k)?;
                (choice.theta, choice.rollout_steps)
            }
        };
        let demos = if kind == OptimizerKind::RloptBc && settings.bc_enabled && !psi.is_empty() {
            let mut rng = substream(master_seed, &format!("subset/{k}"));
            sample_demos(&psi, settings.demo_subset, &mut rng)
        } else {
            Vec::new()
        };
        let (y, diverged, train_steps, policy) = match run_meta_episode(
            settings.agent_kind,
            &theta,
            &settings.space,
            &settings.pinned,
            env,
            &settings.train,
            settings.metric,
            &demos,
            master_seed,
            &format!("meta/{k}"),
        ) {
            Ok(outcome) => (outcome.y, outcome.diverged, outcome.train_steps, Some(outcome.policy)),
            // Any failure records the floor score and the loop continues.
            Err(_) => (env.min_return(), true, 0, None),
        };
        let is_new_max = y > best_y;
        if is_new_max {
            best_y = y;
            best_theta = Some(theta.clone());
            rs_state.update_center(settings.space.normalize(&theta)?, y);
            if kind == OptimizerKind::RloptBc && settings.bc_enabled {
                if let Some(ref policy) = policy {
                    let mut rng = substream(master_seed, &format!("demos/{k}"));
                    psi = record_demonstrations(policy, env, settings.psi_size, k, y, &mut rng)?;
                }
            }
        }
        dataset.push(settings.space.normalize(&theta)?, y)?;
        if kind != OptimizerKind::RandomSearch && dataset.len() >= settings.n_init {
            model = fit(&dataset, dim)?;
        }
        let wallclock_ms =
            if settings.record_timings { started.elapsed().as_millis() as u64 } else { 0 };
        records.push(MetaEpisodeRecord {
            index: k,
            theta,
            y,
            best_so_far: best_y,
            is_new_max,
            diverged,
            train_steps,
            rollout_steps,
            wallclock_ms,
            seed: master_seed,
        });
    }
    Ok(OptimizeOutcome {
        best_theta: best_theta.expect("meta_episodes >= 1 guarantees a record"),
        best_y,
        records,
        dataset,
        psi,
    })
}

/// One aggregate row of the cross-execution comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub optimizer: String,
    pub meta_episode: usize,
    pub mean_best: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_reward: f64,
}

fn mean_and_ci(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1.0);
    (mean, 1.96 * var.sqrt() / k.sqrt())
}

/// Per-meta-episode aggregates over executions: mean best-so-far with a 95%
/// normal-approximation confidence interval, and mean per-episode reward.
pub fn run_comparison(
    groups: &[(String, Vec<Vec<MetaEpisodeRecord>>)],
) -> Result<Vec<ComparisonRow>> {
    if groups.is_empty() {
        return Err(Error::Aggregation("run_comparison needs >= 1 optimizer".into()));
    }
    let mut rows = Vec::new();
    for (name, executions) in groups {
        if executions.is_empty() {
            return Err(Error::Aggregation(format!("optimizer {name} has no executions")));
        }
        let n = executions[0].len();
        for exec in executions {
            if exec.len() != n {
                return Err(Error::Aggregation(format!(
                    "optimizer {name}: execution lengths differ ({} vs {n})",
                    exec.len()
                )));
            }
        }
        for idx in 0..n {
            let bests: Vec<f64> = executions.iter().map(|e| e[idx].best_so_far).collect();
            let rewards: Vec<f64> = executions.iter().map(|e| e[idx].y).collect();
            let (mean_best, half) = mean_and_ci(&bests);
            let (mean_reward, _) = mean_and_ci(&rewards);
            rows.push(ComparisonRow {
                optimizer: name.clone(),
                meta_episode: idx,
                mean_best,
                ci_low: mean_best - half,
                ci_high: mean_best + half,
                mean_reward,
            });
        }
    }
    Ok(rows)
}
