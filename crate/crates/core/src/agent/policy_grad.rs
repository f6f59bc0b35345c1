//! Linear-softmax policy gradient with GAE, an entropy bonus, and linear
//! value regression.
//!
//! The update ascends a single scalar objective
//! `J = (1/T) sum_t [log pi(a_t|x_t) A_t + c_H H(pi(.|x_t)) - c_V (V(x_t) - R_t)^2]`
//! where `T` is the total step count across the batch of trajectories and
//! the advantages `A_t` and return targets `R_t` are frozen constants. The
//! closed forms keep the analytic gradient checkable against finite
//! differences of `pg_objective`.

use crate::env::{Environment, EvaluationResult, Observation};
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// The tuned hyperparameter vector of the linear agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PGAgentConfig {
    pub alpha_lr: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
}

impl PGAgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Domain(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(self.gae_lambda >= 0.0 && self.gae_lambda <= 1.0) {
            return Err(Error::Domain("gae_lambda must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One on-policy step: the feature views needed by the update, not state ids.
#[derive(Debug, Clone)]
pub struct RolloutStep {
    pub features: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_features: Vec<f64>,
    pub done: bool,
}

pub type Rollout = Vec<RolloutStep>;

/// Generalized advantage estimation. `delta_t = r_t + gamma V(s_{t+1})(1 -
/// done_t) - V(s_t)`; the backward accumulator resets at episode boundaries.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>> {
    let n = rewards.len();
    for len in [values.len(), next_values.len(), dones.len()] {
        if len != n {
            return Err(Error::Shape { expected: n, got: len });
        }
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("gamma must be in [0, 1), got {gamma}")));
    }
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_values[t] * not_done - values[t];
        acc = delta + gamma * lambda * not_done * acc;
        adv[t] = acc;
    }
    Ok(adv)
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

#[derive(Debug, Clone)]
pub struct PGAgent {
    pub config: PGAgentConfig,
    /// Policy weights, `[action][feature]`; logits are `theta_a . x`.
    pub policy_w: Vec<Vec<f64>>,
    /// Value weights; `V(x) = phi . x`.
    pub value_w: Vec<f64>,
}

impl PGAgent {
    pub fn new(config: PGAgentConfig, feature_dim: usize, action_count: usize) -> Result<Self> {
        config.validate()?;
        if feature_dim == 0 || action_count == 0 {
            return Err(Error::Config("agent needs >= 1 feature and action".into()));
        }
        Ok(Self {
            config,
            policy_w: vec![vec![0.0; feature_dim]; action_count],
            value_w: vec![0.0; feature_dim],
        })
    }

    pub fn action_count(&self) -> usize {
        self.policy_w.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.value_w.len()
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.policy_w.iter().map(|w| w.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    pub fn action_probs(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.value_w.iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn sample_action(&self, x: &[f64], rng: &mut ChaCha8Rng) -> usize {
        let probs = self.action_probs(x);
        let target: f64 = rng.random();
        let mut cum = 0.0;
        for (a, &p) in probs.iter().enumerate() {
            cum += p;
            if target < cum {
                return a;
            }
        }
        probs.len() - 1
    }

    pub fn greedy_action(&self, x: &[f64]) -> usize {
        super::qlearn::argmax(&self.logits(x))
    }

    pub fn is_finite(&self) -> bool {
        self.policy_w.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.value_w.iter().all(|v| v.is_finite())
    }
}

/// Per-step targets frozen before the gradient step: GAE advantages and
/// discounted return-to-go value targets.
fn rollout_targets(agent: &PGAgent, rollouts: &[Rollout]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut out = Vec::with_capacity(rollouts.len());
    for rollout in rollouts {
        let rewards: Vec<f64> = rollout.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = rollout.iter().map(|s| agent.value(&s.features)).collect();
        let next_values: Vec<f64> =
            rollout.iter().map(|s| agent.value(&s.next_features)).collect();
        let dones: Vec<bool> = rollout.iter().map(|s| s.done).collect();
        let adv = gae_advantages(
            &rewards,
            &values,
            &next_values,
            &dones,
            agent.config.gamma,
            agent.config.gae_lambda,
        )?;
        // Discounted return-to-go within the episode.
        let mut returns = vec![0.0; rewards.len()];
        let mut acc = 0.0;
        for t in (0..rewards.len()).rev() {
            if dones[t] {
                acc = 0.0;
            }
            acc = rewards[t] + agent.config.gamma * acc;
            returns[t] = acc;
        }
        out.push((adv, returns));
    }
    Ok(out)
}

/// The scalar objective `J` for the given parameters and frozen targets.
/// Exposed so the gradient in `pg_update` can be checked by perturbation.
pub fn pg_objective(
    agent: &PGAgent,
    rollouts: &[Rollout],
    targets: &[(Vec<f64>, Vec<f64>)],
) -> f64 {
    let total: usize = rollouts.iter().map(|r| r.len()).sum();
    let mut j = 0.0;
    for (rollout, (adv, returns)) in rollouts.iter().zip(targets) {
        for (t, step) in rollout.iter().enumerate() {
            let probs = agent.action_probs(&step.features);
            let v = agent.value(&step.features);
            let err = v - returns[t];
            j += probs[step.action].ln() * adv[t] + agent.config.entropy_coef * entropy(&probs)
                - agent.config.value_coef * err * err;
        }
    }
    j / total as f64
}

/// Computes the frozen targets for a batch of trajectories under the current
/// parameters, then takes one gradient-ascent step on `pg_objective`.
pub fn pg_update(agent: &PGAgent, rollouts: &[Rollout]) -> Result<PGAgent> {
    if rollouts.is_empty() || rollouts.iter().all(|r| r.is_empty()) {
        return Err(Error::EmptyBatch);
    }
    let targets = rollout_targets(agent, rollouts)?;
    let total: usize = rollouts.iter().map(|r| r.len()).sum();
    let actions = agent.action_count();
    let dim = agent.feature_dim();
    let mut grad_theta = vec![vec![0.0; dim]; actions];
    let mut grad_phi = vec![0.0; dim];
    for (rollout, (adv, returns)) in rollouts.iter().zip(&targets) {
        for (t, step) in rollout.iter().enumerate() {
            let probs = agent.action_probs(&step.features);
            let h = entropy(&probs);
            let v = agent.value(&step.features);
            for a in 0..actions {
                // d log pi(a_t)/dz_a = 1[a = a_t] - pi_a; dH/dz_a =
                // -pi_a (log pi_a + H). Chain through z_a = theta_a . x.
                let indicator = if a == step.action { 1.0 } else { 0.0 };
                let dlogp = indicator - probs[a];
                let dent = -probs[a] * (probs[a].ln() + h);
                let coef = adv[t] * dlogp + agent.config.entropy_coef * dent;
                for (g, &x) in grad_theta[a].iter_mut().zip(&step.features) {
                    *g += coef * x;
                }
            }
            let verr = 2.0 * agent.config.value_coef * (v - returns[t]);
            for (g, &x) in grad_phi.iter_mut().zip(&step.features) {
                *g -= verr * x;
            }
        }
    }
    let scale = agent.config.alpha_lr / total as f64;
    let mut next = agent.clone();
    for (row, grad) in next.policy_w.iter_mut().zip(&grad_theta) {
        for (w, &g) in row.iter_mut().zip(grad) {
            *w += scale * g;
        }
    }
    for (w, &g) in next.value_w.iter_mut().zip(&grad_phi) {
        *w += scale * g;
    }
    if !next.is_finite() {
        return Err(Error::Numerical("policy-gradient update produced non-finite weights".into()));
    }
    Ok(next)
}

/// Collects one on-policy episode as a feature-level rollout.
pub fn collect_rollout(
    agent: &PGAgent,
    env: &mut dyn Environment,
    agent_rng: &mut ChaCha8Rng,
    env_rng: &mut ChaCha8Rng,
) -> Rollout {
    let mut obs = env.reset(env_rng);
    let mut rollout = Vec::new();
    for _ in 0..env.step_cap() {
        let action = agent.sample_action(&obs.features, agent_rng);
        let (next, reward, done) = env.step(action, env_rng);
        rollout.push(RolloutStep {
            features: obs.features.clone(),
            action,
            reward,
            next_features: next.features.clone(),
            done,
        });
        obs = next;
        if done {
            break;
        }
    }
    rollout
}

pub struct PGTrainOutcome {
    pub traces: Vec<EvaluationResult>,
    pub train_steps: u64,
    pub diverged: bool,
}

/// Full training run: one on-policy episode per update, periodic greedy
/// evaluation.
pub fn train_pg_agent(
    agent: &mut PGAgent,
    env: &mut dyn Environment,
    episodes: usize,
    eval_every: usize,
    eval_episodes: usize,
    agent_rng: &mut ChaCha8Rng,
    env_rng: &mut ChaCha8Rng,
    eval_rng: &mut ChaCha8Rng,
) -> Result<PGTrainOutcome> {
    let mut traces = Vec::new();
    let mut train_steps = 0u64;
    let mut diverged = false;
    for ep in 0..episodes {
        let rollout = collect_rollout(agent, env, agent_rng, env_rng);
        train_steps += rollout.len() as u64;
        match pg_update(agent, &[rollout]) {
            Ok(next) => *agent = next,
            Err(Error::Numerical(_)) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        if (ep + 1) % eval_every == 0 {
            traces.push(evaluate_pg(agent, env, eval_episodes, eval_rng)?);
        }
    }
    if !diverged && (traces.is_empty() || episodes % eval_every != 0) {
        traces.push(evaluate_pg(agent, env, eval_episodes, eval_rng)?);
    }
    Ok(PGTrainOutcome { traces, train_steps, diverged })
}

fn evaluate_pg(
    agent: &PGAgent,
    env: &mut dyn Environment,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EvaluationResult> {
    let snapshot = agent.clone();
    crate::env::evaluate_policy(
        env,
        &|obs: &Observation| snapshot.greedy_action(&obs.features),
        episodes,
        rng,
    )
}
