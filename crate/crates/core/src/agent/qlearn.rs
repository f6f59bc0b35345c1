//! Tabular Q-learning with epsilon-greedy exploration and prioritized
//! replay. The agent learns exclusively from replayed batches: online
//! transitions are pushed into the buffer, never applied directly, so the
//! replay exponents are live hyperparameters.

use crate::env::{Environment, EvaluationResult, Transition};
use crate::error::{Error, Result};
use crate::replay::PrioritizedReplay;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Q-table entries start optimistic, which drives systematic coverage of
/// untried actions in sparse-reward tasks.
pub const OPTIMISTIC_INIT: f64 = 1.0;

pub const REPLAY_CAPACITY: usize = 10_000;
pub const REPLAY_BATCH: usize = 32;
pub const REPLAY_WARMUP_STEPS: usize = 100;

/// The tuned hyperparameter vector of the tabular agent. `epsilon0` anneals
/// linearly to 0 and `per_beta0` anneals linearly to 1 over the training
/// budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QAgentConfig {
    pub alpha_lr: f64,
    pub gamma: f64,
    pub epsilon0: f64,
    pub per_alpha: f64,
    pub per_beta0: f64,
}

impl QAgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Domain(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.epsilon0) {
            return Err(Error::Domain("epsilon0 must be in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One-step Q-learning target update:
/// `q + alpha (r + gamma max_a' Q(s',a') - q)`. Pass `max_next_q = 0` for
/// terminal transitions.
pub fn q_update(q: f64, reward: f64, max_next_q: f64, alpha_lr: f64, gamma: f64) -> f64 {
    q + alpha_lr * (reward + gamma * max_next_q - q)
}

/// Epsilon-greedy action selection with lowest-index greedy tie-break.
pub fn epsilon_greedy(q_row: &[f64], epsilon: f64, rng: &mut ChaCha8Rng) -> Result<usize> {
    if q_row.is_empty() {
        return Err(Error::Shape { expected: 1, got: 0 });
    }
    if rng.random::<f64>() < epsilon {
        return Ok(rng.random_range(0..q_row.len()));
    }
    Ok(argmax(q_row))
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone)]
pub struct QAgent {
    pub config: QAgentConfig,
    q: Vec<Vec<f64>>,
    replay: PrioritizedReplay,
    env_steps: usize,
}

impl QAgent {
    pub fn new(config: QAgentConfig, state_count: usize, action_count: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            q: vec![vec![OPTIMISTIC_INIT; action_count]; state_count],
            replay: PrioritizedReplay::new(REPLAY_CAPACITY, config.per_alpha)?,
            env_steps: 0,
        })
    }

    pub fn q_row(&self, state: usize) -> &[f64] {
        &self.q[state]
    }

    pub fn q_table(&self) -> &[Vec<f64>] {
        &self.q
    }

    pub fn set_q(&mut self, state: usize, action: usize, value: f64) {
        self.q[state][action] = value;
    }

    pub fn greedy_action(&self, state: usize) -> usize {
        argmax(&self.q[state])
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().all(|row| row.iter().all(|v| v.is_finite()))
    }

    fn learn_from_replay(&mut self, beta: f64, rng: &mut ChaCha8Rng) -> Result<()> {
        if self.replay.len() < REPLAY_BATCH.min(self.replay.len().max(1)) || self.replay.is_empty() {
            return Ok(());
        }
        let batch = self.replay.sample(REPLAY_BATCH, beta, rng)?;
        let mut td_errors = Vec::with_capacity(batch.transitions.len());
        for (t, &w) in batch.transitions.iter().zip(&batch.weights) {
            let max_next = if t.done {
                0.0
            } else {
                self.q[t.next_state].iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            };
            let q = self.q[t.state][t.action];
            let td = t.reward + self.config.gamma * max_next - q;
            self.q[t.state][t.action] = q + self.config.alpha_lr * w * td;
            td_errors.push(td);
        }
        self.replay.update_priorities(&batch.indices, &td_errors);
        Ok(())
    }

    /// Runs one training episode: epsilon-greedy acting, one replay batch
    /// per environment step after the warmup. Returns the environment steps
    /// consumed and the undiscounted episode return.
    pub fn train_episode(
        &mut self,
        env: &mut dyn Environment,
        epsilon: f64,
        beta: f64,
        agent_rng: &mut ChaCha8Rng,
        env_rng: &mut ChaCha8Rng,
    ) -> Result<(usize, f64)> {
        let mut obs = env.reset(env_rng);
        let mut steps = 0;
        let mut episode_return = 0.0;
        for _ in 0..env.step_cap() {
            let action = epsilon_greedy(&self.q[obs.id], epsilon, agent_rng)?;
            let state = obs.id;
            let (next, reward, done) = env.step(action, env_rng);
            self.replay.push(Transition { state, action, reward, next_state: next.id, done });
            self.env_steps += 1;
            steps += 1;
            episode_return += reward;
            if self.env_steps >= REPLAY_WARMUP_STEPS {
                self.learn_from_replay(beta, agent_rng)?;
            }
            obs = next;
            if done {
                break;
            }
        }
        Ok((steps, episode_return))
    }
}

/// Linear annealing coefficient for episode `ep` of `total`: 0 at the first
/// episode, exactly 1 at the last.
pub fn anneal_fraction(ep: usize, total: usize) -> f64 {
    if total <= 1 {
        1.0
    } else {
        ep as f64 / (total - 1) as f64
    }
}

/// Full training run with periodic greedy evaluation.
pub struct QTrainOutcome {
    pub traces: Vec<EvaluationResult>,
    pub train_steps: u64,
    pub diverged: bool,
}

pub fn train_q_agent(
    agent: &mut QAgent,
    env: &mut dyn Environment,
    episodes: usize,
    eval_every: usize,
    eval_episodes: usize,
    agent_rng: &mut ChaCha8Rng,
    env_rng: &mut ChaCha8Rng,
    eval_rng: &mut ChaCha8Rng,
) -> Result<QTrainOutcome> {
    let mut traces = Vec::new();
    let mut train_steps = 0u64;
    let mut diverged = false;
    for ep in 0..episodes {
        let frac = anneal_fraction(ep, episodes);
        let epsilon = agent.config.epsilon0 * (1.0 - frac);
        let beta = agent.config.per_beta0 + (1.0 - agent.config.per_beta0) * frac;
        let (steps, _) = agent.train_episode(env, epsilon, beta, agent_rng, env_rng)?;
        train_steps += steps as u64;
        if !agent.is_finite() {
            diverged = true;
            break;
        }
        if (ep + 1) % eval_every == 0 {
            traces.push(evaluate_q(agent, env, eval_episodes, eval_rng)?);
        }
    }
    // Always at least one evaluation, covering both a zero budget and a
    // budget that is not a multiple of the evaluation interval.
    if !diverged && (traces.is_empty() || episodes % eval_every != 0) {
        traces.push(evaluate_q(agent, env, eval_episodes, eval_rng)?);
    }
    Ok(QTrainOutcome { traces, train_steps, diverged })
}

fn evaluate_q(
    agent: &QAgent,
    env: &mut dyn Environment,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EvaluationResult> {
    let q = agent.q.clone();
    crate::env::evaluate_policy(env, &|obs| argmax(&q[obs.id]), episodes, rng)
}
