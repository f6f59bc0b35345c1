//! Environment contract and the three built-in desk-scale tasks.
//!
//! States are small integer ids so tabular agents can index them directly;
//! every environment also exposes a feature view for the linear agent
//! (one-hot by default, a compact binary vector for the umbrella chain).
//! All stochasticity flows through the RNG stream handed to `reset`/`step`,
//! so an environment is fully reproducible given its stream.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// One experience tuple (s, a, r, s', done).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
}

/// A complete episode: its transitions and the undiscounted return.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub episode_return: f64,
}

impl Trajectory {
    pub fn from_transitions(transitions: Vec<Transition>) -> Self {
        let episode_return = transitions.iter().map(|t| t.reward).sum();
        Self { transitions, episode_return }
    }
}

/// What the agent sees at each step: the tabular state id plus a feature
/// vector for linear function approximation.
#[derive(Debug, Clone)]
pub struct Observation {
    pub id: usize,
    pub features: Vec<f64>,
}

/// Aggregated greedy-evaluation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationResult {
    pub episode_returns: Vec<f64>,
    pub mean: f64,
    pub max: f64,
}

impl EvaluationResult {
    pub fn from_returns(episode_returns: Vec<f64>) -> Self {
        let mean = episode_returns.iter().sum::<f64>() / episode_returns.len() as f64;
        let max = episode_returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Self { episode_returns, mean, max }
    }
}

/// Episodic environment contract.
pub trait Environment {
    fn state_count(&self) -> usize;
    fn action_count(&self) -> usize;
    /// Hard cap on episode length; training terminates an episode here even
    /// under degenerate policies.
    fn step_cap(&self) -> usize;
    fn feature_dim(&self) -> usize {
        self.state_count()
    }
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Observation;
    /// Advances one step. Must only be called on a non-terminal state.
    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> (Observation, f64, bool);
    /// Deterministic featurization of a state id, used when replaying stored
    /// demonstrations (observation-time noise features are zeroed).
    fn canonical_features(&self, id: usize) -> Vec<f64> {
        let mut f = vec![0.0; self.feature_dim()];
        if id < f.len() {
            f[id] = 1.0;
        }
        f
    }
    /// Pessimistic per-episode return, used as the divergence floor score.
    fn min_return(&self) -> f64;
}

/// Sum of `gamma^k r_k`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::Domain(format!("gamma must be in [0, 1), got {gamma}")));
    }
    // Horner evaluation from the tail.
    Ok(rewards.iter().rev().fold(0.0, |acc, &r| r + gamma * acc))
}

/// Runs a greedy (non-exploring) policy and collects per-episode
/// undiscounted returns.
pub fn evaluate_policy<E: Environment + ?Sized>(
    env: &mut E,
    policy: &dyn Fn(&Observation) -> usize,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EvaluationResult> {
    if episodes == 0 {
        return Err(Error::Domain("evaluate_policy needs episodes >= 1".into()));
    }
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        let mut total = 0.0;
        for _ in 0..env.step_cap() {
            let action = policy(&obs);
            let (next, reward, done) = env.step(action, rng);
            total += reward;
            obs = next;
            if done {
                break;
            }
        }
        returns.push(total);
    }
    Ok(EvaluationResult::from_returns(returns))
}

/// Records full greedy trajectories (used for the demonstration store).
pub fn rollout_trajectories<E: Environment + ?Sized>(
    env: &mut E,
    policy: &dyn Fn(&Observation) -> usize,
    episodes: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Trajectory> {
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset(rng);
        let mut transitions = Vec::new();
        for _ in 0..env.step_cap() {
            let action = policy(&obs);
            let state = obs.id;
            let (next, reward, done) = env.step(action, rng);
            transitions.push(Transition { state, action, reward, next_state: next.id, done });
            obs = next;
            if done {
                break;
            }
        }
        out.push(Trajectory::from_transitions(transitions));
    }
    out
}

// ---------------------------------------------------------------------------
// Gridworld
// ---------------------------------------------------------------------------

/// Deterministic navigation grid: start top-left, absorbing goal
/// bottom-right. Four actions (up, right, down, left); wall bumps keep the
/// position and still pay the step reward.
#[derive(Debug, Clone)]
pub struct GridWorld {
    width: usize,
    height: usize,
    goal_reward: f64,
    step_reward: f64,
    pos: (usize, usize),
}

impl GridWorld {
    pub fn new(width: usize, height: usize, goal_reward: f64, step_reward: f64) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::Config("gridworld needs width, height >= 2".into()));
        }
        Ok(Self { width, height, goal_reward, step_reward, pos: (0, 0) })
    }

    fn id(&self, pos: (usize, usize)) -> usize {
        pos.1 * self.width + pos.0
    }

    fn obs(&self) -> Observation {
        let id = self.id(self.pos);
        Observation { id, features: self.canonical_features(id) }
    }
}

impl Environment for GridWorld {
    fn state_count(&self) -> usize {
        self.width * self.height
    }

    fn action_count(&self) -> usize {
        4
    }

    fn step_cap(&self) -> usize {
        4 * self.width * self.height
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Observation {
        self.pos = (0, 0);
        self.obs()
    }

    fn step(&mut self, action: usize, _rng: &mut ChaCha8Rng) -> (Observation, f64, bool) {
        let (x, y) = self.pos;
        let next = match action {
            0 => (x, y.saturating_sub(1)),                     // up
            1 => ((x + 1).min(self.width - 1), y),             // right
            2 => (x, (y + 1).min(self.height - 1)),            // down
            _ => (x.saturating_sub(1), y),                     // left
        };
        self.pos = next;
        let at_goal = next == (self.width - 1, self.height - 1);
        let reward = if at_goal { self.goal_reward } else { self.step_reward };
        (self.obs(), reward, at_goal)
    }

    fn min_return(&self) -> f64 {
        self.step_cap() as f64 * self.step_reward.min(0.0) + self.goal_reward.min(0.0)
    }
}

// ---------------------------------------------------------------------------
// Deep sea
// ---------------------------------------------------------------------------

/// Exploration-diagnostic N x N descent task. Start top-left; actions are
/// down-left and down-right. Down-left is free, down-right costs 0.01/N,
/// except the final down-right from the bottom-right cell which pays +1.
/// The episode lasts exactly N steps. The stochastic variant moves right
/// with probability (1 - 1/N) and corrupts bottom-row rewards with N(0,1)
/// noise. Column arithmetic clamps at the grid edges.
#[derive(Debug, Clone)]
pub struct DeepSea {
    n: usize,
    stochastic: bool,
    row: usize,
    col: usize,
}

impl DeepSea {
    pub fn new(n: usize, stochastic: bool) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("deep_sea needs N >= 2".into()));
        }
        Ok(Self { n, stochastic, row: 0, col: 0 })
    }

    /// Optimal deterministic return: 1 - 0.01 (N-1)/N.
    pub fn optimal_return(n: usize) -> f64 {
        1.0 - 0.01 * (n as f64 - 1.0) / n as f64
    }

    fn obs(&self) -> Observation {
        // Terminal "row == n" aliases onto row n-1 ids; the episode is over
        // by then so the id is only recorded, never acted on.
        let row = self.row.min(self.n - 1);
        let id = row * self.n + self.col;
        Observation { id, features: self.canonical_features(id) }
    }
}

impl Environment for DeepSea {
    fn state_count(&self) -> usize {
        self.n * self.n
    }

    fn action_count(&self) -> usize {
        2 // 0 = down-left, 1 = down-right
    }

    fn step_cap(&self) -> usize {
        self.n
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Observation {
        self.row = 0;
        self.col = 0;
        self.obs()
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> (Observation, f64, bool) {
        let at_bottom_right = self.row == self.n - 1 && self.col == self.n - 1;
        let goes_right = if action == 1 {
            if self.stochastic {
                rng.random::<f64>() < 1.0 - 1.0 / self.n as f64
            } else {
                true
            }
        } else {
            false
        };
        let mut reward = if action == 1 {
            if at_bottom_right {
                1.0
            } else {
                -0.01 / self.n as f64
            }
        } else {
            0.0
        };
        let final_step = self.row == self.n - 1;
        if self.stochastic && final_step {
            reward += rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        self.col = if goes_right {
            (self.col + 1).min(self.n - 1)
        } else {
            self.col.saturating_sub(1)
        };
        self.row += 1;
        (self.obs(), reward, self.row >= self.n)
    }

    fn min_return(&self) -> f64 {
        if self.stochastic {
            -10.0
        } else {
            -0.01
        }
    }
}

// ---------------------------------------------------------------------------
// Umbrella chain
// ---------------------------------------------------------------------------

/// Credit-assignment chain. The first action fixes the umbrella choice;
/// intermediate steps pay +/-1 uniformly at random regardless of action;
/// the final step pays +1 iff the umbrella choice matched the forecast,
/// else -1. Distractor bits are resampled at every observation and appear
/// only in the feature view.
#[derive(Debug, Clone)]
pub struct UmbrellaChain {
    chain_length: usize,
    n_distractors: usize,
    pos: usize,
    forecast: bool,
    umbrella: bool,
}

impl UmbrellaChain {
    pub fn new(chain_length: usize, n_distractors: usize) -> Result<Self> {
        if chain_length < 1 {
            return Err(Error::Config("umbrella needs chain_length >= 1".into()));
        }
        Ok(Self { chain_length, n_distractors, pos: 0, forecast: false, umbrella: false })
    }

    fn id(&self) -> usize {
        let pos = self.pos.min(self.chain_length);
        pos * 4 + (self.forecast as usize) * 2 + self.umbrella as usize
    }

    fn obs(&self, rng: &mut ChaCha8Rng) -> Observation {
        let mut features = self.canonical_features(self.id());
        for i in 0..self.n_distractors {
            features[3 + i] = if rng.random::<bool>() { 1.0 } else { 0.0 };
        }
        Observation { id: self.id(), features }
    }
}

impl Environment for UmbrellaChain {
    fn state_count(&self) -> usize {
        (self.chain_length + 1) * 4
    }

    fn action_count(&self) -> usize {
        2 // 0 = no umbrella, 1 = take umbrella
    }

    fn step_cap(&self) -> usize {
        self.chain_length + 1
    }

    fn feature_dim(&self) -> usize {
        3 + self.n_distractors
    }

    fn canonical_features(&self, id: usize) -> Vec<f64> {
        let pos = id / 4;
        let forecast = (id / 2) % 2;
        let umbrella = id % 2;
        let mut f = vec![0.0; self.feature_dim()];
        f[0] = forecast as f64;
        f[1] = umbrella as f64;
        f[2] = (self.chain_length.saturating_sub(pos)) as f64 / self.chain_length as f64;
        f
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Observation {
        self.pos = 0;
        self.forecast = rng.random::<bool>();
        self.umbrella = false;
        self.obs(rng)
    }

    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng) -> (Observation, f64, bool) {
        if self.pos == 0 {
            self.umbrella = action == 1;
        }
        self.pos += 1;
        let done = self.pos >= self.chain_length;
        let reward = if done {
            if self.umbrella == self.forecast {
                1.0
            } else {
                -1.0
            }
        } else if rng.random::<bool>() {
            1.0
        } else {
            -1.0
        };
        (self.obs(rng), reward, done)
    }

    fn min_return(&self) -> f64 {
        -(self.chain_length as f64)
    }
}
