//! Demonstration recording, sampling, and behavioral-cloning pretraining.
//!
//! Demonstrations store tabular state ids; when the linear agent clones
//! them it featurizes through `Environment::canonical_features`, so
//! observation-time noise features never leak into the pairs.

use crate::agent::{PGAgent, QAgent, TrainedPolicy};
use crate::env::{rollout_trajectories, Environment, Trajectory};
use crate::error::{Error, Result};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Tabular cloning bumps each demonstrated action above the row maximum by
/// this margin.
pub const BC_MARGIN: f64 = 0.1;

/// Knobs of the (fixed, not tuned) cloning procedure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcSettings {
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Stop after this many consecutive epochs of rising validation loss.
    pub patience: usize,
}

impl Default for BcSettings {
    fn default() -> Self {
        Self { learning_rate: 0.05, max_epochs: 50, patience: 3 }
    }
}

/// The demonstration set psi: trajectories recorded from the best policy
/// found so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemonstrationSet {
    pub trajectories: Vec<Trajectory>,
    pub source_meta_episode: usize,
    pub source_score: f64,
}

impl DemonstrationSet {
    pub fn empty() -> Self {
        Self { trajectories: Vec::new(), source_meta_episode: 0, source_score: f64::NEG_INFINITY }
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Records `episodes` greedy trajectories from the policy.
pub fn record_demonstrations(
    policy: &TrainedPolicy,
    env: &mut dyn Environment,
    episodes: usize,
    source_meta_episode: usize,
    source_score: f64,
    rng: &mut ChaCha8Rng,
) -> Result<DemonstrationSet> {
    if episodes == 0 {
        return Err(Error::Domain("record_demonstrations needs episodes >= 1".into()));
    }
    let trajectories = rollout_trajectories(env, &|obs| policy.act_greedy(obs), episodes, rng);
    Ok(DemonstrationSet { trajectories, source_meta_episode, source_score })
}

/// Uniform sample of `min(i, |psi|)` trajectories without replacement.
pub fn sample_demos(psi: &DemonstrationSet, i: usize, rng: &mut ChaCha8Rng) -> Vec<Trajectory> {
    let n = psi.trajectories.len();
    let take = i.min(n);
    if take == 0 {
        return Vec::new();
    }
    rand::seq::index::sample(rng, n, take)
        .iter()
        .map(|idx| psi.trajectories[idx].clone())
        .collect()
}

/// Mean cross-entropy `-log pi(a|x)` of the linear policy over (feature,
/// action) pairs.
pub fn bc_loss(agent: &PGAgent, pairs: &[(Vec<f64>, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Domain("bc_loss needs >= 1 pair".into()));
    }
    let mut total = 0.0;
    for (x, a) in pairs {
        let probs = agent.action_probs(x);
        total -= probs[*a].ln();
    }
    Ok(total / pairs.len() as f64)
}

/// Flattens demonstrations into (canonical features, action) pairs.
pub fn demo_pairs(demos: &[Trajectory], env: &dyn Environment) -> Vec<(Vec<f64>, usize)> {
    demos
        .iter()
        .flat_map(|t| &t.transitions)
        .map(|tr| (env.canonical_features(tr.state), tr.action))
        .collect()
}

/// What pretraining did, for logging and tests.
#[derive(Debug, Clone, PartialEq)]
pub struct BcReport {
    pub epochs: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl BcReport {
    fn noop() -> Self {
        Self { epochs: 0, initial_loss: 0.0, final_loss: 0.0 }
    }
}

/// Pretrains a fresh agent from demonstrations. The linear agent minimizes
/// cross-entropy by full-batch gradient descent with an 80/20
/// train/validation split and early stopping; the tabular agent bumps each
/// demonstrated action above its row maximum by a fixed margin. Empty demos
/// leave the agent untouched. Offline: the environment is only consulted
/// for canonical features, never stepped.
pub fn pretrain(
    policy: &mut TrainedPolicy,
    demos: &[Trajectory],
    env: &dyn Environment,
    settings: &BcSettings,
) -> Result<BcReport> {
    let pairs = demo_pairs(demos, env);
    if pairs.is_empty() {
        return Ok(BcReport::noop());
    }
    match policy {
        TrainedPolicy::Tabular(agent) => pretrain_tabular(agent, &pairs),
        TrainedPolicy::Linear(agent) => pretrain_linear(agent, &pairs, settings),
    }
}

fn pretrain_tabular(agent: &mut QAgent, pairs: &[(Vec<f64>, usize)]) -> Result<BcReport> {
    for (x, a) in pairs {
        // Canonical features for tabular envs are one-hot in the state id.
        let state = x
            .iter()
            .position(|&v| v != 0.0)
            .ok_or_else(|| Error::Domain("tabular cloning needs one-hot features".into()))?;
        let row_max = agent.q_row(state).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let bumped = agent.q_row(state)[*a].max(row_max + BC_MARGIN);
        agent.set_q(state, *a, bumped);
    }
    Ok(BcReport { epochs: 1, initial_loss: 0.0, final_loss: 0.0 })
}

fn pretrain_linear(
    agent: &mut PGAgent,
    pairs: &[(Vec<f64>, usize)],
    settings: &BcSettings,
) -> Result<BcReport> {
    // Deterministic 80/20 split in pair order; tiny demo sets may leave the
    // validation side empty, in which case training runs to max_epochs.
    let val_len = pairs.len() / 5;
    let (train, val) = pairs.split_at(pairs.len() - val_len);
    let initial_loss = bc_loss(agent, pairs)?;
    let dim = agent.feature_dim();
    let actions = agent.action_count();
    let mut best_val = f64::INFINITY;
    let mut rises = 0;
    let mut epochs = 0;
    for _ in 0..settings.max_epochs {
        let mut grad = vec![vec![0.0; dim]; actions];
        for (x, target) in train {
            let probs = agent.action_probs(x);
            for a in 0..actions {
                let coef = probs[a] - if a == *target { 1.0 } else { 0.0 };
                for (g, &xf) in grad[a].iter_mut().zip(x) {
                    *g += coef * xf;
                }
            }
        }
        let scale = settings.learning_rate / train.len() as f64;
        for (row, g_row) in agent.policy_w.iter_mut().zip(&grad) {
            for (w, &g) in row.iter_mut().zip(g_row) {
                *w -= scale * g;
            }
        }
        epochs += 1;
        if !val.is_empty() {
            let val_loss = bc_loss(agent, val)?;
            if val_loss > best_val {
                rises += 1;
                if rises >= settings.patience {
                    break;
                }
            } else {
                rises = 0;
                best_val = val_loss;
            }
        }
    }
    let final_loss = bc_loss(agent, pairs)?;
    Ok(BcReport { epochs, initial_loss, final_loss })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{PGAgentConfig, QAgent, QAgentConfig};
    use crate::env::{evaluate_policy, GridWorld};
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;

    fn grid() -> GridWorld {
        GridWorld::new(5, 5, 1.0, -0.01).unwrap()
    }

    fn q_config() -> QAgentConfig {
        QAgentConfig { alpha_lr: 0.5, gamma: 0.95, epsilon0: 0.3, per_alpha: 0.6, per_beta0: 0.6 }
    }

    fn pg_config() -> PGAgentConfig {
        PGAgentConfig {
            alpha_lr: 0.01,
            gamma: 0.95,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
        }
    }

    /// Optimal 5x5 gridworld policy: right until the east wall, then down.
    fn optimal_policy(env: &GridWorld) -> TrainedPolicy {
        let mut agent = QAgent::new(q_config(), env.state_count(), env.action_count()).unwrap();
        for y in 0..5usize {
            for x in 0..5usize {
                let s = y * 5 + x;
                let a = if x < 4 { 1 } else { 2 };
                agent.set_q(s, a, 10.0);
            }
        }
        TrainedPolicy::Tabular(agent)
    }

    #[test]
    fn deterministic_recording_repeats_trajectories() {
        let mut env = grid();
        let policy = optimal_policy(&env);
        let mut rng = substream(5, "test/demos");
        let psi = record_demonstrations(&policy, &mut env, 3, 0, 1.0, &mut rng).unwrap();
        assert_eq!(psi.trajectories.len(), 3);
        assert_eq!(psi.trajectories[0], psi.trajectories[1]);
        assert_eq!(psi.trajectories[1], psi.trajectories[2]);
    }

    #[test]
    fn recording_five_episodes_gives_set_of_five() {
        let mut env = grid();
        let policy = optimal_policy(&env);
        let mut rng = substream(6, "test/demos5");
        let psi = record_demonstrations(&policy, &mut env, 5, 2, 0.5, &mut rng).unwrap();
        assert_eq!(psi.trajectories.len(), 5);
        assert_eq!(psi.source_meta_episode, 2);
    }

    #[test]
    fn recorded_returns_match_evaluate_policy() {
        let mut env = grid();
        let policy = optimal_policy(&env);
        let mut rng_a = substream(7, "test/demos-eq");
        let mut rng_b = substream(7, "test/demos-eq");
        let psi = record_demonstrations(&policy, &mut env, 4, 0, 0.0, &mut rng_a).unwrap();
        let eval = evaluate_policy(&mut env, &|o| policy.act_greedy(o), 4, &mut rng_b).unwrap();
        let recorded: Vec<f64> = psi.trajectories.iter().map(|t| t.episode_return).collect();
        assert_eq!(recorded, eval.episode_returns);
    }

    #[test]
    fn sample_all_when_i_exceeds_size() {
        let mut env = grid();
        let policy = optimal_policy(&env);
        let mut rng = substream(8, "test/sample");
        let psi = record_demonstrations(&policy, &mut env, 3, 0, 0.0, &mut rng).unwrap();
        assert_eq!(sample_demos(&psi, 10, &mut rng).len(), 3);
        assert!(sample_demos(&psi, 0, &mut rng).is_empty());
        assert!(sample_demos(&DemonstrationSet::empty(), 4, &mut rng).is_empty());
    }

    #[test]
    fn sample_frequencies_are_hypergeometric() {
        // |psi| = 5, i = 2: each trajectory appears with marginal 2/5.
        let mut env = grid();
        let mut psi = DemonstrationSet::empty();
        let policy = optimal_policy(&env);
        let mut rng = substream(9, "test/sample-freq");
        // Distinguish trajectories by length: k steps right from start, then
        // a fresh recording. All from the same deterministic policy would be
        // identical, so tag by truncation instead.
        let base = record_demonstrations(&policy, &mut env, 1, 0, 0.0, &mut rng)
            .unwrap()
            .trajectories
            .remove(0);
        for k in 1..=5usize {
            let mut t = base.clone();
            t.transitions.truncate(k);
            psi.trajectories.push(Trajectory::from_transitions(t.transitions));
        }
        let draws = 10_000;
        let mut counts = vec![0usize; 5];
        for _ in 0..draws {
            for t in sample_demos(&psi, 2, &mut rng) {
                counts[t.transitions.len() - 1] += 1;
            }
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.4).abs() < 0.02, "marginal {freq}");
        }
    }

    #[test]
    fn sample_is_seed_reproducible() {
        let mut env = grid();
        let policy = optimal_policy(&env);
        let mut rng = substream(10, "test/sample-rep");
        let psi = record_demonstrations(&policy, &mut env, 5, 0, 0.0, &mut rng).unwrap();
        let a = sample_demos(&psi, 3, &mut substream(1, "s"));
        let b = sample_demos(&psi, 3, &mut substream(1, "s"));
        assert_eq!(a, b);
    }

    #[test]
    fn bc_loss_uniform_policy_is_log4() {
        let agent = PGAgent::new(pg_config(), 25, 4).unwrap();
        let pairs = vec![(vec![0.0; 25], 2usize), (vec![0.0; 25], 0usize)];
        assert_abs_diff_eq!(bc_loss(&agent, &pairs).unwrap(), 4.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn bc_loss_matches_summation_oracle() {
        let mut agent = PGAgent::new(pg_config(), 3, 2).unwrap();
        let mut rng = substream(12, "test/bcloss");
        use rand::Rng;
        for row in &mut agent.policy_w {
            for w in row.iter_mut() {
                *w = rng.random::<f64>() - 0.5;
            }
        }
        let pairs: Vec<(Vec<f64>, usize)> = (0..10)
            .map(|_| {
                ((0..3).map(|_| rng.random::<f64>()).collect(), rng.random_range(0..2))
            })
            .collect();
        let mut oracle = 0.0;
        for (x, a) in &pairs {
            oracle -= agent.action_probs(x)[*a].ln();
        }
        oracle /= pairs.len() as f64;
        assert_abs_diff_eq!(bc_loss(&agent, &pairs).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn bc_loss_empty_pairs_errors() {
        let agent = PGAgent::new(pg_config(), 2, 2).unwrap();
        assert!(bc_loss(&agent, &[]).is_err());
    }

    #[test]
    fn empty_demos_leave_agent_bit_identical() {
        let env = grid();
        let agent = PGAgent::new(pg_config(), env.feature_dim(), 4).unwrap();
        let before = agent.clone();
        let mut policy = TrainedPolicy::Linear(agent);
        let report = pretrain(&mut policy, &[], &env, &BcSettings::default()).unwrap();
        assert_eq!(report.epochs, 0);
        match policy {
            TrainedPolicy::Linear(after) => {
                assert_eq!(after.policy_w, before.policy_w);
                assert_eq!(after.value_w, before.value_w);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn single_pair_forces_argmax() {
        let env = grid();
        let demo = Trajectory::from_transitions(vec![crate::env::Transition {
            state: 7,
            action: 2,
            reward: -0.01,
            next_state: 12,
            done: false,
        }]);
        let agent = PGAgent::new(pg_config(), env.feature_dim(), 4).unwrap();
        let mut policy = TrainedPolicy::Linear(agent);
        pretrain(&mut policy, &[demo], &env, &BcSettings::default()).unwrap();
        let x = env.canonical_features(7);
        match &policy {
            TrainedPolicy::Linear(a) => assert_eq!(a.greedy_action(&x), 2),
            _ => unreachable!(),
        }
    }

    #[test]
    fn tabular_pretrain_forces_demo_actions() {
        let env = grid();
        let mut rng = substream(13, "test/tab-bc");
        let teacher = optimal_policy(&env);
        let mut env2 = grid();
        let psi =
            record_demonstrations(&teacher, &mut env2, 3, 0, 0.0, &mut rng).unwrap();
        let agent = QAgent::new(q_config(), env.state_count(), 4).unwrap();
        let mut student = TrainedPolicy::Tabular(agent);
        pretrain(&mut student, &psi.trajectories, &env, &BcSettings::default()).unwrap();
        for t in psi.trajectories.iter().flat_map(|t| &t.transitions) {
            assert_eq!(student.act_greedy(&crate::env::Observation {
                id: t.state,
                features: env.canonical_features(t.state),
            }), t.action);
        }
    }

    #[test]
    fn linear_cloning_agrees_with_demos() {
        // >= 95% action agreement on demonstrated states.
        let env = grid();
        let mut env2 = grid();
        let mut rng = substream(14, "test/bc-agree");
        let teacher = optimal_policy(&env);
        let psi = record_demonstrations(&teacher, &mut env2, 5, 0, 0.0, &mut rng).unwrap();
        let agent = PGAgent::new(pg_config(), env.feature_dim(), 4).unwrap();
        let mut student = TrainedPolicy::Linear(agent);
        pretrain(&mut student, &psi.trajectories, &env, &BcSettings::default()).unwrap();
        let pairs = demo_pairs(&psi.trajectories, &env);
        let agree = pairs
            .iter()
            .filter(|(x, a)| match &student {
                TrainedPolicy::Linear(s) => s.greedy_action(x) == *a,
                _ => unreachable!(),
            })
            .count();
        let frac = agree as f64 / pairs.len() as f64;
        assert!(frac >= 0.95, "agreement {frac}");
    }

    #[test]
    fn pretrain_reduces_bc_loss() {
        for seed in 0..5u64 {
            let env = grid();
            let mut env2 = grid();
            let mut rng = substream(seed, "test/bc-loss-drop");
            let teacher = optimal_policy(&env);
            let psi = record_demonstrations(&teacher, &mut env2, 5, 0, 0.0, &mut rng).unwrap();
            let agent = PGAgent::new(pg_config(), env.feature_dim(), 4).unwrap();
            let mut student = TrainedPolicy::Linear(agent);
            let report =
                pretrain(&mut student, &psi.trajectories, &env, &BcSettings::default()).unwrap();
            assert!(report.final_loss <= report.initial_loss);
        }
    }
}
