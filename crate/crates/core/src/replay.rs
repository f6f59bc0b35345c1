//! Prioritized experience replay.
//!
//! Selection probability of transition j is `p_j^alpha / sum_i p_i^alpha`;
//! the sampling bias is corrected with importance weights
//! `(N P(j))^-beta`, normalized by the batch maximum before use. A sum tree
//! keeps sampling and priority updates at O(log n).

use crate::env::Transition;
use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Priority assigned after a replay update: |TD error| + this epsilon.
pub const PRIORITY_EPSILON: f64 = 1e-3;

/// Selection probabilities `p_j^alpha / sum_i p_i^alpha`.
pub fn per_probabilities(priorities: &[f64], per_alpha: f64) -> Result<Vec<f64>> {
    if priorities.is_empty() {
        return Err(Error::Domain("per_probabilities needs >= 1 priority".into()));
    }
    if priorities.iter().any(|&p| !(p > 0.0)) {
        return Err(Error::Domain("all priorities must be > 0".into()));
    }
    let powered: Vec<f64> = priorities.iter().map(|p| p.powf(per_alpha)).collect();
    let total: f64 = powered.iter().sum();
    Ok(powered.into_iter().map(|p| p / total).collect())
}

/// Importance-sampling weight `(N P(j))^-beta` (un-normalized).
pub fn per_is_weight(buffer_size: usize, prob: f64, per_beta: f64) -> Result<f64> {
    if buffer_size == 0 {
        return Err(Error::Domain("buffer size must be >= 1".into()));
    }
    if !(prob > 0.0 && prob <= 1.0) {
        return Err(Error::Domain(format!("probability must be in (0, 1], got {prob}")));
    }
    Ok((buffer_size as f64 * prob).powf(-per_beta))
}

/// Binary-indexed sum tree over leaf masses.
#[derive(Debug, Clone)]
struct SumTree {
    capacity: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(capacity: usize) -> Self {
        Self { capacity, nodes: vec![0.0; 2 * capacity] }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn set(&mut self, leaf: usize, mass: f64) {
        let mut idx = leaf + self.capacity;
        let delta = mass - self.nodes[idx];
        while idx >= 1 {
            self.nodes[idx] += delta;
            idx /= 2;
        }
    }

    fn get(&self, leaf: usize) -> f64 {
        self.nodes[leaf + self.capacity]
    }

    /// Finds the leaf whose cumulative interval contains `target`.
    fn find(&self, mut target: f64) -> usize {
        let mut idx = 1;
        while idx < self.capacity {
            let left = 2 * idx;
            if target < self.nodes[left] {
                idx = left;
            } else {
                target -= self.nodes[left];
                idx = left + 1;
            }
        }
        idx - self.capacity
    }
}

/// One sampled replay batch: buffer slots, transitions, and max-normalized
/// importance weights.
#[derive(Debug, Clone)]
pub struct ReplayBatch {
    pub indices: Vec<usize>,
    pub transitions: Vec<Transition>,
    pub weights: Vec<f64>,
}

/// Ring buffer with proportional prioritized sampling. `per_alpha` is fixed
/// at construction; `beta` is supplied per sample call since it anneals
/// during training.
#[derive(Debug, Clone)]
pub struct PrioritizedReplay {
    capacity: usize,
    per_alpha: f64,
    data: Vec<Transition>,
    priorities: Vec<f64>,
    tree: SumTree,
    cursor: usize,
    max_priority: f64,
}

impl PrioritizedReplay {
    pub fn new(capacity: usize, per_alpha: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay capacity must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            per_alpha,
            data: Vec::with_capacity(capacity),
            priorities: Vec::with_capacity(capacity),
            tree: SumTree::new(capacity),
            cursor: 0,
            max_priority: 1.0,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Inserts with the current maximum priority (1.0 while empty), so new
    /// experience is replayed at least once before its priority settles.
    pub fn push(&mut self, transition: Transition) {
        let priority = self.max_priority;
        if self.data.len() < self.capacity {
            self.data.push(transition);
            self.priorities.push(priority);
        } else {
            self.data[self.cursor] = transition;
            self.priorities[self.cursor] = priority;
        }
        self.tree.set(self.cursor, priority.powf(self.per_alpha));
        self.cursor = (self.cursor + 1) % self.capacity;
    }

    /// Proportional sampling of `batch` transitions (with replacement).
    pub fn sample(&self, batch: usize, beta: f64, rng: &mut ChaCha8Rng) -> Result<ReplayBatch> {
        if self.data.is_empty() {
            return Err(Error::Domain("cannot sample from an empty replay buffer".into()));
        }
        if batch == 0 {
            return Err(Error::EmptyBatch);
        }
        let total = self.tree.total();
        let n = self.data.len();
        let mut indices = Vec::with_capacity(batch);
        let mut weights = Vec::with_capacity(batch);
        for _ in 0..batch {
            let target = rng.random::<f64>() * total;
            let idx = self.tree.find(target).min(n - 1);
            let prob = self.tree.get(idx) / total;
            indices.push(idx);
            weights.push(per_is_weight(n, prob, beta)?);
        }
        let max_w = weights.iter().cloned().fold(f64::MIN, f64::max);
        for w in &mut weights {
            *w /= max_w;
        }
        let transitions = indices.iter().map(|&i| self.data[i].clone()).collect();
        Ok(ReplayBatch { indices, transitions, weights })
    }

    /// Re-priortizes sampled slots to |TD error| + epsilon.
    pub fn update_priorities(&mut self, indices: &[usize], td_errors: &[f64]) {
        for (&idx, &td) in indices.iter().zip(td_errors) {
            let priority = td.abs() + PRIORITY_EPSILON;
            self.priorities[idx] = priority;
            self.tree.set(idx, priority.powf(self.per_alpha));
            self.max_priority = self.max_priority.max(priority);
        }
    }

    pub fn priorities(&self) -> &[f64] {
        &self.priorities
    }
}
