//! Comparison optimizers: hypersphere random search and plain GP-EI
//! Bayesian optimization. Both share the meta-loop engine in `meta`, so
//! they consume exactly the same meta-episode budget and metric as the
//! demonstration-informed optimizer.

use crate::acquisition::{lhs_sample, top_m_candidates};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::gp::GPModel;
use crate::meta::{optimize, OptimizeOutcome, OptimizeSettings, OptimizerKind};
use crate::space::{HyperparamSpace, ThetaVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Random-search state: the incumbent in normalized coordinates and the
/// search radius around it.
#[derive(Debug, Clone)]
pub struct RandomSearchState {
    center: Option<Vec<f64>>,
    radius: f64,
    pub best_y: f64,
}

impl RandomSearchState {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius <= 1.0) {
            return Err(Error::Config(format!("radius must be in (0, 1], got {radius}")));
        }
        Ok(Self { center: None, radius, best_y: f64::NEG_INFINITY })
    }

    pub fn center(&self) -> Option<&[f64]> {
        self.center.as_deref()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Moves the hypersphere to a new incumbent (normalized coordinates).
    pub fn update_center(&mut self, center: Vec<f64>, y: f64) {
        self.center = Some(center);
        self.best_y = y;
    }
}

/// Max rejection-sampling attempts before falling back to a clipped
/// Gaussian offset.
const MAX_REJECTION_ATTEMPTS: usize = 1000;

/// Next random-search query: uniform over the cube before any incumbent
/// exists, afterwards uniform in the L2 ball around the incumbent
/// (rejection sampling within the cube, Gaussian fallback), clipped to
/// bounds and denormalized.
pub fn random_search_step(
    state: &RandomSearchState,
    space: &HyperparamSpace,
    rng: &mut ChaCha8Rng,
) -> Result<ThetaVector> {
    let d = space.len();
    let center = match state.center() {
        None => return Ok(space.sample_uniform(1, rng)?.remove(0)),
        Some(c) => c,
    };
    if center.len() != d {
        return Err(Error::Shape { expected: d, got: center.len() });
    }
    let r = state.radius();
    // Proposals come from the box around the center intersected with the
    // cube; acceptance only checks the ball, so clipping below is a no-op
    // on the rejection path.
    let lows: Vec<f64> = center.iter().map(|c| (c - r).max(0.0)).collect();
    let highs: Vec<f64> = center.iter().map(|c| (c + r).min(1.0)).collect();
    for _ in 0..MAX_REJECTION_ATTEMPTS {
        let u: Vec<f64> = lows
            .iter()
            .zip(&highs)
            .map(|(&lo, &hi)| lo + rng.random::<f64>() * (hi - lo))
            .collect();
        let dist2: f64 = u.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist2 <= r * r {
            return space.denormalize(&u);
        }
    }
    let u: Vec<f64> = center
        .iter()
        .map(|&c| {
            let offset: f64 = rng.sample(rand_distr::StandardNormal);
            (c + offset * r / 2.0).clamp(0.0, 1.0)
        })
        .collect();
    space.denormalize(&u)
}

/// Plain-BO proposal: argmax of standard EI over a fresh LHS batch. Same
/// batch size and tie rules as the acquisition module.
pub fn plain_bo_step(
    model: &GPModel,
    space: &HyperparamSpace,
    f_star: f64,
    candidate_batch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ThetaVector> {
    let batch = lhs_sample(space, candidate_batch, rng)?;
    Ok(top_m_candidates(model, space, &batch, f_star, 1)?.remove(0).theta)
}

/// Runs a baseline through the shared engine: the same record stream as the
/// full optimizer, with no cloning and no demonstration lifecycle.
pub fn run_baseline(
    kind: OptimizerKind,
    settings: &OptimizeSettings,
    env: &mut dyn Environment,
    master_seed: u64,
) -> Result<OptimizeOutcome> {
    if kind == OptimizerKind::RloptBc {
        return Err(Error::Config("run_baseline covers rlopt and random_search".into()));
    }
    optimize(kind, settings, env, master_seed)
}
