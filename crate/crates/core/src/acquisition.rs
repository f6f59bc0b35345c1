//! Expected-improvement acquisition and candidate generation.

use crate::error::{Error, Result};
use crate::gp::GPModel;
use crate::space::{HyperparamSpace, ThetaVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.3989422804014326779399; // 1/sqrt(2 pi)

/// Standard normal CDF via erf; accurate to ~1e-15 over the range we use.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / SQRT_2)
}

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// A scored candidate hyperparameter vector.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub theta: ThetaVector,
    pub u: Vec<f64>,
    pub ei: f64,
    pub predicted_mean: f64,
    pub predicted_std: f64,
}

/// Closed-form expected improvement for a Gaussian belief `N(mean, std^2)`
/// over the incumbent `f_star`:
/// `(mean - f_star) Phi(Z) + std phi(Z)` with `Z = (mean - f_star)/std`.
/// The `std = 0` branch returns `max(0, mean - f_star)`, the continuous
/// limit of the closed form.
pub fn expected_improvement(mean: f64, std: f64, f_star: f64) -> f64 {
    let gap = mean - f_star;
    if std <= 0.0 {
        return gap.max(0.0);
    }
    let z = gap / std;
    (gap * normal_cdf(z) + std * normal_pdf(z)).max(0.0)
}

/// Latin hypercube sample of `n` points: per dimension, exactly one point
/// per equal stratum of [0,1], with an independent random permutation of
/// strata per dimension and uniform position within each stratum.
pub fn lhs_sample(
    space: &HyperparamSpace,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<ThetaVector>> {
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    let d = space.len();
    let mut coords = vec![vec![0.0; d]; n];
    for dim in 0..d {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (row, &s) in strata.iter().enumerate() {
            let jitter: f64 = rng.random();
            coords[row][dim] = (s as f64 + jitter) / n as f64;
        }
    }
    coords.iter().map(|u| space.denormalize(u)).collect()
}

/// Scores a batch under the model and returns the `m` candidates with the
/// highest EI, descending. Ties break by higher predicted std (prefer
/// exploration among equals), then by batch index.
pub fn top_m_candidates(
    model: &GPModel,
    space: &HyperparamSpace,
    batch: &[ThetaVector],
    f_star: f64,
    m: usize,
) -> Result<Vec<Candidate>> {
    if m == 0 {
        return Err(Error::Domain("top_m_candidates needs m >= 1".into()));
    }
    if batch.len() < m {
        return Err(Error::Domain(format!(
            "batch size {} smaller than m = {m}",
            batch.len()
        )));
    }
    let mut scored = Vec::with_capacity(batch.len());
    for (idx, theta) in batch.iter().enumerate() {
        let u = space.normalize(theta)?;
        let (mean, var) = model.predict(&u)?;
        let std = var.max(0.0).sqrt();
        let ei = expected_improvement(mean, std, f_star);
        scored.push((
            idx,
            Candidate { theta: theta.clone(), u, ei, predicted_mean: mean, predicted_std: std },
        ));
    }
    scored.sort_by(|(ia, a), (ib, b)| {
        b.ei.partial_cmp(&a.ei)
            .unwrap()
            .then(b.predicted_std.partial_cmp(&a.predicted_std).unwrap())
            .then(ia.cmp(ib))
    });
    Ok(scored.into_iter().take(m).map(|(_, c)| c).collect())
}
