//! Gaussian-process surrogate over the normalized unit cube.
//!
//! The kernel is a Matérn 5/2 with per-dimension lengthscales. Outputs are
//! standardized before fitting and predictions are de-standardized, so the
//! kernel-hyperparameter grid stays meaningful across tasks. Kernel
//! hyperparameters are selected by maximizing the log marginal likelihood
//! over a fixed grid: deterministic, derivative-free, and adequate for the
//! few dozen observations a meta-loop accumulates.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Noise floor in standardized-output units. Scores of a training run are
/// stochastic, so pure interpolation is never assumed.
pub const NOISE_FLOOR: f64 = 1e-8;

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-4;

/// Matérn 5/2 kernel hyperparameters, in normalized-cube units.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelParams {
    pub lengthscales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelParams {
    pub fn new(lengthscales: Vec<f64>, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        if lengthscales.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Domain("lengthscales must be > 0".into()));
        }
        if !(signal_variance > 0.0) {
            return Err(Error::Domain("signal_variance must be > 0".into()));
        }
        if noise_variance < NOISE_FLOOR {
            return Err(Error::Domain(format!(
                "noise_variance must be >= noise floor {NOISE_FLOOR}"
            )));
        }
        Ok(Self { lengthscales, signal_variance, noise_variance })
    }

    pub fn isotropic(dim: usize, lengthscale: f64, signal_variance: f64, noise_variance: f64) -> Result<Self> {
        Self::new(vec![lengthscale; dim], signal_variance, noise_variance)
    }
}

/// Matérn 5/2 covariance between two points.
///
/// With scaled distance `r`, the value is `sig^2 (1 + sqrt(5) r + 5 r^2 / 3) exp(-sqrt(5) r)`.
pub fn kernel_eval(params: &KernelParams, x1: &[f64], x2: &[f64]) -> Result<f64> {
    let d = params.lengthscales.len();
    if x1.len() != d {
        return Err(Error::Shape { expected: d, got: x1.len() });
    }
    if x2.len() != d {
        return Err(Error::Shape { expected: d, got: x2.len() });
    }
    let mut r2 = 0.0;
    for i in 0..d {
        let delta = (x1[i] - x2[i]) / params.lengthscales[i];
        r2 += delta * delta;
    }
    let r = r2.sqrt();
    let sqrt5r = 5f64.sqrt() * r;
    Ok(params.signal_variance * (1.0 + sqrt5r + 5.0 * r2 / 3.0) * (-sqrt5r).exp())
}

/// The optimization history: normalized query points and their scores.
#[derive(Debug, Clone, Default)]
pub struct ObservationDataset {
    points: Vec<Vec<f64>>,
    outputs: Vec<f64>,
}

impl ObservationDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, point: Vec<f64>, output: f64) -> Result<()> {
        if point.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::Domain("dataset points must lie in the unit cube".into()));
        }
        if let Some(first) = self.points.first() {
            if point.len() != first.len() {
                return Err(Error::Shape { expected: first.len(), got: point.len() });
            }
        }
        if !output.is_finite() {
            return Err(Error::Domain("dataset outputs must be finite".into()));
        }
        self.points.push(point);
        self.outputs.push(output);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn outputs(&self) -> &[f64] {
        &self.outputs
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn population_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64
}

fn gram_matrix(params: &KernelParams, points: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel_eval(params, &points[i], &points[j])?;
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Cholesky with bounded jitter escalation: add 1e-10, x10 per retry, give
/// up past 1e-4.
fn cholesky_with_jitter(k: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = k.clone().cholesky() {
        return Ok(c);
    }
    let n = k.nrows();
    let mut jitter = JITTER_START;
    while jitter <= JITTER_MAX {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = kj.cholesky() {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::Numerical(format!(
        "covariance factorization failed after max jitter {JITTER_MAX}"
    )))
}

/// Log marginal likelihood of the dataset under the given kernel, with a
/// constant prior mean equal to the empirical output mean:
/// `-1/2 r' K^-1 r - 1/2 log det K - n/2 log 2pi` where `r = Y - mean(Y)`
/// and `K` includes the noise term.
pub fn log_marginal_likelihood(dataset: &ObservationDataset, params: &KernelParams) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Domain("log marginal likelihood needs >= 1 observation".into()));
    }
    let n = dataset.len();
    let mut k = gram_matrix(params, dataset.points())?;
    for i in 0..n {
        k[(i, i)] += params.noise_variance;
    }
    let chol = cholesky_with_jitter(&k)?;
    let mu0 = mean(dataset.outputs());
    let r = DVector::from_iterator(n, dataset.outputs().iter().map(|y| y - mu0));
    let solved = chol.solve(&r);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    Ok(-0.5 * r.dot(&solved) - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// The fixed kernel-hyperparameter candidate grid, scaled by the output
/// variance of the (standardized) dataset.
pub fn candidate_grid(dim: usize, var_y: f64) -> Vec<KernelParams> {
    const LENGTHSCALES: [f64; 6] = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0];
    const SIGNAL: [f64; 3] = [0.25, 1.0, 4.0];
    const NOISE: [f64; 3] = [1e-6, 1e-4, 1e-2];
    let v = if var_y > 1e-12 { var_y } else { 1.0 };
    let mut grid = Vec::with_capacity(LENGTHSCALES.len() * SIGNAL.len() * NOISE.len());
    for &l in &LENGTHSCALES {
        for &s in &SIGNAL {
            for &nz in &NOISE {
                grid.push(KernelParams {
                    lengthscales: vec![l; dim],
                    signal_variance: s * v,
                    noise_variance: (nz * v).max(NOISE_FLOOR),
                });
            }
        }
    }
    grid
}

/// A fitted (immutable) Gaussian-process surrogate.
///
/// Kernel parameters and the factorization live in standardized-output
/// space; `predict` de-standardizes. A model fitted on zero observations is
/// the prior sentinel: it predicts `(prior mean, signal variance)`
/// everywhere.
#[derive(Debug, Clone)]
pub struct GPModel {
    kernel: KernelParams,
    points: Vec<Vec<f64>>,
    dim: usize,
    y_mean: f64,
    y_std: f64,
    /// Prior mean in standardized space (mean of the standardized outputs).
    mu0_std: f64,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

impl GPModel {
    /// Zero-data sentinel: standard-normal prior over the cube.
    pub fn prior(dim: usize) -> Self {
        Self {
            kernel: KernelParams::isotropic(dim, 1.0, 1.0, NOISE_FLOOR).unwrap(),
            points: Vec::new(),
            dim,
            y_mean: 0.0,
            y_std: 1.0,
            mu0_std: 0.0,
            chol: None,
            alpha: DVector::zeros(0),
        }
    }

    /// Prior mean in native output units: the empirical mean of Y.
    pub fn prior_mean(&self) -> f64 {
        self.y_mean
    }

    /// Scale applied when de-standardizing predictions.
    pub fn output_scale(&self) -> f64 {
        self.y_std
    }

    /// Kernel parameters in standardized-output space.
    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    /// Signal variance expressed in native output units.
    pub fn signal_variance_native(&self) -> f64 {
        self.kernel.signal_variance * self.y_std * self.y_std
    }

    pub fn training_size(&self) -> usize {
        self.points.len()
    }

    /// Posterior mean and variance at a normalized point.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.dim {
            return Err(Error::Shape { expected: self.dim, got: x.len() });
        }
        let Some(chol) = &self.chol else {
            return Ok((self.y_mean, self.signal_variance_native()));
        };
        let n = self.points.len();
        let mut k_vec = DVector::zeros(n);
        for i in 0..n {
            k_vec[i] = kernel_eval(&self.kernel, x, &self.points[i])?;
        }
        let mean_std = self.mu0_std + k_vec.dot(&self.alpha);
        let solved = chol.solve(&k_vec);
        let var_std = (kernel_eval(&self.kernel, x, x)? - k_vec.dot(&solved)).max(0.0);
        let mean = self.y_mean + self.y_std * mean_std;
        let var = var_std * self.y_std * self.y_std;
        Ok((mean, var))
    }
}

fn standardize(outputs: &[f64]) -> (Vec<f64>, f64, f64) {
    let m = mean(outputs);
    let std = population_variance(outputs).sqrt();
    let scale = if std > 1e-12 { std } else { 1.0 };
    (outputs.iter().map(|y| (y - m) / scale).collect(), m, scale)
}

/// Fits a GP with kernel parameters pinned explicitly (in
/// standardized-output units). `fit` delegates here after grid selection.
pub fn fit_with_params(
    dataset: &ObservationDataset,
    space_dim: usize,
    params: KernelParams,
) -> Result<GPModel> {
    if dataset.is_empty() {
        return Err(Error::Domain("cannot fit a GP on an empty dataset".into()));
    }
    if let Some(p) = dataset.points().first() {
        if p.len() != space_dim {
            return Err(Error::Shape { expected: space_dim, got: p.len() });
        }
    }
    let (y_std_vals, y_mean, y_scale) = standardize(dataset.outputs());
    let n = dataset.len();
    let mut k = gram_matrix(&params, dataset.points())?;
    for i in 0..n {
        k[(i, i)] += params.noise_variance;
    }
    let chol = cholesky_with_jitter(&k)?;
    let mu0_std = mean(&y_std_vals);
    let r = DVector::from_iterator(n, y_std_vals.iter().map(|y| y - mu0_std));
    let alpha = chol.solve(&r);
    Ok(GPModel {
        kernel: params,
        points: dataset.points().to_vec(),
        dim: space_dim,
        y_mean,
        y_std: y_scale,
        mu0_std,
        chol: Some(chol),
        alpha,
    })
}

/// Fits a GP surrogate, selecting kernel parameters by exhaustive grid
/// search on the log marginal likelihood of the standardized outputs.
/// Deterministic: no RNG is involved, ties keep the earliest grid entry.
pub fn fit(dataset: &ObservationDataset, space_dim: usize) -> Result<GPModel> {
    if dataset.is_empty() {
        return Err(Error::Domain("cannot fit a GP on an empty dataset".into()));
    }
    let (y_std_vals, _, _) = standardize(dataset.outputs());
    let mut std_dataset = ObservationDataset::new();
    for (p, &y) in dataset.points().iter().zip(&y_std_vals) {
        std_dataset.push(p.clone(), y)?;
    }
    let var_y = population_variance(&y_std_vals);
    let mut best: Option<(f64, KernelParams)> = None;
    for params in candidate_grid(space_dim, var_y) {
        let Ok(lml) = log_marginal_likelihood(&std_dataset, &params) else {
            continue;
        };
        if best.as_ref().map_or(true, |(b, _)| lml > *b) {
            best = Some((lml, params));
        }
    }
    let (_, params) = best.ok_or_else(|| {
        Error::Numerical("no kernel candidate produced a factorizable covariance".into())
    })?;
    fit_with_params(dataset, space_dim, params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_dataset(n: usize, d: usize, seed: u64) -> ObservationDataset {
        let mut rng = substream(seed, "test/gp");
        let mut ds = ObservationDataset::new();
        for _ in 0..n {
            let p: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            let y = rng.random::<f64>() * 4.0 - 2.0;
            ds.push(p, y).unwrap();
        }
        ds
    }

    #[test]
    fn kernel_zero_distance_is_signal_variance() {
        let p = KernelParams::isotropic(3, 0.5, 2.5, NOISE_FLOOR).unwrap();
        let x = [0.1, 0.4, 0.9];
        assert_abs_diff_eq!(kernel_eval(&p, &x, &x).unwrap(), 2.5, epsilon = 1e-14);
    }

    #[test]
    fn kernel_symmetry() {
        let p = KernelParams::new(vec![0.3, 0.7], 1.2, NOISE_FLOOR).unwrap();
        let a = [0.2, 0.8];
        let b = [0.9, 0.1];
        assert_eq!(kernel_eval(&p, &a, &b).unwrap(), kernel_eval(&p, &b, &a).unwrap());
    }

    #[test]
    fn kernel_matches_direct_formula() {
        // Independent evaluation of sig^2 (1 + sqrt5 r + 5 r^2/3) exp(-sqrt5 r).
        let p = KernelParams::new(vec![0.25, 0.5], 1.7, NOISE_FLOOR).unwrap();
        let a = [0.1, 0.3];
        let b = [0.6, 0.9];
        let r = (((0.1f64 - 0.6) / 0.25).powi(2) + ((0.3f64 - 0.9) / 0.5).powi(2)).sqrt();
        let expected = 1.7 * (1.0 + 5f64.sqrt() * r + 5.0 * r * r / 3.0) * (-(5f64.sqrt()) * r).exp();
        assert_abs_diff_eq!(kernel_eval(&p, &a, &b).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn kernel_dimension_mismatch() {
        let p = KernelParams::isotropic(2, 1.0, 1.0, NOISE_FLOOR).unwrap();
        assert!(kernel_eval(&p, &[0.1], &[0.2, 0.3]).is_err());
    }

    #[test]
    fn fit_single_observation_prior_mean() {
        let mut ds = ObservationDataset::new();
        ds.push(vec![0.5], 3.25).unwrap();
        let model = fit(&ds, 1).unwrap();
        assert_abs_diff_eq!(model.prior_mean(), 3.25, epsilon = 1e-12);
    }

    #[test]
    fn fit_constant_outputs_predicts_constant() {
        let mut ds = ObservationDataset::new();
        for i in 0..5 {
            ds.push(vec![i as f64 / 4.0], 7.5).unwrap();
        }
        let model = fit(&ds, 1).unwrap();
        for &x in &[0.0, 0.33, 0.77, 1.0] {
            let (m, _) = model.predict(&[x]).unwrap();
            assert_abs_diff_eq!(m, 7.5, epsilon = 1e-6);
        }
    }

    #[test]
    fn fit_maximizes_lml_over_grid() {
        let ds = random_dataset(10, 2, 11);
        let model = fit(&ds, 2).unwrap();
        // Reconstruct the standardized dataset and check exhaustively.
        let (y_std, _, _) = super::standardize(ds.outputs());
        let mut std_ds = ObservationDataset::new();
        for (p, &y) in ds.points().iter().zip(&y_std) {
            std_ds.push(p.clone(), y).unwrap();
        }
        let chosen = log_marginal_likelihood(&std_ds, model.kernel()).unwrap();
        let var_y = super::population_variance(&y_std);
        for params in candidate_grid(2, var_y) {
            if let Ok(lml) = log_marginal_likelihood(&std_ds, &params) {
                assert!(chosen >= lml - 1e-9, "grid candidate beats chosen: {lml} > {chosen}");
            }
        }
    }

    #[test]
    fn predict_interpolates_at_noise_floor() {
        let ds = random_dataset(8, 2, 5);
        let params = KernelParams::isotropic(2, 0.5, 1.0, NOISE_FLOOR).unwrap();
        let model = fit_with_params(&ds, 2, params).unwrap();
        // The noise floor plus escalated jitter still leaves a tiny gap
        // between prediction and observation.
        for (p, &y) in ds.points().iter().zip(ds.outputs()) {
            let (m, v) = model.predict(p).unwrap();
            assert!((m - y).abs() < 1e-4, "interpolation off: {m} vs {y}");
            assert!(v <= 1e-4 * model.output_scale().powi(2) + 1e-9);
        }
    }

    #[test]
    fn predict_reverts_to_prior_far_from_data() {
        // All data in one corner, query the opposite corner with a short
        // lengthscale so scaled distances are >> 1.
        let mut ds = ObservationDataset::new();
        ds.push(vec![0.01, 0.02], 2.0).unwrap();
        ds.push(vec![0.03, 0.01], 4.0).unwrap();
        ds.push(vec![0.02, 0.03], 3.0).unwrap();
        let params = KernelParams::isotropic(2, 0.05, 1.0, 1e-4).unwrap();
        let model = fit_with_params(&ds, 2, params).unwrap();
        let (m, v) = model.predict(&[0.99, 0.99]).unwrap();
        assert!((m - model.prior_mean()).abs() < 1e-3, "mean {m}");
        assert!((v - model.signal_variance_native()).abs() < 1e-3 * model.signal_variance_native());
    }

    #[test]
    fn predict_matches_dense_inverse_oracle() {
        let ds = random_dataset(10, 3, 23);
        let params = KernelParams::isotropic(3, 0.4, 1.3, 1e-4).unwrap();
        let model = fit_with_params(&ds, 3, params.clone()).unwrap();
        let mut rng = substream(99, "test/gp/query");
        // Dense oracle: explicit matrix inverse over the same standardized
        // problem, no Cholesky involved.
        let (y_std, y_mean, y_scale) = super::standardize(ds.outputs());
        let n = ds.len();
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                k[(i, j)] = kernel_eval(&params, &ds.points()[i], &ds.points()[j]).unwrap();
            }
            k[(i, i)] += params.noise_variance;
        }
        let k_inv = k.try_inverse().unwrap();
        let mu0 = y_std.iter().sum::<f64>() / n as f64;
        let resid = DVector::from_iterator(n, y_std.iter().map(|y| y - mu0));
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.random::<f64>()).collect();
            let k_vec = DVector::from_iterator(
                n,
                ds.points().iter().map(|p| kernel_eval(&params, &x, p).unwrap()),
            );
            let mean_o = y_mean + y_scale * (mu0 + k_vec.dot(&(&k_inv * &resid)));
            let var_o = (kernel_eval(&params, &x, &x).unwrap() - k_vec.dot(&(&k_inv * &k_vec)))
                .max(0.0)
                * y_scale
                * y_scale;
            let (m, v) = model.predict(&x).unwrap();
            assert_abs_diff_eq!(m, mean_o, epsilon = 1e-8);
            assert_abs_diff_eq!(v, var_o, epsilon = 1e-8);
        }
    }

    #[test]
    fn prior_sentinel_prediction() {
        let model = GPModel::prior(2);
        let (m, v) = model.predict(&[0.3, 0.7]).unwrap();
        assert_eq!(m, 0.0);
        assert_eq!(v, 1.0);
    }

    #[test]
    fn lml_scalar_closed_form() {
        // n = 1: residual is zero, so lml = -1/2 log v - 1/2 log 2pi.
        let mut ds = ObservationDataset::new();
        ds.push(vec![0.5], 1.7).unwrap();
        let params = KernelParams::isotropic(1, 0.5, 2.0, 0.5).unwrap();
        let v = kernel_eval(&params, &[0.5], &[0.5]).unwrap() + 0.5;
        let expected = -0.5 * v.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(log_marginal_likelihood(&ds, &params).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn lml_matches_dense_oracle() {
        for seed in [1u64, 2, 3] {
            let ds = random_dataset(8, 2, seed);
            let params = KernelParams::isotropic(2, 0.3, 1.1, 1e-3).unwrap();
            let n = ds.len();
            let mut k = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    k[(i, j)] = kernel_eval(&params, &ds.points()[i], &ds.points()[j]).unwrap();
                }
                k[(i, i)] += params.noise_variance;
            }
            let mu0 = ds.outputs().iter().sum::<f64>() / n as f64;
            let r = DVector::from_iterator(n, ds.outputs().iter().map(|y| y - mu0));
            let k_inv = k.clone().try_inverse().unwrap();
            let expected = -0.5 * r.dot(&(&k_inv * &r))
                - 0.5 * k.determinant().ln()
                - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            assert_abs_diff_eq!(
                log_marginal_likelihood(&ds, &params).unwrap(),
                expected,
                epsilon = 1e-8
            );
        }
    }

    #[test]
    fn duplicate_observation_shrinks_posterior_variance() {
        let mut ds = ObservationDataset::new();
        ds.push(vec![0.4], 1.0).unwrap();
        let params = KernelParams::isotropic(1, 0.5, 1.0, 1e-2).unwrap();
        let m1 = fit_with_params(&ds, 1, params.clone()).unwrap();
        let (_, v1) = m1.predict(&[0.4]).unwrap();
        ds.push(vec![0.4], 1.0).unwrap();
        let m2 = fit_with_params(&ds, 1, params).unwrap();
        let (_, v2) = m2.predict(&[0.4]).unwrap();
        assert!(v2 <= v1 + 1e-12, "duplicate must not increase variance: {v2} > {v1}");
    }

    #[test]
    fn empty_dataset_fit_error() {
        assert!(fit(&ObservationDataset::new(), 2).is_err());
    }
}
