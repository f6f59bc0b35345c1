//! Hyperparameter search space and coordinate transformations.
//!
//! All surrogate and sampler math operates on the normalized unit cube;
//! native values appear only when an agent is instantiated or a result is
//! reported. Dimensions with a `Log10` scale map affinely in log space, so a
//! range like `(1e-4, 1e-3)` is explored uniformly across magnitudes.

use crate::error::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log10,
}

/// One tunable hyperparameter: a named closed interval in native units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamDim {
    pub name: String,
    pub low: f64,
    pub high: f64,
    pub scale: Scale,
}

impl HyperparamDim {
    pub fn new(name: impl Into<String>, low: f64, high: f64, scale: Scale) -> Result<Self> {
        let name = name.into();
        if !(low < high) {
            return Err(Error::Config(format!(
                "dimension '{name}': low ({low}) must be < high ({high})"
            )));
        }
        if scale == Scale::Log10 && low <= 0.0 {
            return Err(Error::Config(format!(
                "dimension '{name}': log10 scale requires low > 0, got {low}"
            )));
        }
        Ok(Self { name, low, high, scale })
    }

    /// Maps a native value into [0, 1].
    pub fn to_unit(&self, value: f64) -> Result<f64> {
        if value < self.low || value > self.high || !value.is_finite() {
            return Err(Error::OutOfBounds {
                dim: self.name.clone(),
                value,
                low: self.low,
                high: self.high,
            });
        }
        Ok(match self.scale {
            Scale::Linear => (value - self.low) / (self.high - self.low),
            Scale::Log10 => {
                (value.log10() - self.low.log10()) / (self.high.log10() - self.low.log10())
            }
        })
    }

    /// Maps a unit-cube coordinate back to native units.
    pub fn from_unit(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) || !u.is_finite() {
            return Err(Error::OutOfBounds {
                dim: self.name.clone(),
                value: u,
                low: 0.0,
                high: 1.0,
            });
        }
        Ok(match self.scale {
            Scale::Linear => self.low + u * (self.high - self.low),
            Scale::Log10 => {
                let lo = self.low.log10();
                let hi = self.high.log10();
                10f64.powf(lo + u * (hi - lo))
            }
        })
    }
}

/// A hyperparameter vector in native units. Component order follows the
/// owning space's dimension order for the lifetime of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector(pub Vec<f64>);

impl ThetaVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Ordered, immutable collection of search dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperparamSpace {
    dims: Vec<HyperparamDim>,
}

impl HyperparamSpace {
    pub fn new(dims: Vec<HyperparamDim>) -> Result<Self> {
        for (i, d) in dims.iter().enumerate() {
            if dims[..i].iter().any(|other| other.name == d.name) {
                return Err(Error::Config(format!("duplicate dimension name '{}'", d.name)));
            }
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[HyperparamDim] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.dims.len() {
            return Err(Error::Shape { expected: self.dims.len(), got });
        }
        Ok(())
    }

    /// Maps a native vector onto the unit cube.
    pub fn normalize(&self, theta: &ThetaVector) -> Result<Vec<f64>> {
        self.check_len(theta.len())?;
        self.dims
            .iter()
            .zip(&theta.0)
            .map(|(d, &v)| d.to_unit(v))
            .collect()
    }

    /// Inverse of [`normalize`](Self::normalize).
    pub fn denormalize(&self, u: &[f64]) -> Result<ThetaVector> {
        self.check_len(u.len())?;
        let values = self
            .dims
            .iter()
            .zip(u)
            .map(|(d, &x)| d.from_unit(x))
            .collect::<Result<Vec<_>>>()?;
        Ok(ThetaVector(values))
    }

    /// Draws `n` vectors uniform in normalized space, then denormalizes.
    pub fn sample_uniform(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<ThetaVector>> {
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        (0..n)
            .map(|_| {
                let u: Vec<f64> = (0..self.dims.len()).map(|_| rng.random::<f64>()).collect();
                self.denormalize(&u)
            })
            .collect()
    }

    /// Clamps each component into its dimension's closed interval.
    pub fn clip_to_bounds(&self, theta: &ThetaVector) -> ThetaVector {
        let values = self
            .dims
            .iter()
            .zip(&theta.0)
            .map(|(d, &v)| v.clamp(d.low, d.high))
            .collect();
        ThetaVector(values)
    }

    pub fn contains(&self, theta: &ThetaVector) -> bool {
        theta.len() == self.dims.len()
            && self
                .dims
                .iter()
                .zip(&theta.0)
                .all(|(d, &v)| v >= d.low && v <= d.high)
    }
}
