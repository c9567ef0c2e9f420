//! The continuous source measure, as a seedable sampler.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid_input, Result};

/// Source measure on `R^d`: a uniform box, a diagonal Gaussian, or the
/// empirical distribution of an explicit point set.
#[derive(Debug, Clone, PartialEq)]
pub enum SourceSpec {
    /// Uniform on the axis-aligned box `[low_c, high_c)` per coordinate.
    UniformBox { low: Vec<f64>, high: Vec<f64> },
    /// Gaussian with the given mean and per-coordinate variances.
    Gaussian { mean: Vec<f64>, var_diag: Vec<f64> },
    /// Empirical measure of a fixed point set (sampled with replacement).
    ExplicitSamples { points: Vec<f64>, dim: usize },
}

impl SourceSpec {
    /// Uniform box with the same `[low, high)` range on every coordinate.
    pub fn uniform_cube(dim: usize, low: f64, high: f64) -> Result<Self> {
        let spec = SourceSpec::UniformBox {
            low: vec![low; dim],
            high: vec![high; dim],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform_box(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        let spec = SourceSpec::UniformBox { low, high };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gaussian(mean: Vec<f64>, var_diag: Vec<f64>) -> Result<Self> {
        let spec = SourceSpec::Gaussian { mean, var_diag };
        spec.validate()?;
        Ok(spec)
    }

    pub fn explicit(points: Vec<f64>, dim: usize) -> Result<Self> {
        let spec = SourceSpec::ExplicitSamples { points, dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SourceSpec::UniformBox { low, high } => {
                if low.is_empty() || low.len() != high.len() {
                    return Err(invalid_input("box bounds must be non-empty and equal length"));
                }
                for (l, h) in low.iter().zip(high) {
                    if !(l.is_finite() && h.is_finite() && l < h) {
                        return Err(invalid_input(format!("box bounds must satisfy low < high, got [{l}, {h})")));
                    }
                }
            }
            SourceSpec::Gaussian { mean, var_diag } => {
                if mean.is_empty() || mean.len() != var_diag.len() {
                    return Err(invalid_input("gaussian mean and variance lengths must match"));
                }
                if mean.iter().any(|v| !v.is_finite()) || var_diag.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(invalid_input("gaussian variances must be finite and > 0"));
                }
            }
            SourceSpec::ExplicitSamples { points, dim } => {
                if *dim == 0 || points.is_empty() || points.len() % dim != 0 {
                    return Err(invalid_input("explicit sample buffer must be a positive multiple of dim"));
                }
                if points.iter().any(|v| !v.is_finite()) {
                    return Err(invalid_input("explicit samples must be finite"));
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            SourceSpec::UniformBox { low, .. } => low.len(),
            SourceSpec::Gaussian { mean, .. } => mean.len(),
            SourceSpec::ExplicitSamples { dim, .. } => *dim,
        }
    }

    /// Draw `count` points into a flat row-major buffer.
    pub fn sample(&self, count: usize, rng: &mut impl Rng) -> Vec<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(count * d);
        match self {
            SourceSpec::UniformBox { low, high } => {
                for _ in 0..count {
                    for c in 0..d {
                        let u: f64 = rng.random();
                        out.push(low[c] + (high[c] - low[c]) * u);
                    }
                }
            }
            SourceSpec::Gaussian { mean, var_diag } => {
                for _ in 0..count {
                    for c in 0..d {
                        let z: f64 = rng.sample(StandardNormal);
                        out.push(mean[c] + var_diag[c].sqrt() * z);
                    }
                }
            }
            SourceSpec::ExplicitSamples { points, dim } => {
                let n = points.len() / dim;
                for _ in 0..count {
                    let i = rng.random_range(0..n);
                    out.extend_from_slice(&points[i * dim..(i + 1) * dim]);
                }
            }
        }
        out
    }
}
