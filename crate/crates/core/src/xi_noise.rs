//! The auxiliary noise distribution `q(xi)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::normal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiKind {
    /// Point mass at the origin; reduces every process to plain DDPM.
    DeltaZero,
    /// `N(0, sigma_c^2 * 1_{n x n})`: one shared offset for all components.
    CorrelatedGaussian,
}

/// A sampleable auxiliary-noise law. Only the two shipped [`XiKind`]s
/// implement it, but anything time-independent would fit.
pub trait AuxNoise {
    fn dim(&self) -> usize;
    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiSpec {
    pub kind: XiKind,
    pub sigma_c_sq: f64,
    pub dim: usize,
}

impl XiSpec {
    pub fn delta_zero(dim: usize) -> Self {
        Self {
            kind: XiKind::DeltaZero,
            sigma_c_sq: 0.0,
            dim,
        }
    }

    pub fn correlated(sigma_c_sq: f64, dim: usize) -> Self {
        Self {
            kind: XiKind::CorrelatedGaussian,
            sigma_c_sq,
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Param("xi dimension must be positive".into()));
        }
        if !(self.sigma_c_sq.is_finite() && self.sigma_c_sq >= 0.0) {
            return Err(Error::Param(format!(
                "sigma_c_sq must be nonnegative, got {}",
                self.sigma_c_sq
            )));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(rng, &mut out);
        out
    }

    /// The draw obtained from a given scalar standard-normal `z`.
    pub fn from_scalar(&self, z: f64) -> Vec<f64> {
        match self.kind {
            XiKind::DeltaZero => vec![0.0; self.dim],
            XiKind::CorrelatedGaussian => vec![z * self.sigma_c_sq.sqrt(); self.dim],
        }
    }
}

impl AuxNoise for XiSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    /// DeltaZero consumes no randomness; CorrelatedGaussian consumes exactly
    /// one standard normal.
    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self.kind {
            XiKind::DeltaZero => out.fill(0.0),
            XiKind::CorrelatedGaussian => {
                let v = normal(rng) * self.sigma_c_sq.sqrt();
                out.fill(v);
            }
        }
    }
}

/// Free-function form of [`XiSpec::sample`].
pub fn sample_xi<R: Rng + ?Sized>(spec: &XiSpec, rng: &mut R) -> Vec<f64> {
    spec.sample(rng)
}
