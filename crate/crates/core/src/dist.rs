//! Input marginal distributions and the joint input space.
//!
//! Three families cover the benchmark problems: normal, lognormal, uniform.
//! Sampling is inverse-CDF on one open-unit uniform per variate, which keeps
//! every sampler a fixed-draw-count operation; the lockstep Markov chains in
//! [`crate::subset`] rely on that to stay bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math::{exp, ln, sqrt, std_normal_cdf, std_normal_pdf, std_normal_quantile};
use crate::rng::{unit_open, RunRng};

/// Validation and domain errors for distribution parameters and probabilities.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum DistError {
    #[error("invalid {family} parameters: {message}")]
    InvalidParameter {
        family: &'static str,
        message: &'static str,
    },
    #[error("quantile probability {p} outside the open interval (0,1) for an unbounded support")]
    QuantileOutOfDomain { p: f64 },
    #[error("input space needs at least one marginal")]
    EmptySpace,
}

/// One-dimensional input marginal.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(tag = "kind", rename_all = "snake_case")
)]
pub enum MarginalDistribution {
    Normal { mean: f64, sd: f64 },
    /// Parameters are the mean and sd of ln(X), not of X.
    LogNormal { log_mean: f64, log_sd: f64 },
    Uniform { lower: f64, upper: f64 },
}

impl MarginalDistribution {
    pub fn normal(mean: f64, sd: f64) -> Result<Self, DistError> {
        let d = Self::Normal { mean, sd };
        d.validate()?;
        Ok(d)
    }

    pub fn log_normal(log_mean: f64, log_sd: f64) -> Result<Self, DistError> {
        let d = Self::LogNormal { log_mean, log_sd };
        d.validate()?;
        Ok(d)
    }

    pub fn uniform(lower: f64, upper: f64) -> Result<Self, DistError> {
        let d = Self::Uniform { lower, upper };
        d.validate()?;
        Ok(d)
    }

    /// Check parameters; needed separately because serde deserialization
    /// bypasses the constructors.
    pub fn validate(&self) -> Result<(), DistError> {
        match *self {
            Self::Normal { mean, sd } => {
                if !mean.is_finite() || !sd.is_finite() || sd <= 0.0 {
                    return Err(DistError::InvalidParameter {
                        family: "normal",
                        message: "mean must be finite and sd finite and > 0",
                    });
                }
            }
            Self::LogNormal { log_mean, log_sd } => {
                if !log_mean.is_finite() || !log_sd.is_finite() || log_sd <= 0.0 {
                    return Err(DistError::InvalidParameter {
                        family: "log_normal",
                        message: "log_mean must be finite and log_sd finite and > 0",
                    });
                }
            }
            Self::Uniform { lower, upper } => {
                if !lower.is_finite() || !upper.is_finite() || lower >= upper {
                    return Err(DistError::InvalidParameter {
                        family: "uniform",
                        message: "bounds must be finite with lower < upper",
                    });
                }
            }
        }
        Ok(())
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            Self::Normal { mean, sd } => std_normal_pdf((x - mean) / sd) / sd,
            Self::LogNormal { log_mean, log_sd } => {
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal_pdf((ln(x) - log_mean) / log_sd) / (x * log_sd)
                }
            }
            Self::Uniform { lower, upper } => {
                if x >= lower && x <= upper {
                    1.0 / (upper - lower)
                } else {
                    0.0
                }
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Normal { mean, sd } => std_normal_cdf((x - mean) / sd),
            Self::LogNormal { log_mean, log_sd } => {
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal_cdf((ln(x) - log_mean) / log_sd)
                }
            }
            Self::Uniform { lower, upper } => {
                let t = (x - lower) / (upper - lower);
                t.clamp(0.0, 1.0)
            }
        }
    }

    /// Inverse CDF. `p` must lie in (0,1); the closed endpoints are accepted
    /// only for the uniform family, whose support attains its bounds.
    pub fn quantile(&self, p: f64) -> Result<f64, DistError> {
        if let Self::Uniform { lower, upper } = *self {
            if !(0.0..=1.0).contains(&p) {
                return Err(DistError::QuantileOutOfDomain { p });
            }
            return Ok(lower + p * (upper - lower));
        }
        if !(p > 0.0 && p < 1.0) {
            return Err(DistError::QuantileOutOfDomain { p });
        }
        let z = std_normal_quantile(p);
        Ok(match *self {
            Self::Normal { mean, sd } => mean + sd * z,
            Self::LogNormal { log_mean, log_sd } => exp(log_mean + log_sd * z),
            Self::Uniform { .. } => unreachable!(),
        })
    }

    pub fn std_dev(&self) -> f64 {
        match *self {
            Self::Normal { sd, .. } => sd,
            Self::LogNormal { log_mean, log_sd } => {
                let s2 = log_sd * log_sd;
                sqrt(exp(s2) - 1.0) * exp(log_mean + 0.5 * s2)
            }
            Self::Uniform { lower, upper } => (upper - lower) / sqrt(12.0),
        }
    }

    /// One inverse-CDF draw. Consumes exactly one uniform from the stream.
    pub fn sample(&self, rng: &mut RunRng) -> f64 {
        let p = unit_open(rng);
        // p is strictly inside (0,1), so the quantile cannot fail.
        match self.quantile(p) {
            Ok(v) => v,
            Err(_) => unreachable!(),
        }
    }
}

/// Joint input space with independent marginals.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InputSpace {
    marginals: Vec<MarginalDistribution>,
}

impl InputSpace {
    pub fn new(marginals: Vec<MarginalDistribution>) -> Result<Self, DistError> {
        if marginals.is_empty() {
            return Err(DistError::EmptySpace);
        }
        for m in &marginals {
            m.validate()?;
        }
        Ok(Self { marginals })
    }

    pub fn dimension(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[MarginalDistribution] {
        &self.marginals
    }

    pub fn marginal(&self, j: usize) -> &MarginalDistribution {
        &self.marginals[j]
    }

    pub fn std_devs(&self) -> Vec<f64> {
        self.marginals.iter().map(|m| m.std_dev()).collect()
    }

    /// Fill `out` with one joint draw (coordinate order, one uniform each).
    pub fn sample_point(&self, rng: &mut RunRng, out: &mut [f64]) {
        assert_eq!(out.len(), self.dimension(), "output length != dimension");
        for (slot, m) in out.iter_mut().zip(&self.marginals) {
            *slot = m.sample(rng);
        }
    }

    /// n independent joint draws as rows of a matrix.
    pub fn sample_matrix(&self, n: usize, rng: &mut RunRng) -> Matrix {
        let d = self.dimension();
        let mut m = Matrix::zeros(n, d);
        let mut buf = vec![0.0; d];
        for i in 0..n {
            self.sample_point(rng, &mut buf);
            m.row_mut(i).copy_from_slice(&buf);
        }
        m
    }
}

/// |cdf(quantile(p)) - p| stays below this for all families; checked by the
/// property tests and relied on by the samplers.
pub const QUANTILE_ROUND_TRIP_TOL: f64 = 1e-9;
