//! Multifidelity model selection via folded-normal correction errors.
//!
//! Each cheap model `f_i` carries a Gaussian process over its correction
//! `e_i = F - f_i` against the expensive model. At a query point the GP gives
//! `e_i ~ N(mu_i, sd_i)`, so `|e_i|` is folded normal. The selection weight
//! of model `i` is the probability that its absolute correction is the
//! smallest of the ensemble:
//!
//! `w_i = int_0^inf p_{|e_i|}(z) prod_{k != i} (1 - P_{|e_k|}(z)) dz`
//!
//! evaluated with a fixed 256-node Gauss-Legendre rule. An optional cost
//! model scales each error by `gamma_i = tau_i^beta` before the comparison
//! (selection only; corrected values are never scaled), trading accuracy for
//! cost: expensive-but-accurate models need proportionally more accuracy to
//! win the query.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::gp::{GpSurrogate, Prediction};
use crate::math::{powf, std_normal_cdf, std_normal_pdf};
use crate::quad::GaussLegendre;
use crate::LimitStateFn;

/// Node count pinned for reproducibility across runs and platforms.
pub const WEIGHT_QUADRATURE_NODES: usize = 256;

/// Effective sds below `U / POINT_MASS_DIVISOR` (U = integration range) are
/// treated as point masses: narrower spikes are invisible to the fixed rule,
/// and the point-mass formula is exact in the zero-width limit.
const POINT_MASS_DIVISOR: f64 = 128.0;

/// Errors from ensemble construction or evaluation.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum MfError {
    #[error("ensemble needs at least one low-fidelity model")]
    Empty,
    #[error("model {index}: {message}")]
    InvalidModel { index: usize, message: &'static str },
    #[error("invalid cost parameters: {message}")]
    InvalidCost { message: &'static str },
    #[error("every low-fidelity model returned non-finite output at the query")]
    AllModelsFailed,
}

/// Density of |X| where X ~ N(mu, sigma); zero for z < 0.
pub fn folded_normal_pdf(z: f64, mu: f64, sigma: f64) -> f64 {
    assert!(sigma > 0.0, "folded normal needs sigma > 0");
    if z < 0.0 {
        return 0.0;
    }
    (std_normal_pdf((z - mu) / sigma) + std_normal_pdf((z + mu) / sigma)) / sigma
}

/// CDF of |X| where X ~ N(mu, sigma); zero for z < 0, clamped to [0,1].
pub fn folded_normal_cdf(z: f64, mu: f64, sigma: f64) -> f64 {
    assert!(sigma > 0.0, "folded normal needs sigma > 0");
    if z < 0.0 {
        return 0.0;
    }
    (std_normal_cdf((z - mu) / sigma) - std_normal_cdf((-z - mu) / sigma)).clamp(0.0, 1.0)
}

/// Cost-awareness exponent: gamma(tau) = tau^beta.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CostFunction {
    beta: f64,
}

impl CostFunction {
    /// beta = 0 disables the effect (gamma = 1 for every cost).
    pub fn new(beta: f64) -> Result<Self, MfError> {
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(MfError::InvalidCost {
                message: "beta must be finite and >= 0",
            });
        }
        Ok(Self { beta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Scale applied to a model's error before selection.
    pub fn gamma(&self, tau: f64) -> f64 {
        powf(tau, self.beta)
    }
}

/// Probability that each model's absolute correction is the ensemble minimum.
///
/// `corrections[i]` is the GP posterior of model i's correction at the query;
/// `gammas` optionally scales each (mean, sd) pair for cost awareness. The
/// returned weights are the raw integrals: they sum to 1 up to quadrature
/// error, with no renormalization.
pub fn compute_weights(
    corrections: &[Prediction],
    gammas: Option<&[f64]>,
    rule: &GaussLegendre,
) -> Vec<f64> {
    let m = corrections.len();
    assert!(m > 0, "no models to weigh");
    if let Some(g) = gammas {
        assert_eq!(g.len(), m, "gamma count != model count");
    }
    if m == 1 {
        return vec![1.0];
    }

    // Effective folded-normal parameters after cost scaling.
    let eff: Vec<(f64, f64)> = corrections
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let g = gammas.map_or(1.0, |g| g[i]);
            (crate::math::abs(p.mean) * g, p.sd.max(0.0) * g)
        })
        .collect();

    // Integration range: beyond the largest |mu| + 8 sd every density has
    // negligible mass and every survival factor is ~0.
    let range = eff
        .iter()
        .map(|&(a, s)| a + 8.0 * s)
        .fold(0.0f64, f64::max);
    if range <= 0.0 {
        // All corrections are exactly zero: full tie.
        return vec![1.0 / m as f64; m];
    }

    let pm_cut = range / POINT_MASS_DIVISOR;
    let is_pm: Vec<bool> = eff.iter().map(|&(_, s)| s <= pm_cut).collect();

    // Continuous integrands must stop where the first point-mass atom sits:
    // past it that atom is certainly smaller.
    let first_atom = eff
        .iter()
        .zip(&is_pm)
        .filter(|(_, &pm)| pm)
        .map(|(&(a, _), _)| a)
        .fold(f64::INFINITY, f64::min);
    let upper = range.min(first_atom);

    let survival = |k: usize, z: f64| -> f64 {
        let (a, s) = eff[k];
        if is_pm[k] {
            if z < a {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 - folded_normal_cdf(z, a, s)
        }
    };

    let mut w = vec![0.0; m];
    for i in 0..m {
        if is_pm[i] {
            let a_i = eff[i].0;
            // Smaller atom elsewhere kills the weight; equal atoms share.
            let mut ties = 0usize;
            let mut blocked = false;
            for k in 0..m {
                if k != i && is_pm[k] {
                    if eff[k].0 < a_i {
                        blocked = true;
                    } else if eff[k].0 == a_i {
                        ties += 1;
                    }
                }
            }
            if blocked {
                w[i] = 0.0;
                continue;
            }
            let mut p = 1.0;
            for k in 0..m {
                if k != i && !is_pm[k] {
                    p *= survival(k, a_i);
                }
            }
            w[i] = p / (ties + 1) as f64;
        } else {
            if upper <= 0.0 {
                w[i] = 0.0;
                continue;
            }
            let (a, s) = eff[i];
            w[i] = rule.integrate(0.0, upper, |z| {
                let mut p = folded_normal_pdf(z, a, s);
                for k in 0..m {
                    if k != i {
                        p *= survival(k, z);
                    }
                }
                p
            });
        }
    }
    w
}

/// One cheap model with its cost and correction surrogate.
#[derive(Clone, Debug)]
pub struct FidelityModel {
    pub label: String,
    pub evaluator: LimitStateFn,
    pub cost_tau: f64,
    pub gp: GpSurrogate,
}

/// The low-fidelity ensemble used inside the multifidelity learner.
#[derive(Clone, Debug)]
pub struct MfEnsemble {
    pub(crate) models: Vec<FidelityModel>,
    cost: Option<CostFunction>,
    gammas: Option<Vec<f64>>,
    rule: GaussLegendre,
}

/// Outcome of one surrogate query through the ensemble.
#[derive(Clone, Debug)]
pub struct CorrectedPrediction {
    /// f_used(x) + mean correction of the used model.
    pub value: f64,
    /// f_used(x) before correction.
    pub raw_value: f64,
    /// Posterior sd of the used model's correction (unscaled by cost).
    pub correction_sd: f64,
    /// Highest-weight model.
    pub chosen_index: usize,
    /// Model whose output was actually used (differs from chosen on fallback).
    pub used_index: usize,
    /// Models evaluated, in attempt order; drives call counters.
    pub attempted: Vec<usize>,
    pub weights: Vec<f64>,
    /// True when the chosen model returned non-finite output.
    pub degraded: bool,
}

impl MfEnsemble {
    pub fn new(models: Vec<FidelityModel>, cost: Option<CostFunction>) -> Result<Self, MfError> {
        if models.is_empty() {
            return Err(MfError::Empty);
        }
        let dim = models[0].gp.dimension();
        for (i, m) in models.iter().enumerate() {
            if !(m.cost_tau.is_finite() && m.cost_tau > 0.0) {
                return Err(MfError::InvalidModel {
                    index: i,
                    message: "cost tau must be finite and > 0",
                });
            }
            if m.gp.dimension() != dim {
                return Err(MfError::InvalidModel {
                    index: i,
                    message: "correction surrogate dimension mismatch",
                });
            }
        }
        let gammas = cost
            .as_ref()
            .map(|c| models.iter().map(|m| c.gamma(m.cost_tau)).collect());
        Ok(Self {
            models,
            cost,
            gammas,
            rule: GaussLegendre::new(WEIGHT_QUADRATURE_NODES),
        })
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn models(&self) -> &[FidelityModel] {
        &self.models
    }

    pub fn cost(&self) -> Option<&CostFunction> {
        self.cost.as_ref()
    }

    /// Replace model i's correction surrogate (after an acquisition).
    pub fn set_gp(&mut self, index: usize, gp: GpSurrogate) {
        self.models[index].gp = gp;
    }

    /// Correction posteriors and selection weights at a query point.
    pub fn weights_at(&self, x: &[f64]) -> (Vec<Prediction>, Vec<f64>) {
        let corrections: Vec<Prediction> = self.models.iter().map(|m| m.gp.predict(x)).collect();
        let w = compute_weights(&corrections, self.gammas.as_deref(), &self.rule);
        (corrections, w)
    }

    /// Pick the highest-weight model, evaluate it, and apply its correction.
    ///
    /// Non-finite model output falls back to the next model by weight; every
    /// attempted evaluator call is recorded so callers can keep honest call
    /// counters. Ties in weight resolve to the lower index.
    pub fn select_and_correct(&self, x: &[f64]) -> Result<CorrectedPrediction, MfError> {
        let (corrections, weights) = self.weights_at(x);
        let mut order: Vec<usize> = (0..self.models.len()).collect();
        order.sort_by(|&a, &b| {
            weights[b]
                .partial_cmp(&weights[a])
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let chosen_index = order[0];

        let mut attempted = Vec::with_capacity(1);
        for &idx in &order {
            let raw = (self.models[idx].evaluator)(x);
            attempted.push(idx);
            if raw.is_finite() {
                return Ok(CorrectedPrediction {
                    value: raw + corrections[idx].mean,
                    raw_value: raw,
                    correction_sd: corrections[idx].sd,
                    chosen_index,
                    used_index: idx,
                    degraded: idx != chosen_index,
                    attempted,
                    weights,
                });
            }
        }
        Err(MfError::AllModelsFailed)
    }
}
