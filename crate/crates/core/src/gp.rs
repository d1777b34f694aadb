//! Gaussian process regression with a squared-exponential kernel.
//!
//! Written from scratch on top of [`crate::linalg`]: anisotropic
//! squared-exponential kernel, Cholesky-based exact inference, log marginal
//! likelihood, and multi-start Nelder-Mead hyperparameter optimization in
//! log-parameter space. Inputs are standardized per dimension and targets
//! centered inside `fit`; the stored transforms make predictions transparent
//! to callers.
//!
//! Conventions:
//! * the nugget is an absolute jitter added to the kernel matrix diagonal and
//!   never drops below [`NUGGET_FLOOR`];
//! * factorization failures escalate the nugget through a fixed ladder before
//!   giving up;
//! * predictions are for the latent function, so the nugget does not inflate
//!   the reported variance, and the variance is clamped at zero.

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{cholesky, Cholesky, Matrix};
use crate::math::{exp, ln, sqrt, LN_2PI};
use crate::rng::{unit_open, RunRng};

/// Smallest nugget ever used; requests below it are raised to it.
pub const NUGGET_FLOOR: f64 = 1e-10;

/// Escalation ladder tried when the kernel matrix fails to factor.
const NUGGET_LADDER: [f64; 3] = [1e-10, 1e-8, 1e-6];

/// Nugget used for hyperparameter optimization and the surrogates it feeds;
/// mid-ladder, robust against near-duplicate acquisitions.
pub const OPTIMIZER_NUGGET: f64 = 1e-8;

/// Errors from fitting, updating, or tuning a surrogate.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GpError {
    #[error("invalid kernel parameters: {message}")]
    InvalidParams { message: &'static str },
    #[error("training data shape mismatch: {inputs} input rows vs {targets} targets")]
    ShapeMismatch { inputs: usize, targets: usize },
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("non-finite value in training data at row {index}")]
    NonFiniteData { index: usize },
    #[error(
        "kernel matrix ({size}x{size}) not positive definite even at nugget {max_nugget:.1e}"
    )]
    Factorization { size: usize, max_nugget: f64 },
    #[error("no restart produced a finite likelihood; best-effort fallback params attached")]
    OptimizationFailed { fallback: KernelParams },
}

/// Squared-exponential kernel hyperparameters (standardized input space).
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KernelParams {
    pub signal_variance: f64,
    pub lengthscales: Vec<f64>,
    pub nugget: f64,
}

impl KernelParams {
    pub fn new(
        signal_variance: f64,
        lengthscales: Vec<f64>,
        nugget: f64,
    ) -> Result<Self, GpError> {
        if !(signal_variance.is_finite() && signal_variance > 0.0) {
            return Err(GpError::InvalidParams {
                message: "signal variance must be finite and > 0",
            });
        }
        if lengthscales.is_empty() {
            return Err(GpError::InvalidParams {
                message: "need at least one lengthscale",
            });
        }
        if lengthscales.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(GpError::InvalidParams {
                message: "lengthscales must be finite and > 0",
            });
        }
        if !(nugget.is_finite() && nugget >= 0.0) {
            return Err(GpError::InvalidParams {
                message: "nugget must be finite and >= 0",
            });
        }
        Ok(Self {
            signal_variance,
            lengthscales,
            nugget: nugget.max(NUGGET_FLOOR),
        })
    }

    pub fn dimension(&self) -> usize {
        self.lengthscales.len()
    }
}

/// Anisotropic squared-exponential kernel.
///
/// Panics on dimension mismatch; that is a programming error, not data.
pub fn kernel(a: &[f64], b: &[f64], params: &KernelParams) -> f64 {
    assert_eq!(a.len(), b.len(), "kernel arguments differ in dimension");
    assert_eq!(
        a.len(),
        params.lengthscales.len(),
        "kernel arguments do not match lengthscale count"
    );
    let mut s = 0.0;
    for ((&x, &y), &l) in a.iter().zip(b).zip(&params.lengthscales) {
        let d = (x - y) / l;
        s += d * d;
    }
    params.signal_variance * exp(-0.5 * s)
}

/// Posterior mean and standard deviation at one query point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub sd: f64,
}

/// A fitted Gaussian process surrogate. Serializable (with the `serde`
/// feature) so learner state can be checkpointed alongside run results.
#[derive(Clone, Debug)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GpSurrogate {
    params: KernelParams,
    effective_nugget: f64,
    x_shift: Vec<f64>,
    x_scale: Vec<f64>,
    y_shift: f64,
    /// Standardized training inputs.
    train: Matrix,
    /// Centered targets.
    targets: Vec<f64>,
    chol: Cholesky,
    alpha: Vec<f64>,
    raw_inputs: Matrix,
    raw_targets: Vec<f64>,
}

impl GpSurrogate {
    /// Fit on raw data. Standardizes inputs per dimension (population sd;
    /// constant dimensions keep scale 1) and centers targets; hyperparameters
    /// are interpreted in the standardized space.
    pub fn fit(inputs: &Matrix, targets: &[f64], params: KernelParams) -> Result<Self, GpError> {
        let n = inputs.rows();
        if n == 0 {
            return Err(GpError::EmptyTrainingSet);
        }
        if n != targets.len() {
            return Err(GpError::ShapeMismatch {
                inputs: n,
                targets: targets.len(),
            });
        }
        let d = inputs.cols();
        if params.dimension() != d {
            return Err(GpError::InvalidParams {
                message: "lengthscale count != input dimension",
            });
        }
        for i in 0..n {
            if inputs.row(i).iter().any(|v| !v.is_finite()) || !targets[i].is_finite() {
                return Err(GpError::NonFiniteData { index: i });
            }
        }

        let (x_shift, x_scale) = standardization(inputs);
        let y_shift = crate::stats::mean(targets);

        let mut train = Matrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                train.set(i, j, (inputs.get(i, j) - x_shift[j]) / x_scale[j]);
            }
        }
        let centered: Vec<f64> = targets.iter().map(|y| y - y_shift).collect();

        let (chol, effective_nugget) = factor_with_ladder(&train, &params)?;
        let alpha = chol.solve(&centered);

        Ok(Self {
            params,
            effective_nugget,
            x_shift,
            x_scale,
            y_shift,
            train,
            targets: centered,
            chol,
            alpha,
            raw_inputs: inputs.clone(),
            raw_targets: targets.to_vec(),
        })
    }

    /// Refit the same data under new hyperparameters.
    pub fn refit(&self, params: KernelParams) -> Result<Self, GpError> {
        Self::fit(&self.raw_inputs, &self.raw_targets, params)
    }

    /// Add one observation, keeping the stored transforms and hyperparameters.
    ///
    /// Keeping the coordinate system fixed is what makes "more data never
    /// increases posterior variance" hold exactly; it also means acquisitions
    /// do not shift the model under the active-learning loop between retunes.
    pub fn add_point(&self, x: &[f64], y: f64) -> Result<Self, GpError> {
        if x.len() != self.dimension() {
            return Err(GpError::ShapeMismatch {
                inputs: x.len(),
                targets: self.dimension(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) || !y.is_finite() {
            return Err(GpError::NonFiniteData {
                index: self.n_train(),
            });
        }
        let mut next = self.clone();
        next.raw_inputs.push_row(x);
        next.raw_targets.push(y);
        let std_row: Vec<f64> = x
            .iter()
            .zip(next.x_shift.iter().zip(&next.x_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        next.train.push_row(&std_row);
        next.targets.push(y - next.y_shift);

        let (chol, effective_nugget) = factor_with_ladder(&next.train, &next.params)?;
        next.chol = chol;
        next.effective_nugget = effective_nugget;
        next.alpha = next.chol.solve(&next.targets);
        Ok(next)
    }

    /// Posterior mean and sd of the latent function at a raw-space query.
    pub fn predict(&self, x: &[f64]) -> Prediction {
        assert_eq!(x.len(), self.dimension(), "query dimension mismatch");
        let n = self.n_train();
        let std_q: Vec<f64> = x
            .iter()
            .zip(self.x_shift.iter().zip(&self.x_scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect();
        let mut kstar = vec![0.0; n];
        for i in 0..n {
            kstar[i] = kernel(self.train.row(i), &std_q, &self.params);
        }
        let mean = self.y_shift
            + kstar
                .iter()
                .zip(&self.alpha)
                .map(|(k, a)| k * a)
                .sum::<f64>();
        let v = self.chol.solve_lower(&kstar);
        let reduction: f64 = v.iter().map(|t| t * t).sum();
        let var = (self.params.signal_variance - reduction).max(0.0);
        Prediction {
            mean,
            sd: sqrt(var),
        }
    }

    /// Log marginal likelihood of the centered targets under the fitted model.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let fit: f64 = self
            .targets
            .iter()
            .zip(&self.alpha)
            .map(|(y, a)| y * a)
            .sum();
        -0.5 * fit - 0.5 * self.chol.log_det() - 0.5 * self.n_train() as f64 * LN_2PI
    }

    pub fn n_train(&self) -> usize {
        self.train.rows()
    }

    pub fn dimension(&self) -> usize {
        self.train.cols()
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }

    pub fn effective_nugget(&self) -> f64 {
        self.effective_nugget
    }

    pub fn raw_inputs(&self) -> &Matrix {
        &self.raw_inputs
    }

    pub fn raw_targets(&self) -> &[f64] {
        &self.raw_targets
    }

    /// Per-dimension standardization scale (population sd of the inputs).
    pub fn input_scale(&self) -> &[f64] {
        &self.x_scale
    }
}

/// Log marginal likelihood of `params` on a data set, via a full fit.
pub fn log_marginal_likelihood_for(
    inputs: &Matrix,
    targets: &[f64],
    params: KernelParams,
) -> Result<f64, GpError> {
    GpSurrogate::fit(inputs, targets, params).map(|g| g.log_marginal_likelihood())
}

/// Deterministic initial hyperparameter guess: lengthscale = one third of the
/// per-dimension standardized data range, signal variance = target variance.
pub fn default_initial_params(inputs: &Matrix, targets: &[f64]) -> Result<KernelParams, GpError> {
    let n = inputs.rows();
    if n == 0 {
        return Err(GpError::EmptyTrainingSet);
    }
    if n != targets.len() {
        return Err(GpError::ShapeMismatch {
            inputs: n,
            targets: targets.len(),
        });
    }
    let d = inputs.cols();
    let (shift, scale) = standardization(inputs);
    let mut ls = vec![1.0; d];
    for j in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..n {
            let v = (inputs.get(i, j) - shift[j]) / scale[j];
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let range = hi - lo;
        ls[j] = if range > 1e-9 { range / 3.0 } else { 1.0 };
    }
    let var = crate::stats::population_variance(targets).max(1e-8);
    KernelParams::new(var, ls, OPTIMIZER_NUGGET)
}

/// Multi-start Nelder-Mead maximization of the log marginal likelihood in
/// log-parameter space. Restart 0 starts at [`default_initial_params`]; later
/// restarts jitter each log-coordinate uniformly within a factor of four.
///
/// The returned parameters never score below the restart-0 initial guess:
/// the initial simplex contains it and the best vertex only improves.
pub fn optimize_hyperparameters(
    inputs: &Matrix,
    targets: &[f64],
    restarts: usize,
    rng: &mut RunRng,
) -> Result<KernelParams, GpError> {
    optimize_hyperparameters_budgeted(inputs, targets, restarts, 200, rng)
}

/// [`optimize_hyperparameters`] with an explicit per-restart iteration cap,
/// for in-loop retuning where wall clock matters more than the last digit.
pub fn optimize_hyperparameters_budgeted(
    inputs: &Matrix,
    targets: &[f64],
    restarts: usize,
    max_iter: usize,
    rng: &mut RunRng,
) -> Result<KernelParams, GpError> {
    let n = inputs.rows();
    if n < 2 {
        return Err(GpError::TooFewPoints { needed: 2, got: n });
    }
    let init = default_initial_params(inputs, targets)?;
    let d = inputs.cols();

    let objective = |lp: &[f64]| -> f64 {
        let sv = exp(lp[0].clamp(-20.0, 20.0));
        let ls: Vec<f64> = lp[1..]
            .iter()
            .map(|v| exp(v.clamp(-20.0, 20.0)))
            .collect();
        let params = match KernelParams::new(sv, ls, OPTIMIZER_NUGGET) {
            Ok(p) => p,
            Err(_) => return f64::INFINITY,
        };
        match log_marginal_likelihood_for(inputs, targets, params) {
            Ok(l) if l.is_finite() => -l,
            _ => f64::INFINITY,
        }
    };

    let mut base = vec![0.0; d + 1];
    base[0] = ln(init.signal_variance);
    for j in 0..d {
        base[1 + j] = ln(init.lengthscales[j]);
    }

    let mut best_x = base.clone();
    let mut best_f = f64::INFINITY;
    for r in 0..restarts.max(1) {
        let mut x0 = base.clone();
        if r > 0 {
            // Fixed draw count per restart keeps the stream alignment stable.
            for slot in x0.iter_mut() {
                let u = unit_open(rng);
                *slot += (2.0 * u - 1.0) * ln(4.0);
            }
        }
        let (x, f) = nelder_mead(objective, &x0, 0.25, max_iter, 1e-9);
        if f < best_f {
            best_f = f;
            best_x = x;
        }
    }

    if !best_f.is_finite() {
        return Err(GpError::OptimizationFailed { fallback: init });
    }
    let sv = exp(best_x[0].clamp(-20.0, 20.0));
    let ls: Vec<f64> = best_x[1..]
        .iter()
        .map(|v| exp(v.clamp(-20.0, 20.0)))
        .collect();
    KernelParams::new(sv, ls, OPTIMIZER_NUGGET)
}

/// Per-dimension (shift, scale) from column means and population sds.
/// Near-constant columns get scale 1 so standardization stays finite.
fn standardization(inputs: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = inputs.rows();
    let d = inputs.cols();
    let mut shift = vec![0.0; d];
    let mut scale = vec![1.0; d];
    for j in 0..d {
        let mut s = 0.0;
        for i in 0..n {
            s += inputs.get(i, j);
        }
        let m = s / n as f64;
        let mut v = 0.0;
        for i in 0..n {
            let t = inputs.get(i, j) - m;
            v += t * t;
        }
        let sd = sqrt(v / n as f64);
        shift[j] = m;
        scale[j] = if sd > 1e-12 { sd } else { 1.0 };
    }
    (shift, scale)
}

/// Build the kernel matrix and factor it, escalating the nugget through the
/// ladder on failure.
fn factor_with_ladder(
    train: &Matrix,
    params: &KernelParams,
) -> Result<(Cholesky, f64), GpError> {
    let n = train.rows();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel(train.row(i), train.row(j), params);
            k.set(i, j, v);
            k.set(j, i, v);
        }
    }
    let start = params.nugget.max(NUGGET_FLOOR);
    let mut tried = start;
    let mut ladder: Vec<f64> = vec![start];
    ladder.extend(NUGGET_LADDER.iter().copied().filter(|&x| x > start));
    for nug in ladder {
        tried = nug;
        let mut kn = k.clone();
        for i in 0..n {
            kn.set(i, i, kn.get(i, i) + nug);
        }
        if let Ok(ch) = cholesky(&kn) {
            return Ok((ch, nug));
        }
    }
    Err(GpError::Factorization {
        size: n,
        max_nugget: tried,
    })
}

/// Nelder-Mead simplex minimization.
///
/// Deterministic given `x0`; the initial simplex is x0 plus `step` along each
/// axis. Returns the best vertex and its value, which by construction is
/// never worse than f(x0). Infinite objective values are handled (they lose
/// comparisons), NaN is mapped to +inf.
pub(crate) fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: F,
    x0: &[f64],
    step: f64,
    max_iter: usize,
    f_tol: f64,
) -> (Vec<f64>, f64) {
    let n = x0.len();
    let eval = |x: &[f64]| -> f64 {
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), eval(x0)));
    for k in 0..n {
        let mut x = x0.to_vec();
        x[k] += step;
        let fx = eval(&x);
        simplex.push((x, fx));
    }

    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(core::cmp::Ordering::Equal));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        if worst.is_finite() && (worst - best).abs() <= f_tol * (1.0 + best.abs()) {
            break;
        }

        // Centroid of all but the worst vertex.
        let mut centroid = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / n as f64;
            }
        }

        let worst_x = simplex[n].0.clone();
        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&worst_x)
            .map(|(c, w)| c + (c - w))
            .collect();
        let f_reflect = eval(&reflect);

        if f_reflect < simplex[0].1 {
            // Try expanding past the reflection.
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&worst_x)
                .map(|(c, w)| c + 2.0 * (c - w))
                .collect();
            let f_expand = eval(&expand);
            simplex[n] = if f_expand < f_reflect {
                (expand, f_expand)
            } else {
                (reflect, f_reflect)
            };
        } else if f_reflect < simplex[n - 1].1 {
            simplex[n] = (reflect, f_reflect);
        } else {
            // Contract toward the centroid from whichever side is better.
            let (toward, f_toward) = if f_reflect < simplex[n].1 {
                (reflect, f_reflect)
            } else {
                (worst_x.clone(), simplex[n].1)
            };
            let contract: Vec<f64> = centroid
                .iter()
                .zip(&toward)
                .map(|(c, t)| c + 0.5 * (t - c))
                .collect();
            let f_contract = eval(&contract);
            if f_contract < f_toward {
                simplex[n] = (contract, f_contract);
            } else {
                // Shrink everything toward the best vertex.
                let best_x = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let shrunk: Vec<f64> = best_x
                        .iter()
                        .zip(&entry.0)
                        .map(|(b, v)| b + 0.5 * (v - b))
                        .collect();
                    let fv = eval(&shrunk);
                    *entry = (shrunk, fv);
                }
            }
        }
    }

    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(core::cmp::Ordering::Equal));
    let (x, fx) = simplex.swap_remove(0);
    (x, fx)
}
