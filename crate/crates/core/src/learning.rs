//! U-function active learning on top of the subset engine.
//!
//! The U-criterion measures, in posterior standard deviations, how far a
//! surrogate's estimate sits from the threshold it is classifying against:
//! `U = |estimate - threshold| / sd`. Belief-dominated samples (U >= 2 by
//! default, roughly 2.3% misclassification risk) are answered by the
//! surrogate; anything closer triggers an acquisition: the expensive model is
//! called, the training set grows, and hyperparameters are retuned on a fixed
//! cadence.
//!
//! Two evaluators implement [`LevelEvaluator`]:
//!
//! * [`SingleFidelityLearner`]: one GP regresses the expensive response
//!   directly.
//! * [`MultifidelityLearner`]: a GP per cheap model regresses its correction;
//!   queries go to the cheap model most likely to have the smallest absolute
//!   correction (see [`crate::multifid`]), and an acquisition updates every
//!   correction surrogate at once.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dist::InputSpace;
use crate::doe::latin_hypercube;
use crate::gp::{
    optimize_hyperparameters, optimize_hyperparameters_budgeted, GpError, GpSurrogate,
};
use crate::linalg::Matrix;
use crate::math::{abs, std_normal_cdf};
use crate::multifid::{CorrectedPrediction, CostFunction, FidelityModel, MfEnsemble, MfError};
use crate::rng::{RunRng, SeedStreams};
use crate::subset::{CallCounters, EvalError, Evaluation, LevelEvaluator, LevelExtras};
use crate::LimitStateFn;

/// Restart and iteration budget for in-loop hyperparameter retuning; initial
/// training uses the caller-visible `optimizer_restarts` with the full budget.
const REOPT_RESTARTS: usize = 2;
const REOPT_MAX_ITER: usize = 80;

/// Learning-fraction of a run distance from a threshold, in posterior sds.
/// sd = 0 means absolute belief: U is +infinity and never triggers.
pub fn u_single_fidelity(mean: f64, sd: f64, threshold: f64) -> f64 {
    if sd <= 0.0 {
        f64::INFINITY
    } else {
        abs(mean - threshold) / sd
    }
}

/// Multifidelity U: the estimate is cheap-model output plus mean correction,
/// and the uncertainty is the correction surrogate's.
pub fn u_multifidelity(lf_value: f64, correction_mean: f64, correction_sd: f64, threshold: f64) -> f64 {
    u_single_fidelity(lf_value + correction_mean, correction_sd, threshold)
}

/// When surrogates retrain as acquisitions arrive.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum RetrainPolicy {
    /// Every acquisition appends immediately (hyperparameters kept; retuned
    /// on the `reoptimize_every` cadence).
    EveryAcquisition,
    /// Acquisitions buffer and the surrogate refits+retunes every k-th one;
    /// the buffer also flushes at level boundaries.
    Batched(usize),
}

/// Active-learning knobs.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ULearningConfig {
    /// Acquisition trigger: U below this calls the expensive model.
    pub u_threshold: f64,
    pub retrain: RetrainPolicy,
    /// Full hyperparameter retune every this-many acquisitions.
    pub reoptimize_every: u64,
    /// Initial design size; None means max(10, 3*dim).
    pub doe_size: Option<usize>,
    /// Half-width of the initial-design box in standard-normal u-space.
    pub doe_span_sd: f64,
    /// Restarts for the initial hyperparameter optimization.
    pub optimizer_restarts: usize,
}

impl Default for ULearningConfig {
    fn default() -> Self {
        Self {
            u_threshold: 2.0,
            retrain: RetrainPolicy::EveryAcquisition,
            reoptimize_every: 5,
            doe_size: None,
            doe_span_sd: 5.0,
            optimizer_restarts: 5,
        }
    }
}

impl ULearningConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        if !(self.u_threshold.is_finite() && self.u_threshold > 0.0) {
            return Err(LearnError::InvalidConfig {
                message: "u_threshold must be finite and > 0",
            });
        }
        if let RetrainPolicy::Batched(0) = self.retrain {
            return Err(LearnError::InvalidConfig {
                message: "batched retraining needs a batch size of at least 1",
            });
        }
        if self.reoptimize_every == 0 {
            return Err(LearnError::InvalidConfig {
                message: "reoptimize_every must be at least 1",
            });
        }
        if let Some(n) = self.doe_size {
            if n < 2 {
                return Err(LearnError::InvalidConfig {
                    message: "doe_size must be at least 2",
                });
            }
        }
        if !(self.doe_span_sd.is_finite() && self.doe_span_sd > 0.0) {
            return Err(LearnError::InvalidConfig {
                message: "doe_span_sd must be finite and > 0",
            });
        }
        if self.optimizer_restarts == 0 {
            return Err(LearnError::InvalidConfig {
                message: "optimizer_restarts must be at least 1",
            });
        }
        Ok(())
    }

    fn doe_points(&self, dim: usize) -> usize {
        self.doe_size.unwrap_or_else(|| (3 * dim).max(10))
    }
}

/// Setup failures for learners.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum LearnError {
    #[error("invalid learning configuration: {message}")]
    InvalidConfig { message: &'static str },
    #[error("initial design: model '{label}' returned non-finite output at point {index}")]
    NonFiniteDesignOutput { label: String, index: usize },
    #[error("surrogate training failed: {0}")]
    Gp(#[from] GpError),
    #[error(transparent)]
    Mf(#[from] MfError),
}

/// One U-triggered expensive call, recorded for the acquisition log.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AcquisitionEvent {
    /// 0-based acquisition number within the run.
    pub ordinal: u64,
    /// Level whose threshold was being defended.
    pub level: usize,
    /// Threshold the U-check ran against.
    pub threshold: f64,
    pub u_value: f64,
    pub sample: Vec<f64>,
    pub hf_value: f64,
    /// Cheap model whose answer was on the table (multifidelity only).
    pub chosen_lf: Option<usize>,
    pub hf_calls_before: u64,
    pub total_model_calls_before: u64,
}

/// Initial description of one cheap model for the multifidelity learner.
#[derive(Clone, Debug)]
pub struct LfInit {
    pub label: String,
    pub evaluator: LimitStateFn,
    pub cost_tau: f64,
}

/// Map a Latin hypercube in (0,1)^d through a +-span_sd standard-normal box
/// into physical space via each marginal's quantile.
fn design_matrix(space: &InputSpace, n: usize, span_sd: f64, rng: &mut RunRng) -> Matrix {
    let d = space.dimension();
    let mut m = latin_hypercube(n, d, rng);
    for i in 0..n {
        for j in 0..d {
            let u = span_sd * (2.0 * m.get(i, j) - 1.0);
            let p = std_normal_cdf(u);
            // p is strictly inside (0,1) for finite u, so this cannot fail.
            let x = space
                .marginal(j)
                .quantile(p)
                .expect("interior probability");
            m.set(i, j, x);
        }
    }
    m
}

/// Active learner with one GP over the expensive response.
pub struct SingleFidelityLearner {
    hf: LimitStateFn,
    gp: GpSurrogate,
    config: ULearningConfig,
    counters: CallCounters,
    events: Vec<AcquisitionEvent>,
    acq_total: u64,
    pending: Vec<(Vec<f64>, f64)>,
    level: usize,
    extras: LevelExtras,
    opt_rng: RunRng,
}

impl SingleFidelityLearner {
    /// Build the initial design, evaluate the expensive model on it, and
    /// train the surrogate with multi-start hyperparameter optimization.
    pub fn init(
        hf: LimitStateFn,
        space: &InputSpace,
        config: ULearningConfig,
        streams: &SeedStreams,
    ) -> Result<Self, LearnError> {
        config.validate()?;
        let n = config.doe_points(space.dimension());
        let x = design_matrix(space, n, config.doe_span_sd, &mut streams.named("doe"));
        let mut counters = CallCounters::default();
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let v = hf(x.row(i));
            counters.high_fidelity += 1;
            if !v.is_finite() {
                return Err(LearnError::NonFiniteDesignOutput {
                    label: String::from("high-fidelity"),
                    index: i,
                });
            }
            y.push(v);
        }
        let params = optimize_hyperparameters(
            &x,
            &y,
            config.optimizer_restarts,
            &mut streams.named("gp-opt"),
        )?;
        let gp = GpSurrogate::fit(&x, &y, params)?;
        Ok(Self {
            hf,
            gp,
            config,
            counters,
            events: Vec::new(),
            acq_total: 0,
            pending: Vec::new(),
            level: 0,
            extras: LevelExtras::default(),
            opt_rng: streams.named("gp-reopt"),
        })
    }

    pub fn gp(&self) -> &GpSurrogate {
        &self.gp
    }

    pub fn events(&self) -> &[AcquisitionEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<AcquisitionEvent> {
        self.events
    }

    fn acquire(&mut self, x: &[f64], u: f64, threshold: f64, index: usize) -> Result<f64, EvalError> {
        let hf_before = self.counters.high_fidelity;
        let total_before = self.counters.total_model_calls();
        let y = (self.hf)(x);
        self.counters.high_fidelity += 1;
        if !y.is_finite() {
            return Err(EvalError::NonFiniteModelOutput { index });
        }
        self.events.push(AcquisitionEvent {
            ordinal: self.acq_total,
            level: self.level,
            threshold,
            u_value: u,
            sample: x.to_vec(),
            hf_value: y,
            chosen_lf: None,
            hf_calls_before: hf_before,
            total_model_calls_before: total_before,
        });
        self.acq_total += 1;
        self.extras.acquisitions += 1;

        match self.config.retrain {
            RetrainPolicy::EveryAcquisition => {
                self.gp = self.gp.add_point(x, y)?;
                if self.acq_total % self.config.reoptimize_every == 0 {
                    self.retune()?;
                }
            }
            RetrainPolicy::Batched(k) => {
                self.pending.push((x.to_vec(), y));
                if self.pending.len() >= k {
                    self.flush_pending()?;
                }
            }
        }
        Ok(y)
    }

    fn retune(&mut self) -> Result<(), EvalError> {
        match optimize_hyperparameters_budgeted(
            self.gp.raw_inputs(),
            self.gp.raw_targets(),
            REOPT_RESTARTS,
            REOPT_MAX_ITER,
            &mut self.opt_rng,
        ) {
            Ok(params) => {
                self.gp = self.gp.refit(params)?;
                Ok(())
            }
            // No finite likelihood found: keep the current hyperparameters.
            Err(GpError::OptimizationFailed { .. }) => Ok(()),
            Err(e) => Err(e.into()),
        }
    }

    fn flush_pending(&mut self) -> Result<bool, EvalError> {
        if self.pending.is_empty() {
            return Ok(false);
        }
        let mut inputs = self.gp.raw_inputs().clone();
        let mut targets = self.gp.raw_targets().to_vec();
        for (x, y) in self.pending.drain(..) {
            inputs.push_row(&x);
            targets.push(y);
        }
        let params = match optimize_hyperparameters_budgeted(
            &inputs,
            &targets,
            REOPT_RESTARTS,
            REOPT_MAX_ITER,
            &mut self.opt_rng,
        ) {
            Ok(p) => p,
            Err(GpError::OptimizationFailed { fallback }) => fallback,
            Err(e) => return Err(e.into()),
        };
        self.gp = GpSurrogate::fit(&inputs, &targets, params).map_err(EvalError::from)?;
        Ok(true)
    }
}

impl LevelEvaluator for SingleFidelityLearner {
    fn evaluate(
        &mut self,
        points: &Matrix,
        guard: Option<f64>,
    ) -> Result<Vec<Evaluation>, EvalError> {
        let mut out = Vec::with_capacity(points.rows());
        for i in 0..points.rows() {
            let row = points.row(i);
            let p = self.gp.predict(row);
            self.counters.surrogate_predictions += 1;
            match guard {
                Some(t) => {
                    let u = u_single_fidelity(p.mean, p.sd, t);
                    if u < self.config.u_threshold {
                        let y = self.acquire(row, u, t, i)?;
                        out.push(Evaluation::high_fidelity(y));
                    } else {
                        out.push(Evaluation::surrogate(p.mean));
                    }
                }
                None => out.push(Evaluation::surrogate(p.mean)),
            }
        }
        Ok(out)
    }

    fn harden(
        &mut self,
        points: &Matrix,
        values: &mut [Evaluation],
        threshold: f64,
    ) -> Result<usize, EvalError> {
        let mut acquired = 0;
        for i in 0..points.rows() {
            if values[i].source != crate::subset::OutputSource::Surrogate {
                continue;
            }
            let row = points.row(i);
            let p = self.gp.predict(row);
            self.counters.surrogate_predictions += 1;
            let u = u_single_fidelity(p.mean, p.sd, threshold);
            if u < self.config.u_threshold {
                let y = self.acquire(row, u, threshold, i)?;
                values[i] = Evaluation::high_fidelity(y);
                acquired += 1;
            } else {
                values[i] = Evaluation::surrogate(p.mean);
            }
        }
        Ok(acquired)
    }

    fn flush(&mut self) -> Result<bool, EvalError> {
        self.flush_pending()
    }

    fn begin_level(&mut self, level: usize) {
        self.level = level;
    }

    fn counters(&self) -> CallCounters {
        self.counters.clone()
    }

    fn take_level_extras(&mut self) -> LevelExtras {
        core::mem::take(&mut self.extras)
    }
}

/// Active learner over an ensemble of cheap models with correction GPs.
pub struct MultifidelityLearner {
    hf: LimitStateFn,
    ensemble: MfEnsemble,
    config: ULearningConfig,
    counters: CallCounters,
    events: Vec<AcquisitionEvent>,
    acq_total: u64,
    /// Buffered acquisitions: sample, expensive value, per-model cheap value
    /// (None where a model failed at that point).
    pending: Vec<(Vec<f64>, f64, Vec<Option<f64>>)>,
    level: usize,
    extras: LevelExtras,
    opt_rng: RunRng,
}

impl MultifidelityLearner {
    /// Evaluate the shared initial design on the expensive model and every
    /// cheap model, then train one correction surrogate per cheap model.
    pub fn init(
        hf: LimitStateFn,
        low_fidelity: &[LfInit],
        cost: Option<CostFunction>,
        space: &InputSpace,
        config: ULearningConfig,
        streams: &SeedStreams,
    ) -> Result<Self, LearnError> {
        config.validate()?;
        if low_fidelity.is_empty() {
            return Err(LearnError::Mf(MfError::Empty));
        }
        let n = config.doe_points(space.dimension());
        let x = design_matrix(space, n, config.doe_span_sd, &mut streams.named("doe"));
        let m = low_fidelity.len();
        let mut counters = CallCounters {
            low_fidelity: vec![0; m],
            ..CallCounters::default()
        };

        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            let v = hf(x.row(i));
            counters.high_fidelity += 1;
            if !v.is_finite() {
                return Err(LearnError::NonFiniteDesignOutput {
                    label: String::from("high-fidelity"),
                    index: i,
                });
            }
            y.push(v);
        }

        let mut models = Vec::with_capacity(m);
        for (k, lf) in low_fidelity.iter().enumerate() {
            let mut corrections = Vec::with_capacity(n);
            for i in 0..n {
                let v = (lf.evaluator)(x.row(i));
                counters.low_fidelity[k] += 1;
                if !v.is_finite() {
                    return Err(LearnError::NonFiniteDesignOutput {
                        label: lf.label.clone(),
                        index: i,
                    });
                }
                corrections.push(y[i] - v);
            }
            let params = optimize_hyperparameters(
                &x,
                &corrections,
                config.optimizer_restarts,
                &mut streams.indexed("gp-opt", k as u64),
            )?;
            let gp = GpSurrogate::fit(&x, &corrections, params)?;
            models.push(FidelityModel {
                label: lf.label.clone(),
                evaluator: lf.evaluator,
                cost_tau: lf.cost_tau,
                gp,
            });
        }

        let ensemble = MfEnsemble::new(models, cost)?;
        Ok(Self {
            hf,
            ensemble,
            config,
            counters,
            events: Vec::new(),
            acq_total: 0,
            pending: Vec::new(),
            level: 0,
            extras: LevelExtras {
                lf_selections: vec![0; m],
                ..LevelExtras::default()
            },
            opt_rng: streams.named("gp-reopt"),
        })
    }

    pub fn ensemble(&self) -> &MfEnsemble {
        &self.ensemble
    }

    pub fn events(&self) -> &[AcquisitionEvent] {
        &self.events
    }

    pub fn into_events(self) -> Vec<AcquisitionEvent> {
        self.events
    }

    /// One surrogate answer through the ensemble, with call accounting.
    fn surrogate_answer(&mut self, row: &[f64]) -> Result<CorrectedPrediction, EvalError> {
        let cp = self.ensemble.select_and_correct(row)?;
        self.counters.surrogate_predictions += 1;
        for &idx in &cp.attempted {
            self.counters.low_fidelity[idx] += 1;
        }
        if self.extras.lf_selections.is_empty() {
            self.extras.lf_selections = vec![0; self.ensemble.len()];
        }
        self.extras.lf_selections[cp.used_index] += 1;
        if cp.degraded {
            self.extras.degradations += 1;
        }
        Ok(cp)
    }

    fn acquire(
        &mut self,
        x: &[f64],
        u: f64,
        threshold: f64,
        cp: &CorrectedPrediction,
        index: usize,
    ) -> Result<f64, EvalError> {
        let hf_before = self.counters.high_fidelity;
        let total_before = self.counters.total_model_calls();
        let y = (self.hf)(x);
        self.counters.high_fidelity += 1;
        if !y.is_finite() {
            return Err(EvalError::NonFiniteModelOutput { index });
        }
        self.events.push(AcquisitionEvent {
            ordinal: self.acq_total,
            level: self.level,
            threshold,
            u_value: u,
            sample: x.to_vec(),
            hf_value: y,
            chosen_lf: Some(cp.chosen_index),
            hf_calls_before: hf_before,
            total_model_calls_before: total_before,
        });
        self.acq_total += 1;
        self.extras.acquisitions += 1;

        // Every correction surrogate learns from the expensive call; the
        // used model's raw output was already computed during selection.
        let m = self.ensemble.len();
        let mut lf_values: Vec<Option<f64>> = vec![None; m];
        for k in 0..m {
            let raw = if k == cp.used_index {
                cp.raw_value
            } else {
                self.counters.low_fidelity[k] += 1;
                (self.ensemble.models()[k].evaluator)(x)
            };
            if raw.is_finite() {
                lf_values[k] = Some(raw);
            }
        }

        match self.config.retrain {
            RetrainPolicy::EveryAcquisition => {
                for k in 0..m {
                    if let Some(raw) = lf_values[k] {
                        let gp = self.ensemble.models()[k].gp.add_point(x, y - raw)?;
                        self.ensemble.set_gp(k, gp);
                    }
                }
                if self.acq_total % self.config.reoptimize_every == 0 {
                    self.retune_all()?;
                }
            }
            RetrainPolicy::Batched(k_batch) => {
                self.pending.push((x.to_vec(), y, lf_values));
                if self.pending.len() >= k_batch {
                    self.flush_pending()?;
                }
            }
        }
        Ok(y)
    }

    fn retune_all(&mut self) -> Result<(), EvalError> {
        for k in 0..self.ensemble.len() {
            let (inputs, targets) = {
                let gp = &self.ensemble.models()[k].gp;
                (gp.raw_inputs().clone(), gp.raw_targets().to_vec())
            };
            match optimize_hyperparameters_budgeted(
                &inputs,
                &targets,
                REOPT_RESTARTS,
                REOPT_MAX_ITER,
                &mut self.opt_rng,
            ) {
                Ok(params) => {
                    let gp = self.ensemble.models()[k].gp.refit(params)?;
                    self.ensemble.set_gp(k, gp);
                }
                Err(GpError::OptimizationFailed { .. }) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(())
    }

    fn flush_pending(&mut self) -> Result<bool, EvalError> {
        if self.pending.is_empty() {
            return Ok(false);
        }
        let pending = core::mem::take(&mut self.pending);
        for k in 0..self.ensemble.len() {
            let gp = &self.ensemble.models()[k].gp;
            let mut inputs = gp.raw_inputs().clone();
            let mut targets = gp.raw_targets().to_vec();
            for (x, y, lf_values) in &pending {
                if let Some(raw) = lf_values[k] {
                    inputs.push_row(x);
                    targets.push(y - raw);
                }
            }
            if targets.len() == gp.raw_targets().len() {
                continue;
            }
            let params = match optimize_hyperparameters_budgeted(
                &inputs,
                &targets,
                REOPT_RESTARTS,
                REOPT_MAX_ITER,
                &mut self.opt_rng,
            ) {
                Ok(p) => p,
                Err(GpError::OptimizationFailed { fallback }) => fallback,
                Err(e) => return Err(e.into()),
            };
            let gp = GpSurrogate::fit(&inputs, &targets, params).map_err(EvalError::from)?;
            self.ensemble.set_gp(k, gp);
        }
        Ok(true)
    }
}

impl LevelEvaluator for MultifidelityLearner {
    fn evaluate(
        &mut self,
        points: &Matrix,
        guard: Option<f64>,
    ) -> Result<Vec<Evaluation>, EvalError> {
        let mut out = Vec::with_capacity(points.rows());
        for i in 0..points.rows() {
            let row = points.row(i);
            let cp = self.surrogate_answer(row)?;
            match guard {
                Some(t) => {
                    let u = u_single_fidelity(cp.value, cp.correction_sd, t);
                    if u < self.config.u_threshold {
                        let y = self.acquire(row, u, t, &cp, i)?;
                        out.push(Evaluation::high_fidelity(y));
                    } else {
                        out.push(Evaluation::surrogate(cp.value));
                    }
                }
                None => out.push(Evaluation::surrogate(cp.value)),
            }
        }
        Ok(out)
    }

    fn harden(
        &mut self,
        points: &Matrix,
        values: &mut [Evaluation],
        threshold: f64,
    ) -> Result<usize, EvalError> {
        let mut acquired = 0;
        for i in 0..points.rows() {
            if values[i].source != crate::subset::OutputSource::Surrogate {
                continue;
            }
            let row = points.row(i);
            let cp = self.surrogate_answer(row)?;
            let u = u_single_fidelity(cp.value, cp.correction_sd, threshold);
            if u < self.config.u_threshold {
                let y = self.acquire(row, u, threshold, &cp, i)?;
                values[i] = Evaluation::high_fidelity(y);
                acquired += 1;
            } else {
                values[i] = Evaluation::surrogate(cp.value);
            }
        }
        Ok(acquired)
    }

    fn flush(&mut self) -> Result<bool, EvalError> {
        self.flush_pending()
    }

    fn begin_level(&mut self, level: usize) {
        self.level = level;
    }

    fn counters(&self) -> CallCounters {
        self.counters.clone()
    }

    fn take_level_extras(&mut self) -> LevelExtras {
        let m = self.ensemble.len();
        core::mem::replace(
            &mut self.extras,
            LevelExtras {
                lf_selections: vec![0; m],
                ..LevelExtras::default()
            },
        )
    }
}
