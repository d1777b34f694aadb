//! Subset simulation with component-wise Metropolis-Hastings chains.
//!
//! The failure probability `P(F(X) > t)` is factored into conditional
//! probabilities across adaptively chosen intermediate thresholds: level 0 is
//! crude Monte Carlo; each later level reuses the top `p0*N` samples as seeds
//! for Markov chains conditioned on exceeding the previous threshold. The
//! estimator's coefficient of variation combines per-level terms with a
//! chain-autocorrelation factor.
//!
//! Model evaluation goes through [`LevelEvaluator`], which is where active
//! learning plugs in: a direct evaluator calls the expensive model for every
//! sample, while learning evaluators answer from a surrogate and escalate
//! only when the surrogate is uncertain near the threshold being defended.
//! Two hooks cover the two places a threshold matters:
//!
//! * `evaluate(points, guard)` during generation, guarding the accept/reject
//!   decisions against the previous level's threshold;
//! * `harden(points, values, threshold)` inside a fixed-point loop during
//!   threshold estimation, re-checking every surrogate value against the
//!   provisional current-level threshold until no acquisition fires.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::dist::InputSpace;
use crate::gp::GpError;
use crate::linalg::Matrix;
use crate::multifid::MfError;
use crate::rng::{standard_normal, unit_open, SeedStreams};
use crate::stats;

/// Default fraction of samples promoted to seeds at each level.
pub const DEFAULT_P0: f64 = 0.1;

/// Where an evaluation came from; drives call accounting and hardening.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(
    feature = "serde",
    derive(serde::Serialize, serde::Deserialize),
    serde(rename_all = "snake_case")
)]
pub enum OutputSource {
    HighFidelity,
    Surrogate,
}

/// One model response with its provenance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub source: OutputSource,
}

impl Evaluation {
    pub fn high_fidelity(value: f64) -> Self {
        Self {
            value,
            source: OutputSource::HighFidelity,
        }
    }

    pub fn surrogate(value: f64) -> Self {
        Self {
            value,
            source: OutputSource::Surrogate,
        }
    }
}

/// Failures raised by evaluators during a run.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("model returned non-finite output for sample {index}")]
    NonFiniteModelOutput { index: usize },
    #[error("surrogate update failed: {0}")]
    Gp(#[from] GpError),
    #[error("multifidelity ensemble failed: {0}")]
    Mf(#[from] MfError),
}

/// Cumulative model-call accounting.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CallCounters {
    pub high_fidelity: u64,
    /// One slot per low-fidelity model; empty when none exist.
    pub low_fidelity: Vec<u64>,
    pub surrogate_predictions: u64,
}

impl CallCounters {
    pub fn total_model_calls(&self) -> u64 {
        self.high_fidelity + self.low_fidelity.iter().sum::<u64>()
    }
}

/// Per-level diagnostics produced by learning evaluators.
#[derive(Clone, Debug, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LevelExtras {
    /// U-triggered expensive calls in this level.
    pub acquisitions: u64,
    /// How often each low-fidelity model's output was used.
    pub lf_selections: Vec<u64>,
    /// Fallbacks past a non-finite chosen model.
    pub degradations: u64,
}

/// Batch evaluation abstraction the subset engine drives.
pub trait LevelEvaluator {
    /// Evaluate every row of `points`. `guard` carries the threshold whose
    /// classification the values will decide (the previous level's threshold
    /// during chain generation); learning evaluators U-check against it.
    /// `None` means no threshold is in play yet (level-0 generation).
    fn evaluate(&mut self, points: &Matrix, guard: Option<f64>)
        -> Result<Vec<Evaluation>, EvalError>;

    /// Re-examine surrogate-sourced values against a provisional threshold,
    /// refreshing them under the current surrogate and acquiring expensive
    /// evaluations where the U-criterion fires. Returns the number of new
    /// expensive calls; zero means the values are a fixed point.
    fn harden(
        &mut self,
        points: &Matrix,
        values: &mut [Evaluation],
        threshold: f64,
    ) -> Result<usize, EvalError>;

    /// Flush any deferred surrogate retraining; `true` means the surrogate
    /// changed and hardening must run again.
    fn flush(&mut self) -> Result<bool, EvalError> {
        Ok(false)
    }

    /// Called once before each level starts.
    fn begin_level(&mut self, _level: usize) {}

    /// Snapshot of cumulative call counters.
    fn counters(&self) -> CallCounters;

    /// Drain per-level diagnostics accumulated since the last call.
    fn take_level_extras(&mut self) -> LevelExtras {
        LevelExtras::default()
    }
}

/// Plain evaluator: every sample goes to the expensive model.
pub struct DirectEvaluator {
    model: crate::LimitStateFn,
    counters: CallCounters,
}

impl DirectEvaluator {
    pub fn new(model: crate::LimitStateFn) -> Self {
        Self {
            model,
            counters: CallCounters::default(),
        }
    }
}

impl LevelEvaluator for DirectEvaluator {
    fn evaluate(
        &mut self,
        points: &Matrix,
        _guard: Option<f64>,
    ) -> Result<Vec<Evaluation>, EvalError> {
        let mut out = Vec::with_capacity(points.rows());
        for i in 0..points.rows() {
            let v = (self.model)(points.row(i));
            self.counters.high_fidelity += 1;
            if !v.is_finite() {
                return Err(EvalError::NonFiniteModelOutput { index: i });
            }
            out.push(Evaluation::high_fidelity(v));
        }
        Ok(out)
    }

    fn harden(
        &mut self,
        _points: &Matrix,
        _values: &mut [Evaluation],
        _threshold: f64,
    ) -> Result<usize, EvalError> {
        Ok(0)
    }

    fn counters(&self) -> CallCounters {
        self.counters.clone()
    }
}

/// Configuration of one subset run.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubsetConfig {
    /// Samples per level (N).
    pub samples_per_level: usize,
    /// Seed fraction per level; the threshold is the (1-p0) quantile.
    pub p0: f64,
    /// Hard cap on levels before giving up.
    pub max_levels: usize,
    /// The failure threshold t in P(F > t).
    pub failure_threshold: f64,
    /// Random-walk proposal sd as a multiple of each marginal's sd.
    pub proposal_scale: f64,
}

impl SubsetConfig {
    pub fn new(
        samples_per_level: usize,
        p0: f64,
        max_levels: usize,
        failure_threshold: f64,
    ) -> Result<Self, SubsetError> {
        let c = Self {
            samples_per_level,
            p0,
            max_levels,
            failure_threshold,
            proposal_scale: 1.0,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), SubsetError> {
        if self.samples_per_level < 10 {
            return Err(SubsetError::InvalidConfig {
                message: "samples_per_level must be at least 10",
            });
        }
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(SubsetError::InvalidConfig {
                message: "p0 must lie strictly inside (0,1)",
            });
        }
        if self.seeds_per_level() == 0 {
            return Err(SubsetError::InvalidConfig {
                message: "p0 * samples_per_level rounds to zero seeds",
            });
        }
        if self.max_levels == 0 {
            return Err(SubsetError::InvalidConfig {
                message: "max_levels must be at least 1",
            });
        }
        if !self.failure_threshold.is_finite() {
            return Err(SubsetError::InvalidConfig {
                message: "failure_threshold must be finite",
            });
        }
        if !(self.proposal_scale.is_finite() && self.proposal_scale > 0.0) {
            return Err(SubsetError::InvalidConfig {
                message: "proposal_scale must be finite and > 0",
            });
        }
        Ok(())
    }

    /// Seeds promoted per level: p0*N rounded to the nearest integer.
    pub fn seeds_per_level(&self) -> usize {
        libm::round(self.p0 * self.samples_per_level as f64) as usize
    }

    /// The seed fraction actually realized after rounding, when it differs
    /// from the requested p0 (callers may want to warn).
    pub fn effective_p0(&self) -> Option<f64> {
        let eff = self.seeds_per_level() as f64 / self.samples_per_level as f64;
        if (eff - self.p0).abs() > 1e-12 {
            Some(eff)
        } else {
            None
        }
    }
}

/// Errors from the subset engine.
#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum SubsetError {
    #[error("invalid subset configuration: {message}")]
    InvalidConfig { message: &'static str },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("level {level} is degenerate: all {n} outputs equal {value}")]
    DegenerateLevel { level: usize, n: usize, value: f64 },
    #[error("threshold stalled at level {level}: {threshold} does not exceed previous {previous}")]
    StalledThreshold {
        level: usize,
        threshold: f64,
        previous: f64,
    },
    #[error("no failure level reached within {max_levels} levels")]
    BudgetExhausted {
        max_levels: usize,
        /// Estimate from the completed levels; pf is the product so far and
        /// therefore an upper bound on the failure probability.
        partial: Box<RunResult>,
    },
}

/// Full state of one completed level.
#[derive(Clone, Debug)]
pub struct Level {
    pub index: usize,
    pub samples: Matrix,
    pub values: Vec<Evaluation>,
    pub chain_lengths: Vec<usize>,
    pub threshold: f64,
    pub is_final: bool,
    pub conditional_prob: f64,
    pub acceptance_rate: f64,
    pub gamma: f64,
    seed_indices: Vec<usize>,
}

impl Level {
    /// Seed samples and their evaluations for the next level.
    pub fn seeds(&self) -> (Matrix, Vec<Evaluation>) {
        let d = self.samples.cols();
        let mut m = Matrix::zeros(self.seed_indices.len(), d);
        let mut v = Vec::with_capacity(self.seed_indices.len());
        for (r, &i) in self.seed_indices.iter().enumerate() {
            m.row_mut(r).copy_from_slice(self.samples.row(i));
            v.push(self.values[i]);
        }
        (m, v)
    }
}

/// Serializable summary of one level.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LevelSummary {
    pub index: usize,
    pub threshold: f64,
    pub conditional_prob: f64,
    pub acceptance_rate: f64,
    pub gamma: f64,
    pub n_samples: usize,
    pub is_final: bool,
    /// Expensive calls made while this level ran (generation + hardening).
    pub hf_calls: u64,
    /// Cheap-model calls made while this level ran, per model.
    pub lf_calls: Vec<u64>,
    pub acquisitions: u64,
    pub lf_selections: Vec<u64>,
    pub degradations: u64,
}

/// Final estimate of one subset (or Monte Carlo) run.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RunResult {
    pub pf: f64,
    /// Estimator coefficient of variation; may be infinite when a level
    /// produced zero exceedances (pf = 0).
    pub cov: f64,
    pub levels: Vec<LevelSummary>,
    pub counters: CallCounters,
    pub master_seed: u64,
    pub total_acquisitions: u64,
}

impl RunResult {
    pub fn cov_is_finite(&self) -> bool {
        self.cov.is_finite()
    }
}

/// Level 0: crude Monte Carlo over the input space.
pub fn run_first_level(
    evaluator: &mut dyn LevelEvaluator,
    space: &InputSpace,
    config: &SubsetConfig,
    streams: &SeedStreams,
) -> Result<Level, SubsetError> {
    config.validate()?;
    let n = config.samples_per_level;
    let mut rng = streams.named("level-0");
    let samples = space.sample_matrix(n, &mut rng);
    let values = evaluator.evaluate(&samples, None)?;
    finalize_level(evaluator, 0, samples, values, vec![1; n], 1.0, config)
}

/// One conditional level: Markov chains from the seeds, conditioned on
/// exceeding `prev_threshold`.
#[allow(clippy::too_many_arguments)]
pub fn run_conditional_level(
    evaluator: &mut dyn LevelEvaluator,
    seeds: &Matrix,
    seed_values: &[Evaluation],
    prev_threshold: f64,
    level: usize,
    space: &InputSpace,
    config: &SubsetConfig,
    streams: &SeedStreams,
) -> Result<Level, SubsetError> {
    config.validate()?;
    let n = config.samples_per_level;
    let n_chains = seeds.rows();
    assert!(n_chains > 0 && n_chains <= n, "seed count out of range");
    assert_eq!(seeds.rows(), seed_values.len());
    let d = space.dimension();
    assert_eq!(seeds.cols(), d);

    // Chain lengths differ by at most one and sum exactly to N.
    let base = n / n_chains;
    let rem = n % n_chains;
    let chain_lengths: Vec<usize> = (0..n_chains)
        .map(|c| base + usize::from(c < rem))
        .collect();
    let offsets: Vec<usize> = chain_lengths
        .iter()
        .scan(0usize, |acc, &l| {
            let o = *acc;
            *acc += l;
            Some(o)
        })
        .collect();

    let mut samples = Matrix::zeros(n, d);
    let mut values = vec![Evaluation::surrogate(0.0); n];
    let mut states: Vec<Vec<f64>> = Vec::with_capacity(n_chains);
    let mut outputs: Vec<Evaluation> = seed_values.to_vec();
    for c in 0..n_chains {
        states.push(seeds.row(c).to_vec());
        samples.row_mut(offsets[c]).copy_from_slice(seeds.row(c));
        values[offsets[c]] = outputs[c];
    }

    // One independent stream per chain: results cannot depend on the order
    // chains are advanced or on how evaluation batches are scheduled.
    let mut chain_rngs: Vec<crate::rng::RunRng> = (0..n_chains)
        .map(|c| streams.indexed2("chain", level as u64, c as u64))
        .collect();

    let sigmas: Vec<f64> = space
        .std_devs()
        .iter()
        .map(|s| s * config.proposal_scale)
        .collect();

    let max_len = chain_lengths.iter().copied().max().unwrap_or(0);
    let mut accepted: u64 = 0;
    let mut cand_buf = vec![0.0; d];

    for t in 1..max_len {
        // Batch this step's moved candidates across chains.
        let mut batch = Matrix::empty(d);
        let mut batch_chains: Vec<usize> = Vec::new();
        for c in 0..n_chains {
            if chain_lengths[c] <= t {
                continue;
            }
            let rng = &mut chain_rngs[c];
            let mut moved = false;
            for j in 0..d {
                let z = standard_normal(rng);
                let u = unit_open(rng);
                let cur = states[c][j];
                let cand = cur + sigmas[j] * z;
                let m = space.marginal(j);
                // Component-wise Metropolis: accept coordinate j with
                // probability min(1, pdf(cand)/pdf(cur)).
                let ratio = m.pdf(cand) / m.pdf(cur);
                if u < ratio {
                    cand_buf[j] = cand;
                    moved = true;
                } else {
                    cand_buf[j] = cur;
                }
            }
            if moved {
                batch.push_row(&cand_buf);
                batch_chains.push(c);
            } else {
                // Candidate equals the state: chain repeats, no model call.
                let idx = offsets[c] + t;
                samples.row_mut(idx).copy_from_slice(&states[c]);
                values[idx] = outputs[c];
            }
        }

        if batch.rows() > 0 {
            let evals = evaluator.evaluate(&batch, Some(prev_threshold))?;
            for (b, &c) in batch_chains.iter().enumerate() {
                if evals[b].value >= prev_threshold {
                    states[c].copy_from_slice(batch.row(b));
                    outputs[c] = evals[b];
                    accepted += 1;
                }
                let idx = offsets[c] + t;
                samples.row_mut(idx).copy_from_slice(&states[c]);
                values[idx] = outputs[c];
            }
        }
    }

    let steps = (n - n_chains) as u64;
    let acceptance = if steps == 0 {
        1.0
    } else {
        accepted as f64 / steps as f64
    };

    finalize_level(
        evaluator,
        level,
        samples,
        values,
        chain_lengths,
        acceptance,
        config,
    )
}

/// Threshold estimation with the hardening fixed point, seed selection, and
/// the per-level statistics.
fn finalize_level(
    evaluator: &mut dyn LevelEvaluator,
    index: usize,
    samples: Matrix,
    mut values: Vec<Evaluation>,
    chain_lengths: Vec<usize>,
    acceptance_rate: f64,
    config: &SubsetConfig,
) -> Result<Level, SubsetError> {
    let n = values.len();
    let nseeds = config.seeds_per_level();

    // Fixed point: a pass with no acquisitions leaves the surrogate, hence
    // every refreshed value, unchanged, so the provisional threshold it was
    // checked against is self-consistent. Deferred-retrain evaluators flush
    // at the boundary and force another pass when the surrogate moved.
    loop {
        loop {
            let quantile = kth_largest(&values, nseeds);
            let provisional = if quantile >= config.failure_threshold {
                config.failure_threshold
            } else {
                quantile
            };
            if evaluator.harden(&samples, &mut values, provisional)? == 0 {
                break;
            }
        }
        if !evaluator.flush()? {
            break;
        }
    }

    let quantile = kth_largest(&values, nseeds);
    let is_final = quantile >= config.failure_threshold;

    let (threshold, conditional_prob, seed_indices) = if is_final {
        let t = config.failure_threshold;
        let exceed = values.iter().filter(|e| e.value > t).count();
        (t, exceed as f64 / n as f64, Vec::new())
    } else {
        let min = values
            .iter()
            .map(|e| e.value)
            .fold(f64::INFINITY, f64::min);
        let max = values
            .iter()
            .map(|e| e.value)
            .fold(f64::NEG_INFINITY, f64::max);
        if min == max {
            return Err(SubsetError::DegenerateLevel {
                level: index,
                n,
                value: min,
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            values[b]
                .value
                .partial_cmp(&values[a].value)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        order.truncate(nseeds);
        (quantile, nseeds as f64 / n as f64, order)
    };

    let gamma = chain_autocorrelation_factor(&values, &chain_lengths, threshold, is_final);

    Ok(Level {
        index,
        samples,
        values,
        chain_lengths,
        threshold,
        is_final,
        conditional_prob,
        acceptance_rate,
        gamma,
        seed_indices,
    })
}

/// k-th largest value (k >= 1) among the evaluations.
fn kth_largest(values: &[Evaluation], k: usize) -> f64 {
    assert!(k >= 1 && k <= values.len(), "percentile rank out of range");
    let mut v: Vec<f64> = values.iter().map(|e| e.value).collect();
    v.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
    v[k - 1]
}

/// Chain-autocorrelation variance inflation factor gamma for one level.
///
/// gamma = 2 * sum_k w_k * rho_k over lags k >= 1, where rho_k is the lag-k
/// autocorrelation of the exceedance indicator across chains and w_k is the
/// fraction of sample pairs available at that lag (equal-length chains give
/// the textbook (1 - k/L) weights). Independent samples give gamma ~ 0;
/// perfectly repeating chains give gamma = L-1. Clamped at zero: small
/// negative noise estimates must not shrink the reported variance.
fn chain_autocorrelation_factor(
    values: &[Evaluation],
    chain_lengths: &[usize],
    threshold: f64,
    strict: bool,
) -> f64 {
    let n = values.len();
    let indicator: Vec<f64> = values
        .iter()
        .map(|e| {
            let hit = if strict {
                e.value > threshold
            } else {
                e.value >= threshold
            };
            if hit {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let p = stats::mean(&indicator);
    let r0 = p * (1.0 - p);
    if r0 <= 0.0 {
        return 0.0;
    }
    let max_len = chain_lengths.iter().copied().max().unwrap_or(1);
    if max_len < 2 {
        return 0.0;
    }

    let mut gamma = 0.0;
    let offsets: Vec<usize> = chain_lengths
        .iter()
        .scan(0usize, |acc, &l| {
            let o = *acc;
            *acc += l;
            Some(o)
        })
        .collect();

    for k in 1..max_len {
        let mut num = 0.0;
        let mut count = 0usize;
        for (c, &len) in chain_lengths.iter().enumerate() {
            if len <= k {
                continue;
            }
            let o = offsets[c];
            for t in 0..len - k {
                num += indicator[o + t] * indicator[o + t + k];
                count += 1;
            }
        }
        if count == 0 {
            break;
        }
        let rk = num / count as f64 - p * p;
        let rho = rk / r0;
        let weight = count as f64 / n as f64;
        gamma += 2.0 * weight * rho;
    }
    gamma.max(0.0)
}

/// Combine completed levels into the final estimate.
pub fn aggregate(
    levels: &[Level],
    counters: CallCounters,
    level_summaries: Vec<LevelSummary>,
    master_seed: u64,
) -> RunResult {
    let mut pf = 1.0;
    let mut var = 0.0;
    for level in levels {
        pf *= level.conditional_prob;
        let p = level.conditional_prob;
        let n = level.values.len() as f64;
        if p <= 0.0 {
            var = f64::INFINITY;
        } else if p < 1.0 {
            var += (1.0 - p) / (p * n) * (1.0 + level.gamma);
        }
    }
    let total_acquisitions = level_summaries.iter().map(|s| s.acquisitions).sum();
    let cov = if var.is_finite() {
        libm::sqrt(var)
    } else {
        f64::INFINITY
    };
    RunResult {
        pf,
        cov,
        levels: level_summaries,
        counters,
        master_seed,
        total_acquisitions,
    }
}

/// Full subset simulation run.
pub fn run_subset(
    evaluator: &mut dyn LevelEvaluator,
    space: &InputSpace,
    config: &SubsetConfig,
    streams: &SeedStreams,
) -> Result<RunResult, SubsetError> {
    config.validate()?;
    let mut levels: Vec<Level> = Vec::new();
    let mut summaries: Vec<LevelSummary> = Vec::new();
    let mut before = evaluator.counters();

    evaluator.begin_level(0);
    let first = run_first_level(evaluator, space, config, streams)?;
    let after = evaluator.counters();
    summaries.push(summarize(&first, &before, &after, evaluator.take_level_extras()));
    before = after;
    levels.push(first);

    while !levels.last().map(|l| l.is_final).unwrap_or(true) {
        if levels.len() >= config.max_levels {
            let partial = aggregate(&levels, evaluator.counters(), summaries, streams.master());
            return Err(SubsetError::BudgetExhausted {
                max_levels: config.max_levels,
                partial: Box::new(partial),
            });
        }
        let index = levels.len();
        let prev = levels.last().expect("at least one level");
        let (seed_x, seed_v) = prev.seeds();
        let prev_threshold = prev.threshold;

        evaluator.begin_level(index);
        let level = run_conditional_level(
            evaluator,
            &seed_x,
            &seed_v,
            prev_threshold,
            index,
            space,
            config,
            streams,
        )?;
        if !level.is_final && level.threshold <= prev_threshold {
            return Err(SubsetError::StalledThreshold {
                level: index,
                threshold: level.threshold,
                previous: prev_threshold,
            });
        }
        let after = evaluator.counters();
        summaries.push(summarize(&level, &before, &after, evaluator.take_level_extras()));
        before = after;
        levels.push(level);
    }

    Ok(aggregate(
        &levels,
        evaluator.counters(),
        summaries,
        streams.master(),
    ))
}

fn summarize(
    level: &Level,
    before: &CallCounters,
    after: &CallCounters,
    extras: LevelExtras,
) -> LevelSummary {
    let lf_calls: Vec<u64> = after
        .low_fidelity
        .iter()
        .zip(
            before
                .low_fidelity
                .iter()
                .chain(core::iter::repeat(&0u64)),
        )
        .map(|(a, b)| a - b)
        .collect();
    LevelSummary {
        index: level.index,
        threshold: level.threshold,
        conditional_prob: level.conditional_prob,
        acceptance_rate: level.acceptance_rate,
        gamma: level.gamma,
        n_samples: level.values.len(),
        is_final: level.is_final,
        hf_calls: after.high_fidelity - before.high_fidelity,
        lf_calls,
        acquisitions: extras.acquisitions,
        lf_selections: extras.lf_selections,
        degradations: extras.degradations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::MarginalDistribution;
    use crate::math::{std_normal_cdf, SQRT_2};

    fn std_normal_space(d: usize) -> InputSpace {
        InputSpace::new(vec![MarginalDistribution::normal(0.0, 1.0).unwrap(); d]).unwrap()
    }

    fn first_coord(x: &[f64]) -> f64 {
        x[0]
    }

    fn scaled_sum_2d(x: &[f64]) -> f64 {
        (x[0] + x[1]) / SQRT_2
    }

    fn constant_model(_x: &[f64]) -> f64 {
        1.5
    }

    fn capped_coord(x: &[f64]) -> f64 {
        x[0].min(2.0)
    }

    #[test]
    fn config_validation_catches_bad_fields() {
        assert!(SubsetConfig::new(5, 0.1, 10, 1.0).is_err());
        assert!(SubsetConfig::new(100, 0.0, 10, 1.0).is_err());
        assert!(SubsetConfig::new(100, 1.0, 10, 1.0).is_err());
        assert!(SubsetConfig::new(100, 0.1, 0, 1.0).is_err());
        assert!(SubsetConfig::new(100, 0.1, 10, f64::NAN).is_err());
        let mut c = SubsetConfig::new(100, 0.1, 10, 1.0).unwrap();
        c.proposal_scale = 0.0;
        assert!(c.validate().is_err());
        // 0.25 * 102 = 25.5 rounds to 26 and deviates from the request.
        let c = SubsetConfig::new(102, 0.25, 10, 1.0).unwrap();
        assert_eq!(c.seeds_per_level(), 26);
        assert!(c.effective_p0().is_some());
        let c = SubsetConfig::new(100, 0.1, 10, 1.0).unwrap();
        assert_eq!(c.seeds_per_level(), 10);
        assert!(c.effective_p0().is_none());
    }

    #[test]
    fn percentile_matches_worked_example() {
        // Outputs 1..=100 with p0 = 0.1: the 10th largest is 91.
        let vals: Vec<Evaluation> = (1..=100)
            .map(|i| Evaluation::high_fidelity(i as f64))
            .collect();
        assert_eq!(kth_largest(&vals, 10), 91.0);
        assert_eq!(kth_largest(&vals, 1), 100.0);
        assert_eq!(kth_largest(&vals, 100), 1.0);
    }

    #[test]
    fn first_level_estimates_a_coarse_tail() {
        // Failure threshold at the 0.9 quantile makes level 0 final:
        // pf should be ~0.1 well within 3 reported covs.
        let space = std_normal_space(1);
        let config = SubsetConfig::new(10_000, 0.1, 5, 1.2815515655446004).unwrap();
        let mut eval = DirectEvaluator::new(first_coord);
        let streams = SeedStreams::new(314);
        let result = run_subset(&mut eval, &space, &config, &streams).unwrap();
        assert_eq!(result.levels.len(), 1);
        assert!(result.levels[0].is_final);
        assert_eq!(result.levels[0].gamma, 0.0);
        assert!((result.pf - 0.1).abs() < 0.01, "pf {}", result.pf);
        // Monte Carlo cov formula at level 0.
        let want_cov = ((1.0 - result.pf) / (result.pf * 10_000.0)).sqrt();
        assert!((result.cov - want_cov).abs() < 1e-12);
        assert_eq!(result.counters.high_fidelity, 10_000);
    }

    #[test]
    fn multi_level_run_matches_analytic_tail() {
        let space = std_normal_space(2);
        let config = SubsetConfig::new(2000, 0.1, 10, 3.0).unwrap();
        let mut eval = DirectEvaluator::new(scaled_sum_2d);
        let result = run_subset(&mut eval, &space, &config, &SeedStreams::new(2024)).unwrap();
        let truth = std_normal_cdf(-3.0);
        assert!(result.levels.len() >= 3, "levels {}", result.levels.len());
        assert!(
            (result.pf - truth).abs() < 3.0 * result.cov * truth,
            "pf {} vs {truth} at cov {}",
            result.pf,
            result.cov
        );
        // Every intermediate level promoted exactly p0*N seeds.
        for l in &result.levels[..result.levels.len() - 1] {
            assert_eq!(l.conditional_prob, 0.1);
            assert!(!l.is_final);
        }
        assert!(result.levels.last().unwrap().is_final);
        // Thresholds strictly increase and the last one is the target.
        for w in result.levels.windows(2) {
            assert!(w[0].threshold < w[1].threshold);
        }
        assert_eq!(result.levels.last().unwrap().threshold, 3.0);
        // Acceptance rates visible and plausible for unit proposals.
        for l in &result.levels[1..] {
            assert!(
                l.acceptance_rate > 0.1 && l.acceptance_rate < 0.8,
                "acceptance {}",
                l.acceptance_rate
            );
        }
    }

    #[test]
    fn runs_are_bit_reproducible_per_seed() {
        let space = std_normal_space(2);
        let config = SubsetConfig::new(500, 0.1, 10, 2.0).unwrap();
        let mut e1 = DirectEvaluator::new(scaled_sum_2d);
        let r1 = run_subset(&mut e1, &space, &config, &SeedStreams::new(7)).unwrap();
        let mut e2 = DirectEvaluator::new(scaled_sum_2d);
        let r2 = run_subset(&mut e2, &space, &config, &SeedStreams::new(7)).unwrap();
        assert_eq!(r1.pf.to_bits(), r2.pf.to_bits());
        assert_eq!(r1.cov.to_bits(), r2.cov.to_bits());
        let mut e3 = DirectEvaluator::new(scaled_sum_2d);
        let r3 = run_subset(&mut e3, &space, &config, &SeedStreams::new(8)).unwrap();
        assert_ne!(r1.pf.to_bits(), r3.pf.to_bits());
    }

    #[test]
    fn degenerate_level_is_reported() {
        let space = std_normal_space(1);
        let config = SubsetConfig::new(100, 0.1, 5, 9.0).unwrap();
        let mut eval = DirectEvaluator::new(constant_model);
        match run_subset(&mut eval, &space, &config, &SeedStreams::new(1)) {
            Err(SubsetError::DegenerateLevel { level: 0, n: 100, value }) => {
                assert_eq!(value, 1.5)
            }
            other => panic!("expected degenerate level, got {other:?}"),
        }
    }

    #[test]
    fn budget_exhaustion_carries_partial_estimate() {
        let space = std_normal_space(1);
        let config = SubsetConfig::new(200, 0.1, 2, 6.0).unwrap();
        let mut eval = DirectEvaluator::new(first_coord);
        match run_subset(&mut eval, &space, &config, &SeedStreams::new(3)) {
            Err(SubsetError::BudgetExhausted { max_levels: 2, partial }) => {
                assert_eq!(partial.levels.len(), 2);
                // Two intermediate levels: the partial product is p0^2.
                assert!((partial.pf - 0.01).abs() < 1e-12);
                assert!(partial.cov.is_finite());
            }
            other => panic!("expected budget exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn plateau_model_stalls_threshold() {
        let space = std_normal_space(1);
        let config = SubsetConfig::new(400, 0.1, 20, 6.0).unwrap();
        let mut eval = DirectEvaluator::new(capped_coord);
        match run_subset(&mut eval, &space, &config, &SeedStreams::new(5)) {
            Err(SubsetError::StalledThreshold { .. }) => {}
            Err(SubsetError::DegenerateLevel { .. }) => {}
            other => panic!("expected stall or degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn gamma_is_exact_for_perfectly_repeating_chains() {
        // 4 chains, length 25, constant values; 2 above the threshold.
        // Indicator autocorrelation is exactly 1 at every lag, so
        // gamma = 2 * sum_{k=1}^{L-1} (1 - k/L) = L - 1.
        let l = 25usize;
        let vals: Vec<Evaluation> = (0..4)
            .flat_map(|c| {
                let v = if c < 2 { 5.0 } else { 1.0 };
                core::iter::repeat_n(Evaluation::high_fidelity(v), l)
            })
            .collect();
        let gamma = chain_autocorrelation_factor(&vals, &[l, l, l, l], 3.0, false);
        assert!((gamma - (l as f64 - 1.0)).abs() < 1e-9, "gamma {gamma}");
    }

    #[test]
    fn gamma_is_small_for_independent_samples() {
        let mut rng = SeedStreams::new(99).named("iid");
        let n_chains = 100;
        let l = 10;
        let vals: Vec<Evaluation> = (0..n_chains * l)
            .map(|_| Evaluation::high_fidelity(crate::rng::standard_normal(&mut rng)))
            .collect();
        let gamma = chain_autocorrelation_factor(&vals, &vec![l; n_chains], 1.0, false);
        assert!(gamma < 0.35, "gamma {gamma}");
    }

    #[test]
    fn seed_selection_takes_top_block() {
        let vals: Vec<Evaluation> = [5.0, 1.0, 4.0, 2.0, 3.0, 9.0, 0.0, 8.0, 7.0, 6.0]
            .iter()
            .map(|&v| Evaluation::high_fidelity(v))
            .collect();
        let mut samples = Matrix::zeros(10, 1);
        for i in 0..10 {
            samples.set(i, 0, i as f64);
        }
        let config = SubsetConfig::new(10, 0.2, 5, 100.0).unwrap();
        let mut eval = DirectEvaluator::new(first_coord);
        let level = finalize_level(
            &mut eval,
            0,
            samples,
            vals,
            vec![1; 10],
            1.0,
            &config,
        )
        .unwrap();
        // Top 2 of the listed values are 9.0 (index 5) and 8.0 (index 7).
        assert_eq!(level.threshold, 8.0);
        let (seed_x, seed_v) = level.seeds();
        assert_eq!(seed_x.rows(), 2);
        assert_eq!(seed_x.get(0, 0), 5.0);
        assert_eq!(seed_x.get(1, 0), 7.0);
        assert_eq!(seed_v[0].value, 9.0);
        assert_eq!(seed_v[1].value, 8.0);
        assert_eq!(level.conditional_prob, 0.2);
    }

    #[test]
    fn call_accounting_is_conserved() {
        let space = std_normal_space(2);
        let config = SubsetConfig::new(300, 0.1, 10, 2.5).unwrap();
        let mut eval = DirectEvaluator::new(scaled_sum_2d);
        let result = run_subset(&mut eval, &space, &config, &SeedStreams::new(42)).unwrap();
        let per_level: u64 = result.levels.iter().map(|l| l.hf_calls).sum();
        assert_eq!(per_level, result.counters.high_fidelity);
        // Level 0 evaluates exactly N; later levels at most N - seeds.
        assert_eq!(result.levels[0].hf_calls, 300);
        for l in &result.levels[1..] {
            assert!(l.hf_calls <= 300 - config.seeds_per_level() as u64);
        }
    }
}
