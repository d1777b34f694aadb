//! Run orchestration: wire a benchmark problem to an estimation method,
//! execute under one master seed, and package the results with their audit
//! trail (acquisition log, call accounting for the initial design).
//!
//! Every stochastic decision derives from named substreams of the master
//! seed, so two executions of the same problem, method, and seed produce
//! identical results regardless of host or thread count.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::rand_core::RngCore;

use crate::bench::{mc_oracle, BenchmarkProblem, OracleEstimate};
use crate::learning::{
    AcquisitionEvent, LearnError, MultifidelityLearner, SingleFidelityLearner, ULearningConfig,
};
use crate::multifid::CostFunction;
use crate::rng::SeedStreams;
use crate::stats::{mean, sample_variance};
use crate::subset::{
    run_subset, CallCounters, DirectEvaluator, LevelEvaluator, RunResult, SubsetConfig,
    SubsetError,
};

/// Subset-simulation knobs without the failure threshold, which belongs to
/// the problem.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubsetSettings {
    pub samples_per_level: usize,
    pub p0: f64,
    pub max_levels: usize,
    pub proposal_scale: f64,
}

impl Default for SubsetSettings {
    fn default() -> Self {
        Self {
            samples_per_level: 1000,
            p0: crate::subset::DEFAULT_P0,
            max_levels: 20,
            proposal_scale: 1.0,
        }
    }
}

impl SubsetSettings {
    fn to_config(&self, failure_threshold: f64) -> Result<SubsetConfig, RunError> {
        let config = SubsetConfig {
            samples_per_level: self.samples_per_level,
            p0: self.p0,
            max_levels: self.max_levels,
            failure_threshold,
            proposal_scale: self.proposal_scale,
        };
        config.validate()?;
        Ok(config)
    }
}

/// Estimation method to run on a problem.
#[derive(Clone, Debug, PartialEq)]
pub enum Method {
    /// Brute-force Monte Carlo with the expensive model.
    MonteCarlo { n_samples: u64 },
    /// Subset simulation, every sample evaluated by the expensive model.
    Subset { settings: SubsetSettings },
    /// Subset simulation answered by one GP surrogate with U-triggered
    /// expensive calls.
    AlSubset {
        settings: SubsetSettings,
        learning: ULearningConfig,
    },
    /// Subset simulation over the cheap-model ensemble with correction
    /// surrogates; optional cost-aware selection.
    MfalSubset {
        settings: SubsetSettings,
        learning: ULearningConfig,
        cost: Option<CostFunction>,
    },
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::MonteCarlo { .. } => "monte_carlo",
            Method::Subset { .. } => "subset",
            Method::AlSubset { .. } => "al_subset",
            Method::MfalSubset { .. } => "mfal_subset",
        }
    }
}

/// Everything one execution produces.
#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub result: RunResult,
    /// U-triggered expensive calls in acquisition order (empty for
    /// non-learning methods).
    pub acquisitions: Vec<AcquisitionEvent>,
    /// Calls consumed by the initial design, already included in
    /// `result.counters`.
    pub design_counters: CallCounters,
    /// Present only for Monte Carlo: the raw estimate with its flags.
    pub oracle: Option<OracleEstimate>,
}

/// Failures of one execution, partitioned by exit disposition.
#[derive(Debug)]
pub enum RunError {
    /// The configuration or problem wiring is invalid; nothing ran.
    Config { message: String },
    /// The level budget ran out; the partial estimate is still useful.
    BudgetExhausted {
        max_levels: usize,
        partial: Box<RunOutput>,
    },
    /// A numerical failure stopped the run (degenerate level, stalled
    /// threshold, non-finite model output, surrogate breakdown).
    Numerical { message: String },
}

impl core::fmt::Display for RunError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            RunError::Config { message } => write!(f, "configuration error: {message}"),
            RunError::BudgetExhausted { max_levels, .. } => {
                write!(f, "level budget of {max_levels} exhausted before reaching the failure threshold")
            }
            RunError::Numerical { message } => write!(f, "numerical failure: {message}"),
        }
    }
}

impl RunError {
    /// Process exit code convention: 1 config, 2 budget, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config { .. } => 1,
            RunError::BudgetExhausted { .. } => 2,
            RunError::Numerical { .. } => 3,
        }
    }
}

impl From<SubsetError> for RunError {
    fn from(e: SubsetError) -> Self {
        match e {
            SubsetError::InvalidConfig { message } => RunError::Config {
                message: String::from(message),
            },
            // Budget exhaustion is repackaged by the caller, which owns the
            // acquisition log: reaching this arm means no such context.
            other => RunError::Numerical {
                message: format!("{other}"),
            },
        }
    }
}

impl From<LearnError> for RunError {
    fn from(e: LearnError) -> Self {
        match e {
            LearnError::InvalidConfig { message } => RunError::Config {
                message: String::from(message),
            },
            other => RunError::Numerical {
                message: format!("{other}"),
            },
        }
    }
}

/// Drive a subset run with a caller-supplied evaluator and package result,
/// acquisitions, and budget-exhausted partials uniformly. This is the
/// building block [`execute`] uses; external runners with their own
/// evaluators (e.g. a thread-pool-backed direct evaluator) call it directly.
pub fn run_subset_packaged<E, F>(
    evaluator: &mut E,
    problem: &BenchmarkProblem,
    settings: &SubsetSettings,
    streams: &SeedStreams,
    design_counters: CallCounters,
    events: F,
) -> Result<RunOutput, RunError>
where
    E: LevelEvaluator,
    F: Fn(&E) -> Vec<AcquisitionEvent>,
{
    let config = settings.to_config(problem.failure_threshold)?;
    match run_subset(evaluator, &problem.space, &config, streams) {
        Ok(result) => Ok(RunOutput {
            result,
            acquisitions: events(evaluator),
            design_counters,
            oracle: None,
        }),
        Err(SubsetError::BudgetExhausted { max_levels, partial }) => {
            Err(RunError::BudgetExhausted {
                max_levels,
                partial: Box::new(RunOutput {
                    result: *partial,
                    acquisitions: events(evaluator),
                    design_counters,
                    oracle: None,
                }),
            })
        }
        Err(e) => Err(e.into()),
    }
}

/// Wrap a finished Monte Carlo estimate in the uniform run-output shape.
pub fn monte_carlo_run_output(est: OracleEstimate, master_seed: u64) -> RunOutput {
    RunOutput {
        result: RunResult {
            pf: est.pf,
            cov: est.cov,
            levels: vec![],
            counters: CallCounters {
                high_fidelity: est.n_samples,
                low_fidelity: vec![],
                surrogate_predictions: 0,
            },
            master_seed,
            total_acquisitions: 0,
        },
        acquisitions: vec![],
        design_counters: CallCounters::default(),
        oracle: Some(est),
    }
}

/// Execute one method on one problem under one master seed.
pub fn execute(
    problem: &BenchmarkProblem,
    method: &Method,
    master_seed: u64,
) -> Result<RunOutput, RunError> {
    let streams = SeedStreams::new(master_seed);
    match method {
        Method::MonteCarlo { n_samples } => {
            if *n_samples == 0 {
                return Err(RunError::Config {
                    message: String::from("monte_carlo needs n_samples >= 1"),
                });
            }
            let est = mc_oracle(problem, *n_samples, master_seed);
            Ok(monte_carlo_run_output(est, master_seed))
        }
        Method::Subset { settings } => {
            let mut evaluator = DirectEvaluator::new(problem.hf);
            run_subset_packaged(
                &mut evaluator,
                problem,
                settings,
                &streams,
                CallCounters::default(),
                |_| vec![],
            )
        }
        Method::AlSubset { settings, learning } => {
            let mut learner =
                SingleFidelityLearner::init(problem.hf, &problem.space, learning.clone(), &streams)?;
            let design = learner.counters();
            run_subset_packaged(&mut learner, problem, settings, &streams, design, |l| {
                l.events().to_vec()
            })
        }
        Method::MfalSubset {
            settings,
            learning,
            cost,
        } => {
            if problem.low_fidelity.is_empty() {
                return Err(RunError::Config {
                    message: format!("problem '{}' has no low-fidelity models", problem.name),
                });
            }
            let mut learner = MultifidelityLearner::init(
                problem.hf,
                &problem.lf_inits(),
                *cost,
                &problem.space,
                learning.clone(),
                &streams,
            )?;
            let design = learner.counters();
            run_subset_packaged(&mut learner, problem, settings, &streams, design, |l| {
                l.events().to_vec()
            })
        }
    }
}

/// The derived master seed of replication `rep` under `master`.
pub fn replication_seed(master: u64, rep: u64) -> u64 {
    SeedStreams::new(master)
        .indexed("replicate", rep)
        .next_u64()
}

/// Cross-replication statistics of the failure-probability estimate.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReplicationSummary {
    pub n_replications: usize,
    pub seeds: Vec<u64>,
    pub pfs: Vec<f64>,
    pub reported_covs: Vec<f64>,
    pub mean_pf: f64,
    /// Sample standard deviation of pf across replications (0 for one rep).
    pub sd_pf: f64,
    /// sd_pf / mean_pf: the estimator's spread measured empirically.
    pub empirical_cov: f64,
    /// Average of the per-run reported COVs, for consistency checks against
    /// the empirical one.
    pub mean_reported_cov: f64,
}

/// Cross-replication statistics from finished runs and their seeds. Shared
/// by [`replicate`] and external runners that schedule replications
/// themselves.
pub fn summarize_replications(seeds: Vec<u64>, outputs: &[RunOutput]) -> ReplicationSummary {
    assert_eq!(seeds.len(), outputs.len());
    assert!(!outputs.is_empty(), "nothing to summarize");
    let n_replications = outputs.len();
    let pfs: Vec<f64> = outputs.iter().map(|o| o.result.pf).collect();
    let reported_covs: Vec<f64> = outputs.iter().map(|o| o.result.cov).collect();
    let mean_pf = mean(&pfs);
    let sd_pf = if n_replications > 1 {
        crate::math::sqrt(sample_variance(&pfs))
    } else {
        0.0
    };
    let empirical_cov = if mean_pf > 0.0 { sd_pf / mean_pf } else { 0.0 };
    let mean_reported_cov = mean(&reported_covs);
    ReplicationSummary {
        n_replications,
        seeds,
        pfs,
        reported_covs,
        mean_pf,
        sd_pf,
        empirical_cov,
        mean_reported_cov,
    }
}

/// Run `n_replications` independent executions under derived seeds. The
/// first failing replication aborts the study.
pub fn replicate(
    problem: &BenchmarkProblem,
    method: &Method,
    master_seed: u64,
    n_replications: usize,
) -> Result<(Vec<RunOutput>, ReplicationSummary), RunError> {
    if n_replications == 0 {
        return Err(RunError::Config {
            message: String::from("n_replications must be at least 1"),
        });
    }
    let mut outputs = Vec::with_capacity(n_replications);
    let mut seeds = Vec::with_capacity(n_replications);
    for rep in 0..n_replications {
        let seed = replication_seed(master_seed, rep as u64);
        seeds.push(seed);
        outputs.push(execute(problem, method, seed)?);
    }
    let summary = summarize_replications(seeds, &outputs);
    Ok((outputs, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::{find_problem, linear_2d};

    fn fast_settings() -> SubsetSettings {
        SubsetSettings {
            samples_per_level: 500,
            ..SubsetSettings::default()
        }
    }

    #[test]
    fn monte_carlo_method_wraps_the_oracle() {
        let p = linear_2d().with_failure_threshold(1.0);
        let out = execute(&p, &Method::MonteCarlo { n_samples: 20_000 }, 31).unwrap();
        let est = out.oracle.unwrap();
        assert_eq!(out.result.pf, est.pf);
        assert_eq!(out.result.counters.high_fidelity, 20_000);
        assert!(out.result.levels.is_empty());
        // Phi(-1) ~ 0.1587 with ~3150 hits: 3 sigma is comfortable.
        let truth = p.analytic_failure_probability().unwrap();
        assert!((est.pf - truth).abs() < 3.0 * est.cov * truth);

        let bad = execute(&p, &Method::MonteCarlo { n_samples: 0 }, 31);
        assert!(matches!(bad, Err(RunError::Config { .. })));
    }

    #[test]
    fn subset_method_reaches_the_linear_tail() {
        let p = linear_2d().with_failure_threshold(3.0);
        let out = execute(
            &p,
            &Method::Subset {
                settings: SubsetSettings {
                    samples_per_level: 2000,
                    ..SubsetSettings::default()
                },
            },
            41,
        )
        .unwrap();
        let truth = p.analytic_failure_probability().unwrap();
        assert!(
            (out.result.pf - truth).abs() < 3.0 * out.result.cov * truth,
            "pf {} truth {} cov {}",
            out.result.pf,
            truth,
            out.result.cov
        );
        assert!(out.acquisitions.is_empty());
        assert_eq!(out.design_counters, CallCounters::default());
    }

    #[test]
    fn config_errors_name_the_disposition() {
        let p = linear_2d();
        let bad = execute(
            &p,
            &Method::Subset {
                settings: SubsetSettings {
                    samples_per_level: 3,
                    ..SubsetSettings::default()
                },
            },
            1,
        );
        match bad {
            Err(e @ RunError::Config { .. }) => assert_eq!(e.exit_code(), 1),
            other => panic!("expected config error, got {other:?}"),
        }

        // Multifidelity on a problem stripped of cheap models.
        let mut stripped = linear_2d();
        stripped.low_fidelity.clear();
        let bad = execute(
            &stripped,
            &Method::MfalSubset {
                settings: fast_settings(),
                learning: ULearningConfig::default(),
                cost: None,
            },
            1,
        );
        assert!(matches!(bad, Err(RunError::Config { .. })));
    }

    #[test]
    fn budget_exhaustion_carries_the_partial_estimate() {
        let p = linear_2d().with_failure_threshold(6.0);
        let out = execute(
            &p,
            &Method::Subset {
                settings: SubsetSettings {
                    samples_per_level: 200,
                    max_levels: 2,
                    ..SubsetSettings::default()
                },
            },
            51,
        );
        match out {
            Err(e @ RunError::BudgetExhausted { .. }) => {
                assert_eq!(e.exit_code(), 2);
                if let RunError::BudgetExhausted { partial, .. } = e {
                    assert_eq!(partial.result.levels.len(), 2);
                    assert!(partial.result.pf > 0.0);
                }
            }
            other => panic!("expected budget exhaustion, got {other:?}"),
        }
    }

    #[test]
    fn executions_are_reproducible_and_seed_sensitive() {
        let p = linear_2d().with_failure_threshold(2.5);
        let m = Method::Subset {
            settings: fast_settings(),
        };
        let a = execute(&p, &m, 61).unwrap();
        let b = execute(&p, &m, 61).unwrap();
        assert_eq!(a, b);
        let c = execute(&p, &m, 62).unwrap();
        assert_ne!(a.result.pf.to_bits(), c.result.pf.to_bits());
    }

    #[test]
    fn single_fidelity_learning_spares_expensive_calls() {
        let p = linear_2d().with_failure_threshold(2.5);
        let out = execute(
            &p,
            &Method::AlSubset {
                settings: fast_settings(),
                learning: ULearningConfig::default(),
            },
            71,
        )
        .unwrap();
        let truth = p.analytic_failure_probability().unwrap();
        assert!(
            (out.result.pf - truth).abs() < 3.0 * out.result.cov * truth,
            "pf {} truth {} cov {}",
            out.result.pf,
            truth,
            out.result.cov
        );
        // Expensive calls: initial design + acquisitions only.
        let hf = out.result.counters.high_fidelity;
        assert_eq!(
            hf,
            out.design_counters.high_fidelity + out.acquisitions.len() as u64
        );
        // Two levels of 500 would cost ~950 direct calls; learning must do
        // far better on a linear response.
        assert!(hf < 200, "expensive calls {hf}");
        assert_eq!(out.result.total_acquisitions, out.acquisitions.len() as u64);
    }

    #[test]
    fn multifidelity_learning_runs_the_proxy_problem() {
        let p = find_problem("triso_proxy").unwrap();
        let out = execute(
            &p,
            &Method::MfalSubset {
                settings: fast_settings(),
                learning: ULearningConfig::default(),
                cost: None,
            },
            81,
        )
        .unwrap();
        // Three levels at pf ~2e-3 and a sane estimate within an order.
        assert!(out.result.pf > 2e-4 && out.result.pf < 2e-2, "pf {}", out.result.pf);
        let hf = out.result.counters.high_fidelity;
        assert_eq!(
            hf,
            out.design_counters.high_fidelity + out.acquisitions.len() as u64
        );
        // Cheap-model accounting: every level reports per-model calls.
        for lvl in &out.result.levels {
            assert_eq!(lvl.lf_calls.len(), 2);
            assert_eq!(lvl.lf_selections.len(), 2);
        }
        // Acquisition events carry the chosen cheap model.
        assert!(out.acquisitions.iter().all(|e| e.chosen_lf.is_some()));
    }

    #[test]
    fn replication_study_is_consistent() {
        let p = linear_2d().with_failure_threshold(2.0);
        let m = Method::Subset {
            settings: fast_settings(),
        };
        let (outputs, summary) = replicate(&p, &m, 91, 8).unwrap();
        assert_eq!(outputs.len(), 8);
        assert_eq!(summary.n_replications, 8);
        // Seeds are distinct and the estimates move with them.
        let mut seeds = summary.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), 8);
        let mut pfs = summary.pfs.clone();
        pfs.sort_by(f64::total_cmp);
        pfs.dedup();
        assert!(pfs.len() > 1, "replications produced identical estimates");
        assert!((summary.mean_pf - mean(&summary.pfs)).abs() < 1e-18);
        assert!(summary.sd_pf > 0.0);

        // Identity case: one replication is just that run under its seed.
        let (single, s1) = replicate(&p, &m, 91, 1).unwrap();
        assert_eq!(s1.sd_pf, 0.0);
        assert_eq!(single[0].result.pf, s1.pfs[0]);
        let direct = execute(&p, &m, replication_seed(91, 0)).unwrap();
        assert_eq!(single[0], direct);

        assert!(matches!(
            replicate(&p, &m, 91, 0),
            Err(RunError::Config { .. })
        ));
    }

    /// Conservation: every model call lands in exactly one bucket, so the
    /// run totals must equal initial design plus the per-level deltas.
    #[test]
    fn call_counters_reconcile_with_level_records() {
        let cases: Vec<(BenchmarkProblem, Method)> = vec![
            (
                linear_2d().with_failure_threshold(3.0),
                Method::Subset {
                    settings: fast_settings(),
                },
            ),
            (
                linear_2d().with_failure_threshold(2.5),
                Method::AlSubset {
                    settings: fast_settings(),
                    learning: ULearningConfig::default(),
                },
            ),
            (
                find_problem("triso_proxy").unwrap(),
                Method::MfalSubset {
                    settings: fast_settings(),
                    learning: ULearningConfig::default(),
                    cost: None,
                },
            ),
        ];
        for (problem, method) in &cases {
            let out = execute(problem, method, 101).unwrap();
            let levels = &out.result.levels;
            let totals = &out.result.counters;
            let design = &out.design_counters;

            let level_hf: u64 = levels.iter().map(|l| l.hf_calls).sum();
            assert_eq!(
                totals.high_fidelity,
                design.high_fidelity + level_hf,
                "{} expensive calls do not reconcile",
                method.name()
            );
            for j in 0..totals.low_fidelity.len() {
                let level_lf: u64 =
                    levels.iter().map(|l| l.lf_calls.get(j).copied().unwrap_or(0)).sum();
                let seeded = design.low_fidelity.get(j).copied().unwrap_or(0);
                assert_eq!(
                    totals.low_fidelity[j],
                    seeded + level_lf,
                    "{} cheap-model {j} calls do not reconcile",
                    method.name()
                );
            }
            let level_acq: u64 = levels.iter().map(|l| l.acquisitions).sum();
            assert_eq!(out.result.total_acquisitions, level_acq);
            assert_eq!(out.acquisitions.len() as u64, level_acq);
        }
    }
}
