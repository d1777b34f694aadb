//! Built-in benchmark problems and a brute-force Monte Carlo oracle.
//!
//! Each problem bundles an input space, an expensive reference model, and one
//! or more cheap models with declared relative costs. The failure convention
//! is `F(X) > threshold` everywhere; classical min-form benchmarks are
//! negated to comply. All model callables are pure functions of the input
//! row and must index only within the problem's dimension.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dist::{InputSpace, MarginalDistribution};
use crate::learning::LfInit;
use crate::math::{exp, sin, sqrt, std_normal_cdf};
use crate::rng::SeedStreams;
use crate::LimitStateFn;

/// Samples per oracle chunk. Chunk i draws from its own named stream, so any
/// partition of chunks across workers reproduces the sequential result.
pub const ORACLE_CHUNK: usize = 16_384;

/// One cheap model attached to a benchmark problem.
#[derive(Clone, Debug)]
pub struct LowFidelityModel {
    pub label: String,
    pub evaluator: LimitStateFn,
    /// Cost relative to the expensive model (which has cost 1).
    pub cost_tau: f64,
}

/// A named reliability problem: input space, models, failure threshold.
#[derive(Clone, Debug)]
pub struct BenchmarkProblem {
    pub name: String,
    pub space: InputSpace,
    pub hf: LimitStateFn,
    pub low_fidelity: Vec<LowFidelityModel>,
    pub failure_threshold: f64,
    /// Closed-form failure probability as a function of the threshold, for
    /// problems that have one.
    pub analytic_pf: Option<fn(f64) -> f64>,
}

impl BenchmarkProblem {
    pub fn dimension(&self) -> usize {
        self.space.dimension()
    }

    /// Same problem with a different failure threshold.
    pub fn with_failure_threshold(mut self, threshold: f64) -> Self {
        self.failure_threshold = threshold;
        self
    }

    /// Closed-form failure probability at the current threshold, if known.
    pub fn analytic_failure_probability(&self) -> Option<f64> {
        self.analytic_pf.map(|f| f(self.failure_threshold))
    }

    /// Cheap-model descriptions in the form the multifidelity learner takes.
    pub fn lf_inits(&self) -> Vec<LfInit> {
        self.low_fidelity
            .iter()
            .map(|m| LfInit {
                label: m.label.clone(),
                evaluator: m.evaluator,
                cost_tau: m.cost_tau,
            })
            .collect()
    }
}

fn linear_2d_hf(x: &[f64]) -> f64 {
    (x[0] + x[1]) / core::f64::consts::SQRT_2
}

fn linear_2d_lf1(x: &[f64]) -> f64 {
    linear_2d_hf(x) + 0.3 * sin(x[0])
}

fn linear_2d_pf(threshold: f64) -> f64 {
    std_normal_cdf(-threshold)
}

/// 2-D linear response with a standard-normal input: the failure probability
/// at threshold t is exactly the standard normal upper tail at t. One cheap
/// model with a smooth additive bias. Default threshold 4.5 sits in the deep
/// tail (about 3.4e-6).
pub fn linear_2d() -> BenchmarkProblem {
    let std_normal = MarginalDistribution::normal(0.0, 1.0).expect("valid");
    BenchmarkProblem {
        name: String::from("linear_2d"),
        space: InputSpace::new(vec![std_normal.clone(), std_normal]).expect("non-empty"),
        hf: linear_2d_hf,
        low_fidelity: vec![LowFidelityModel {
            label: String::from("sin_biased"),
            evaluator: linear_2d_lf1,
            cost_tau: 0.01,
        }],
        failure_threshold: 4.5,
        analytic_pf: Some(linear_2d_pf),
    }
}

/// Minimum over the four branch limit states with quadratic coefficient `c`
/// (0.1 in the reference form).
fn four_branch_min(x: &[f64], c: f64) -> f64 {
    let s = (x[0] + x[1]) / core::f64::consts::SQRT_2;
    let d = x[0] - x[1];
    let q = 3.0 + c * d * d;
    let g1 = q - s;
    let g2 = q + s;
    let g3 = d + 6.0 / core::f64::consts::SQRT_2;
    let g4 = -d + 6.0 / core::f64::consts::SQRT_2;
    g1.min(g2).min(g3).min(g4)
}

fn four_branch_hf(x: &[f64]) -> f64 {
    -four_branch_min(x, 0.1)
}

fn four_branch_lf1(x: &[f64]) -> f64 {
    -four_branch_min(x, 0.08)
}

fn four_branch_lf2(x: &[f64]) -> f64 {
    four_branch_hf(x) + 0.01 * (x[0] * x[0] + x[1] * x[1])
}

/// Classic four-branch series system, negated so failure is F(X) > 0. Two
/// cheap models: one coarsens the quadratic branch coefficient, the other
/// adds a smooth radial bias on top of the exact response.
pub fn four_branch() -> BenchmarkProblem {
    let std_normal = MarginalDistribution::normal(0.0, 1.0).expect("valid");
    BenchmarkProblem {
        name: String::from("four_branch"),
        space: InputSpace::new(vec![std_normal.clone(), std_normal]).expect("non-empty"),
        hf: four_branch_hf,
        low_fidelity: vec![
            LowFidelityModel {
                label: String::from("coarse_quadratic"),
                evaluator: four_branch_lf1,
                cost_tau: 0.01,
            },
            LowFidelityModel {
                label: String::from("radial_biased"),
                evaluator: four_branch_lf2,
                cost_tau: 0.1,
            },
        ],
        failure_threshold: 0.0,
        analytic_pf: None,
    }
}

fn triso_hf(x: &[f64]) -> f64 {
    exp(0.45 * x[0]) * (1.0 + 0.1 * x[1] * x[1])
        + 0.5 * x[3] * (1.0 + 0.15 * x[2] * x[2])
        + 0.1 * x[4] * x[4]
}

fn triso_lf1(x: &[f64]) -> f64 {
    // Cubic Taylor polynomial of exp(0.45*x): accurate near the origin,
    // increasingly below the true exponential in the failure tail.
    let t = x[0];
    let poly = 1.0 + 0.45 * t + 0.10125 * t * t + 0.0151875 * t * t * t;
    poly * (1.0 + 0.1 * x[1] * x[1])
        + 0.5 * x[3] * (1.0 + 0.15 * x[2] * x[2])
        + 0.1 * x[4] * x[4]
}

fn triso_lf2(x: &[f64]) -> f64 {
    0.95 * triso_hf(x)
}

/// 5-input smooth nonlinear response standing in for a stress calculation:
/// an exponential load term modulated by a quadratic, a lognormal material
/// contribution, and a small bounded term. The first cheap model replaces
/// the exponential with its cubic Taylor polynomial (tail-biased); the
/// second underestimates uniformly by 5%, like a coarse discretization that
/// never overshoots. The threshold 4.9 puts the failure probability near
/// 2.05e-3 (three subset levels at p0 = 0.1).
pub fn triso_proxy() -> BenchmarkProblem {
    let std_normal = MarginalDistribution::normal(0.0, 1.0).expect("valid");
    BenchmarkProblem {
        name: String::from("triso_proxy"),
        space: InputSpace::new(vec![
            std_normal.clone(),
            std_normal.clone(),
            std_normal,
            MarginalDistribution::log_normal(0.0, 0.25).expect("valid"),
            MarginalDistribution::uniform(-1.0, 1.0).expect("valid"),
        ])
        .expect("non-empty"),
        hf: triso_hf,
        low_fidelity: vec![
            LowFidelityModel {
                label: String::from("taylor_stress"),
                evaluator: triso_lf1,
                cost_tau: 0.001,
            },
            LowFidelityModel {
                label: String::from("coarse_underestimate"),
                evaluator: triso_lf2,
                cost_tau: 0.05,
            },
        ],
        failure_threshold: 4.9,
        analytic_pf: None,
    }
}

/// All shipped problems.
pub fn builtin_problems() -> Vec<BenchmarkProblem> {
    vec![linear_2d(), four_branch(), triso_proxy()]
}

/// Look a shipped problem up by name.
pub fn find_problem(name: &str) -> Option<BenchmarkProblem> {
    builtin_problems().into_iter().find(|p| p.name == name)
}

/// Result of a brute-force Monte Carlo estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OracleEstimate {
    pub pf: f64,
    /// Coefficient of variation sqrt((1-pf)/(pf*n)); infinite when no sample
    /// failed.
    pub cov: f64,
    pub hits: u64,
    pub n_samples: u64,
    /// True when no sample failed and pf is reported as the 1/n upper bound.
    pub pf_is_upper_bound: bool,
    /// True when fewer than 10 failures were observed; the estimate is then
    /// too noisy to trust.
    pub low_count: bool,
}

/// Failure count over one chunk of the oracle's sample budget. Chunk i with
/// the same master seed always draws the same points, regardless of which
/// worker runs it or in what order.
pub fn oracle_chunk_hits(
    problem: &BenchmarkProblem,
    master_seed: u64,
    chunk_index: u64,
    count: usize,
) -> u64 {
    let mut rng = SeedStreams::new(master_seed).indexed("oracle-chunk", chunk_index);
    let x = problem.space.sample_matrix(count, &mut rng);
    let mut hits = 0;
    for i in 0..count {
        if (problem.hf)(x.row(i)) > problem.failure_threshold {
            hits += 1;
        }
    }
    hits
}

/// Turn a total failure count into an estimate, applying the zero-hit and
/// low-count policies.
pub fn assemble_oracle(hits: u64, n_samples: u64) -> OracleEstimate {
    assert!(n_samples > 0, "oracle needs at least one sample");
    let n = n_samples as f64;
    if hits == 0 {
        return OracleEstimate {
            pf: 1.0 / n,
            cov: f64::INFINITY,
            hits,
            n_samples,
            pf_is_upper_bound: true,
            low_count: true,
        };
    }
    let pf = hits as f64 / n;
    OracleEstimate {
        pf,
        cov: sqrt((1.0 - pf) / (pf * n)),
        hits,
        n_samples,
        pf_is_upper_bound: false,
        low_count: hits < 10,
    }
}

/// Brute-force Monte Carlo estimate of P(F(X) > threshold) over n_samples
/// draws, accumulated chunk by chunk in index order.
pub fn mc_oracle(problem: &BenchmarkProblem, n_samples: u64, master_seed: u64) -> OracleEstimate {
    assert!(n_samples > 0, "oracle needs at least one sample");
    let full = n_samples / ORACLE_CHUNK as u64;
    let rem = (n_samples % ORACLE_CHUNK as u64) as usize;
    let mut hits = 0;
    for i in 0..full {
        hits += oracle_chunk_hits(problem, master_seed, i, ORACLE_CHUNK);
    }
    if rem > 0 {
        hits += oracle_chunk_hits(problem, master_seed, full, rem);
    }
    assemble_oracle(hits, n_samples)
}
