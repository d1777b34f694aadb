//! Thread-pool-backed execution paths.
//!
//! Parallelism never touches randomness: the direct evaluator only fans out
//! pure model calls over precomputed points, the oracle fans out fixed
//! sample chunks whose streams are indexed by chunk number, and replications
//! fan out whole runs under seeds derived from the replication index. Every
//! result is therefore byte-identical to the sequential one.

use rayon::prelude::*;

use mfal_core::bench::{assemble_oracle, oracle_chunk_hits, BenchmarkProblem, OracleEstimate, ORACLE_CHUNK};
use mfal_core::driver::{execute, replication_seed, Method, RunError, RunOutput};
use mfal_core::subset::{CallCounters, EvalError, Evaluation, LevelEvaluator};
use mfal_core::linalg::Matrix;
use mfal_core::LimitStateFn;

pub fn build_pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool construction")
}

/// Direct evaluator that spreads expensive calls over a thread pool. Output
/// order follows input order, so results match the sequential evaluator.
pub struct ParallelDirectEvaluator<'p> {
    model: LimitStateFn,
    counters: CallCounters,
    pool: &'p rayon::ThreadPool,
}

impl<'p> ParallelDirectEvaluator<'p> {
    pub fn new(model: LimitStateFn, pool: &'p rayon::ThreadPool) -> Self {
        Self {
            model,
            counters: CallCounters::default(),
            pool,
        }
    }
}

impl LevelEvaluator for ParallelDirectEvaluator<'_> {
    fn evaluate(
        &mut self,
        points: &Matrix,
        _guard: Option<f64>,
    ) -> Result<Vec<Evaluation>, EvalError> {
        let model = self.model;
        let values: Vec<f64> = self
            .pool
            .install(|| (0..points.rows()).into_par_iter().map(|i| model(points.row(i))).collect());
        self.counters.high_fidelity += points.rows() as u64;
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(EvalError::NonFiniteModelOutput { index: i });
            }
        }
        Ok(values.into_iter().map(Evaluation::high_fidelity).collect())
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

/// Monte Carlo oracle over a thread pool: chunk hit counts are integers, so
/// the parallel sum equals the sequential one exactly.
pub fn parallel_mc_oracle(
    problem: &BenchmarkProblem,
    n_samples: u64,
    master_seed: u64,
    pool: &rayon::ThreadPool,
) -> OracleEstimate {
    assert!(n_samples > 0, "oracle needs at least one sample");
    let full = n_samples / ORACLE_CHUNK as u64;
    let rem = (n_samples % ORACLE_CHUNK as u64) as usize;
    let n_chunks = full + u64::from(rem > 0);
    let hits: u64 = pool.install(|| {
        (0..n_chunks)
            .into_par_iter()
            .map(|i| {
                let count = if i < full { ORACLE_CHUNK } else { rem };
                oracle_chunk_hits(problem, master_seed, i, count)
            })
            .sum()
    });
    assemble_oracle(hits, n_samples)
}

/// Replications spread over a thread pool, seeds derived per index exactly
/// as the sequential driver derives them. The lowest-index failure wins so
/// the reported error does not depend on scheduling.
pub fn parallel_replications(
    problem: &BenchmarkProblem,
    method: &Method,
    master_seed: u64,
    n_replications: usize,
    pool: &rayon::ThreadPool,
) -> Result<(Vec<u64>, Vec<RunOutput>), RunError> {
    let seeds: Vec<u64> = (0..n_replications)
        .map(|rep| replication_seed(master_seed, rep as u64))
        .collect();
    let results: Vec<Result<RunOutput, RunError>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| execute(problem, method, seed))
            .collect()
    });
    let mut outputs = Vec::with_capacity(n_replications);
    for r in results {
        outputs.push(r?);
    }
    Ok((seeds, outputs))
}
