//! Command-line front end for the reliability estimation toolkit.
//!
//! Exit codes: 0 success, 1 configuration or IO error, 2 level budget
//! exhausted (partial results are still written), 3 numerical failure.

mod config;
mod output;
mod parallel;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mfal_core::bench::{builtin_problems, find_problem, mc_oracle};
use mfal_core::driver::{
    execute, monte_carlo_run_output, replicate, run_subset_packaged, summarize_replications,
    Method, RunError, RunOutput,
};
use mfal_core::rng::SeedStreams;
use mfal_core::subset::CallCounters;

use config::{load_run_config, ResolvedRun};
use output::{write_replication_outputs, write_run_outputs, ReferenceEntry, RunMeta};
use parallel::{build_pool, parallel_mc_oracle, parallel_replications, ParallelDirectEvaluator};

#[derive(Parser)]
#[command(
    name = "mfal",
    version,
    about = "Rare-event failure probability estimation with subset simulation \
             and multifidelity active learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute one run described by a JSON config file.
    Run {
        /// Path to the run configuration (JSON).
        config: PathBuf,
        /// Where result files go (overrides MFAL_OUTPUT_DIR and the config).
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads (overrides the config; default 1).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Repeat a configured run under derived seeds and aggregate.
    Replicate {
        /// Path to the run configuration (JSON).
        config: PathBuf,
        /// Number of replications.
        #[arg(long)]
        n: usize,
        /// Where result files go (overrides MFAL_OUTPUT_DIR and the config).
        #[arg(long)]
        output_dir: Option<PathBuf>,
        /// Worker threads (overrides the config; default 1).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Direct Monte Carlo reference estimate, printed as one JSON line.
    Oracle {
        /// Built-in problem name (see list-problems).
        problem: String,
        /// Number of Monte Carlo samples.
        #[arg(long)]
        samples: u64,
        /// Master seed.
        #[arg(long)]
        seed: u64,
        /// Override the problem's failure threshold.
        #[arg(long)]
        threshold: Option<f64>,
        /// Worker threads (default 1).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// List the built-in benchmark problems.
    ListProblems,
}

/// Terminal failure: a process exit code plus a message for stderr.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 1,
            message: message.into(),
        }
    }
}

impl From<config::ConfigError> for Failure {
    fn from(e: config::ConfigError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<output::OutputError> for Failure {
    fn from(e: output::OutputError) -> Self {
        Self::config(e.to_string())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successes; real usage errors map to the
            // config/IO exit code so 2 stays reserved for budget exhaustion.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Run {
            config,
            output_dir,
            workers,
        } => cmd_run(&config, output_dir, workers),
        Command::Replicate {
            config,
            n,
            output_dir,
            workers,
        } => cmd_replicate(&config, n, output_dir, workers),
        Command::Oracle {
            problem,
            samples,
            seed,
            threshold,
            workers,
        } => cmd_oracle(&problem, samples, seed, threshold, workers),
        Command::ListProblems => {
            cmd_list_problems();
            Ok(())
        }
    }
}

/// Flag > MFAL_OUTPUT_DIR > config > current directory.
fn resolve_output_dir(flag: Option<PathBuf>, from_config: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("MFAL_OUTPUT_DIR").map(PathBuf::from))
        .or(from_config)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn prepare_dir(dir: &PathBuf) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Failure::config(format!("cannot create {}: {e}", dir.display())))
}

/// Result files never mention the worker count: identical runs must stay
/// byte-identical across pool sizes.
fn run_meta(resolved: &ResolvedRun) -> RunMeta<'_> {
    RunMeta {
        problem: &resolved.problem.name,
        method: resolved.method.name(),
        seed: resolved.seed,
        failure_threshold: resolved.problem.failure_threshold,
        lf_labels: resolved
            .problem
            .low_fidelity
            .iter()
            .map(|m| m.label.clone())
            .collect(),
    }
}

/// Dispatch one run, routing the embarrassingly parallel methods through a
/// thread pool when more than one worker is requested. Learner-based methods
/// are inherently sequential (the surrogate mutates between queries) and
/// ignore extra workers.
fn run_resolved(resolved: &ResolvedRun, workers: usize) -> Result<RunOutput, RunError> {
    if workers <= 1 {
        return execute(&resolved.problem, &resolved.method, resolved.seed);
    }
    match &resolved.method {
        Method::MonteCarlo { n_samples } => {
            if *n_samples == 0 {
                return Err(RunError::Config {
                    message: String::from("monte_carlo needs n_samples >= 1"),
                });
            }
            let pool = build_pool(workers);
            let est = parallel_mc_oracle(&resolved.problem, *n_samples, resolved.seed, &pool);
            Ok(monte_carlo_run_output(est, resolved.seed))
        }
        Method::Subset { settings } => {
            let pool = build_pool(workers);
            let mut evaluator = ParallelDirectEvaluator::new(resolved.problem.hf, &pool);
            let streams = SeedStreams::new(resolved.seed);
            run_subset_packaged(
                &mut evaluator,
                &resolved.problem,
                settings,
                &streams,
                CallCounters::default(),
                |_| vec![],
            )
        }
        _ => execute(&resolved.problem, &resolved.method, resolved.seed),
    }
}

fn cmd_run(
    config_path: &Path,
    output_dir: Option<PathBuf>,
    workers_flag: Option<usize>,
) -> Result<(), Failure> {
    let resolved = load_run_config(config_path)?;
    let workers = workers_flag.or(resolved.workers).unwrap_or(1).max(1);
    let dir = resolve_output_dir(output_dir, resolved.output_dir.clone());
    prepare_dir(&dir)?;
    let meta = run_meta(&resolved);
    match run_resolved(&resolved, workers) {
        Ok(out) => {
            write_run_outputs(&dir, &meta, &out, "ok")?;
            println!(
                "{}: pf={:.6e} cov={} hf_calls={} -> {}",
                meta.method,
                out.result.pf,
                if out.result.cov.is_finite() {
                    format!("{:.6}", out.result.cov)
                } else {
                    String::from("inf")
                },
                out.result.counters.high_fidelity,
                dir.display()
            );
            Ok(())
        }
        Err(RunError::BudgetExhausted { max_levels, partial }) => {
            write_run_outputs(&dir, &meta, &partial, "budget_exhausted")?;
            Err(Failure {
                code: 2,
                message: format!(
                    "level budget of {max_levels} exhausted; partial results written to {}",
                    dir.display()
                ),
            })
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_replicate(
    config_path: &Path,
    n: usize,
    output_dir: Option<PathBuf>,
    workers_flag: Option<usize>,
) -> Result<(), Failure> {
    if n == 0 {
        return Err(Failure::config("replicate needs --n >= 1"));
    }
    let resolved = load_run_config(config_path)?;
    let workers = workers_flag.or(resolved.workers).unwrap_or(1).max(1);
    let dir = resolve_output_dir(output_dir, resolved.output_dir.clone());
    prepare_dir(&dir)?;
    let meta = run_meta(&resolved);
    let (outputs, summary) = if workers <= 1 {
        replicate(&resolved.problem, &resolved.method, resolved.seed, n)?
    } else {
        let pool = build_pool(workers);
        let (seeds, outputs) =
            parallel_replications(&resolved.problem, &resolved.method, resolved.seed, n, &pool)?;
        let summary = summarize_replications(seeds, &outputs);
        (outputs, summary)
    };
    write_replication_outputs(&dir, &meta, &summary, &outputs)?;
    println!(
        "{} x{}: mean_pf={:.6e} empirical_cov={:.6} mean_reported_cov={:.6} -> {}",
        meta.method,
        summary.n_replications,
        summary.mean_pf,
        summary.empirical_cov,
        summary.mean_reported_cov,
        dir.display()
    );
    Ok(())
}

fn cmd_oracle(
    problem_name: &str,
    samples: u64,
    seed: u64,
    threshold: Option<f64>,
    workers_flag: Option<usize>,
) -> Result<(), Failure> {
    let mut problem = find_problem(problem_name).ok_or_else(|| {
        Failure::config(format!(
            "unknown problem '{problem_name}'; run `mfal list-problems`"
        ))
    })?;
    if samples == 0 {
        return Err(Failure::config("oracle needs --samples >= 1"));
    }
    if let Some(t) = threshold {
        if !t.is_finite() {
            return Err(Failure::config("--threshold must be finite"));
        }
        problem = problem.with_failure_threshold(t);
    }
    let workers = workers_flag.unwrap_or(1).max(1);
    let est = if workers <= 1 {
        mc_oracle(&problem, samples, seed)
    } else {
        let pool = build_pool(workers);
        parallel_mc_oracle(&problem, samples, seed, &pool)
    };
    println!(
        "{}",
        ReferenceEntry::from_estimate(&problem.name, problem.failure_threshold, seed, &est)
            .to_line()
    );
    Ok(())
}

fn cmd_list_problems() {
    for p in builtin_problems() {
        println!(
            "{}  dim={}  failure_threshold={}",
            p.name,
            p.dimension(),
            p.failure_threshold
        );
        for lf in &p.low_fidelity {
            println!("  lf: {}  cost_tau={}", lf.label, lf.cost_tau);
        }
    }
}
