//! Declarative run configuration: JSON files with strict schemas, resolved
//! into a problem plus method before anything executes.
//!
//! Sections are validated present-iff-required per method, and every
//! diagnostic names the offending field, so a config review shows exactly
//! what an experiment will do.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use mfal_core::bench::{find_problem, builtin_problems, BenchmarkProblem};
use mfal_core::driver::{Method, SubsetSettings};
use mfal_core::learning::{RetrainPolicy, ULearningConfig};
use mfal_core::multifid::CostFunction;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

/// Problem reference: a bare name, or a name with overrides.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ProblemRef {
    Name(String),
    Custom(ProblemOverride),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProblemOverride {
    name: String,
    failure_threshold: Option<f64>,
    /// Per-model cost overrides, one entry per low-fidelity model.
    taus: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SubsetSection {
    samples_per_level: Option<usize>,
    p0: Option<f64>,
    max_levels: Option<usize>,
    proposal_scale: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum RetrainSection {
    EveryAcquisition,
    Batched(usize),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LearningSection {
    u_threshold: Option<f64>,
    retrain: Option<RetrainSection>,
    reoptimize_every: Option<u64>,
    doe_size: Option<usize>,
    doe_span_sd: Option<f64>,
    optimizer_restarts: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CostSection {
    beta: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MonteCarloSection {
    n_samples: u64,
}

/// The on-disk schema of one run configuration.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    problem: ProblemRef,
    method: String,
    seed: u64,
    output_dir: Option<PathBuf>,
    workers: Option<usize>,
    subset: Option<SubsetSection>,
    learning: Option<LearningSection>,
    cost: Option<CostSection>,
    monte_carlo: Option<MonteCarloSection>,
}

/// A config resolved against the built-in problem set, ready to execute.
#[derive(Debug)]
pub struct ResolvedRun {
    pub problem: BenchmarkProblem,
    pub method: Method,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub workers: Option<usize>,
}

pub fn load_run_config(path: &Path) -> Result<ResolvedRun, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let file: RunConfigFile =
        serde_json::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    resolve(file)
}

fn resolve_problem(re: ProblemRef) -> Result<BenchmarkProblem, ConfigError> {
    let (name, threshold, taus) = match re {
        ProblemRef::Name(name) => (name, None, None),
        ProblemRef::Custom(o) => (o.name, o.failure_threshold, o.taus),
    };
    let mut problem = find_problem(&name).ok_or_else(|| {
        let known: Vec<String> = builtin_problems().into_iter().map(|p| p.name).collect();
        invalid(
            "problem.name",
            format!("no built-in problem named '{name}' (known: {})", known.join(", ")),
        )
    })?;
    if let Some(t) = threshold {
        if !t.is_finite() {
            return Err(invalid("problem.failure_threshold", "must be finite"));
        }
        problem = problem.with_failure_threshold(t);
    }
    if let Some(taus) = taus {
        if taus.len() != problem.low_fidelity.len() {
            return Err(invalid(
                "problem.taus",
                format!(
                    "expected {} entries (one per low-fidelity model), got {}",
                    problem.low_fidelity.len(),
                    taus.len()
                ),
            ));
        }
        for (model, tau) in problem.low_fidelity.iter_mut().zip(taus) {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(invalid("problem.taus", "every tau must be finite and > 0"));
            }
            model.cost_tau = tau;
        }
    }
    Ok(problem)
}

fn subset_settings(section: SubsetSection) -> SubsetSettings {
    let d = SubsetSettings::default();
    SubsetSettings {
        samples_per_level: section.samples_per_level.unwrap_or(d.samples_per_level),
        p0: section.p0.unwrap_or(d.p0),
        max_levels: section.max_levels.unwrap_or(d.max_levels),
        proposal_scale: section.proposal_scale.unwrap_or(d.proposal_scale),
    }
}

fn learning_config(section: LearningSection) -> ULearningConfig {
    let d = ULearningConfig::default();
    ULearningConfig {
        u_threshold: section.u_threshold.unwrap_or(d.u_threshold),
        retrain: match section.retrain {
            Some(RetrainSection::EveryAcquisition) | None => RetrainPolicy::EveryAcquisition,
            Some(RetrainSection::Batched(k)) => RetrainPolicy::Batched(k),
        },
        reoptimize_every: section.reoptimize_every.unwrap_or(d.reoptimize_every),
        doe_size: section.doe_size.or(d.doe_size),
        doe_span_sd: section.doe_span_sd.unwrap_or(d.doe_span_sd),
        optimizer_restarts: section.optimizer_restarts.unwrap_or(d.optimizer_restarts),
    }
}

/// Enforce that exactly the method's sections are present.
fn check_sections(
    file: &RunConfigFile,
    subset: bool,
    learning: bool,
    cost_allowed: bool,
    monte_carlo: bool,
) -> Result<(), ConfigError> {
    let method = &file.method;
    if subset && file.subset.is_none() {
        return Err(invalid("subset", format!("required for method '{method}'")));
    }
    if !subset && file.subset.is_some() {
        return Err(invalid("subset", format!("not applicable to method '{method}'")));
    }
    if learning && file.learning.is_none() {
        return Err(invalid("learning", format!("required for method '{method}'")));
    }
    if !learning && file.learning.is_some() {
        return Err(invalid(
            "learning",
            format!("not applicable to method '{method}'"),
        ));
    }
    if !cost_allowed && file.cost.is_some() {
        return Err(invalid("cost", format!("not applicable to method '{method}'")));
    }
    if monte_carlo && file.monte_carlo.is_none() {
        return Err(invalid(
            "monte_carlo",
            format!("required for method '{method}'"),
        ));
    }
    if !monte_carlo && file.monte_carlo.is_some() {
        return Err(invalid(
            "monte_carlo",
            format!("not applicable to method '{method}'"),
        ));
    }
    Ok(())
}

pub fn resolve(mut file: RunConfigFile) -> Result<ResolvedRun, ConfigError> {
    if let Some(w) = file.workers {
        if w == 0 {
            return Err(invalid("workers", "must be at least 1"));
        }
    }
    let method = match file.method.as_str() {
        "monte_carlo" => {
            check_sections(&file, false, false, false, true)?;
            let mc = file.monte_carlo.take().expect("checked");
            if mc.n_samples == 0 {
                return Err(invalid("monte_carlo.n_samples", "must be at least 1"));
            }
            Method::MonteCarlo {
                n_samples: mc.n_samples,
            }
        }
        "subset" => {
            check_sections(&file, true, false, false, false)?;
            Method::Subset {
                settings: subset_settings(file.subset.take().expect("checked")),
            }
        }
        "al_subset" => {
            check_sections(&file, true, true, false, false)?;
            Method::AlSubset {
                settings: subset_settings(file.subset.take().expect("checked")),
                learning: learning_config(file.learning.take().expect("checked")),
            }
        }
        "mfal_subset" => {
            check_sections(&file, true, true, true, false)?;
            let cost = match file.cost.take() {
                Some(c) => Some(CostFunction::new(c.beta).map_err(|e| {
                    invalid("cost.beta", e.to_string())
                })?),
                None => None,
            };
            Method::MfalSubset {
                settings: subset_settings(file.subset.take().expect("checked")),
                learning: learning_config(file.learning.take().expect("checked")),
                cost,
            }
        }
        other => {
            return Err(invalid(
                "method",
                format!(
                    "unknown method '{other}' (expected monte_carlo, subset, al_subset, or mfal_subset)"
                ),
            ));
        }
    };
    let problem = resolve_problem(file.problem)?;
    if matches!(method, Method::MfalSubset { .. }) && problem.low_fidelity.is_empty() {
        return Err(invalid(
            "problem",
            format!("'{}' has no low-fidelity models for mfal_subset", problem.name),
        ));
    }
    Ok(ResolvedRun {
        problem,
        method,
        seed: file.seed,
        output_dir: file.output_dir,
        workers: file.workers,
    })
}
