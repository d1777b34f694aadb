//! Result persistence: a machine-readable JSON document, a human-readable
//! table, and line-delimited audit logs for levels and acquisitions.
//!
//! Serialization is deterministic (fixed field order, shortest float
//! round-trip), so identical runs produce byte-identical files. JSON cannot
//! carry non-finite numbers; an infinite estimator COV becomes `null` next
//! to an explicit `cov_is_finite: false`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mfal_core::bench::OracleEstimate;
use mfal_core::driver::{ReplicationSummary, RunOutput};
use mfal_core::subset::CallCounters;

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, OutputError> {
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|source| OutputError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Identity of one run, repeated across its output files.
pub struct RunMeta<'a> {
    pub problem: &'a str,
    pub method: &'a str,
    pub seed: u64,
    pub failure_threshold: f64,
    pub lf_labels: Vec<String>,
}

#[derive(Serialize)]
struct ResultDoc<'a> {
    schema: &'static str,
    status: &'a str,
    problem: &'a str,
    method: &'a str,
    seed: u64,
    failure_threshold: f64,
    pf: f64,
    cov: Option<f64>,
    cov_is_finite: bool,
    n_levels: usize,
    counters: &'a CallCounters,
    design_counters: &'a CallCounters,
    total_acquisitions: u64,
    lf_labels: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<&'a OracleEstimate>,
}

fn finite_or_none(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

fn aligned_table(rows: &[(&str, String)]) -> String {
    let mut s = String::new();
    for (k, v) in rows {
        let _ = writeln!(s, "{k:<26}{v}");
    }
    s
}

fn lf_calls_text(labels: &[String], calls: &[u64]) -> String {
    if calls.is_empty() {
        return String::from("-");
    }
    let parts: Vec<String> = labels
        .iter()
        .zip(calls)
        .map(|(l, c)| format!("{l}={c}"))
        .collect();
    parts.join(", ")
}

/// Write result.json, result.txt, levels.jsonl, and acquisitions.jsonl.
pub fn write_run_outputs(
    dir: &Path,
    meta: &RunMeta<'_>,
    output: &RunOutput,
    status: &str,
) -> Result<(), OutputError> {
    let r = &output.result;
    let doc = ResultDoc {
        schema: "mfal-result-v1",
        status,
        problem: meta.problem,
        method: meta.method,
        seed: meta.seed,
        failure_threshold: meta.failure_threshold,
        pf: r.pf,
        cov: finite_or_none(r.cov),
        cov_is_finite: r.cov_is_finite(),
        n_levels: r.levels.len(),
        counters: &r.counters,
        design_counters: &output.design_counters,
        total_acquisitions: r.total_acquisitions,
        lf_labels: &meta.lf_labels,
        oracle: output.oracle.as_ref(),
    };
    let mut json = serde_json::to_string_pretty(&doc).expect("serializable document");
    json.push('\n');
    write_file(dir, "result.json", &json)?;

    let cov_text = if r.cov.is_finite() {
        format!("{:.6}", r.cov)
    } else {
        String::from("inf")
    };
    let rows = vec![
        ("status", status.to_string()),
        ("problem", meta.problem.to_string()),
        ("method", meta.method.to_string()),
        ("seed", meta.seed.to_string()),
        ("failure threshold", format!("{}", meta.failure_threshold)),
        ("failure prob.", format!("{:.6e}", r.pf)),
        ("cov", cov_text),
        ("# HF model evals.", r.counters.high_fidelity.to_string()),
        (
            "# LF model evals.",
            lf_calls_text(&meta.lf_labels, &r.counters.low_fidelity),
        ),
        (
            "surrogate predictions",
            r.counters.surrogate_predictions.to_string(),
        ),
        ("levels", r.levels.len().to_string()),
        ("acquisitions", r.total_acquisitions.to_string()),
    ];
    write_file(dir, "result.txt", &aligned_table(&rows))?;

    let mut levels = String::new();
    for lvl in &r.levels {
        levels.push_str(&serde_json::to_string(lvl).expect("serializable level"));
        levels.push('\n');
    }
    write_file(dir, "levels.jsonl", &levels)?;

    let mut acq = String::new();
    for ev in &output.acquisitions {
        acq.push_str(&serde_json::to_string(ev).expect("serializable event"));
        acq.push('\n');
    }
    write_file(dir, "acquisitions.jsonl", &acq)?;
    Ok(())
}

#[derive(Serialize)]
struct ReplicateDoc<'a> {
    schema: &'static str,
    status: &'a str,
    problem: &'a str,
    method: &'a str,
    master_seed: u64,
    failure_threshold: f64,
    summary: &'a ReplicationSummary,
}

#[derive(Serialize)]
struct RepRow<'a> {
    rep: usize,
    seed: u64,
    pf: f64,
    cov: Option<f64>,
    hf_calls: u64,
    lf_calls: &'a [u64],
    n_levels: usize,
    acquisitions: u64,
}

/// Write replicate.json, replicate.txt, and replications.jsonl.
pub fn write_replication_outputs(
    dir: &Path,
    meta: &RunMeta<'_>,
    summary: &ReplicationSummary,
    outputs: &[RunOutput],
) -> Result<(), OutputError> {
    let doc = ReplicateDoc {
        schema: "mfal-replicate-v1",
        status: "ok",
        problem: meta.problem,
        method: meta.method,
        master_seed: meta.seed,
        failure_threshold: meta.failure_threshold,
        summary,
    };
    let mut json = serde_json::to_string_pretty(&doc).expect("serializable document");
    json.push('\n');
    write_file(dir, "replicate.json", &json)?;

    let mut rows_text = String::new();
    for (rep, out) in outputs.iter().enumerate() {
        let row = RepRow {
            rep,
            seed: summary.seeds[rep],
            pf: out.result.pf,
            cov: finite_or_none(out.result.cov),
            hf_calls: out.result.counters.high_fidelity,
            lf_calls: &out.result.counters.low_fidelity,
            n_levels: out.result.levels.len(),
            acquisitions: out.result.total_acquisitions,
        };
        rows_text.push_str(&serde_json::to_string(&row).expect("serializable row"));
        rows_text.push('\n');
    }
    write_file(dir, "replications.jsonl", &rows_text)?;

    let rows = vec![
        ("problem", meta.problem.to_string()),
        ("method", meta.method.to_string()),
        ("master seed", meta.seed.to_string()),
        ("replications", summary.n_replications.to_string()),
        ("mean failure prob.", format!("{:.6e}", summary.mean_pf)),
        ("sd failure prob.", format!("{:.6e}", summary.sd_pf)),
        ("empirical cov", format!("{:.6}", summary.empirical_cov)),
        (
            "mean reported cov",
            format!("{:.6}", summary.mean_reported_cov),
        ),
    ];
    write_file(dir, "replicate.txt", &aligned_table(&rows))?;
    Ok(())
}

/// One line of the shipped oracle reference file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub name: String,
    pub failure_threshold: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub pf: f64,
    pub cov: f64,
}

impl ReferenceEntry {
    pub fn from_estimate(name: &str, failure_threshold: f64, seed: u64, est: &OracleEstimate) -> Self {
        Self {
            name: name.to_string(),
            failure_threshold,
            n_samples: est.n_samples,
            seed,
            pf: est.pf,
            cov: est.cov,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("serializable entry")
    }
}
