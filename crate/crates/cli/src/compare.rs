//! Side-by-side comparison of finished runs on the same instance.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use prodfrac_core::ConvergenceTrace;

use crate::config::SolverKind;
use crate::run::{read_trace_csv, RunStatus, SolutionRecord};

/// A run directory loaded back from disk.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub label: String,
    pub solution: SolutionRecord,
    pub trace: ConvergenceTrace,
}

/// Loads a run from its directory, or from any file inside it such as `trace.csv`.
pub fn load_run(path: &Path) -> Result<LoadedRun> {
    let dir: PathBuf = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let sol_path = dir.join("solution.toml");
    if !sol_path.exists() && dir.join("error.toml").exists() {
        bail!("{} holds a failed run", dir.display());
    }
    let text = fs::read_to_string(&sol_path).with_context(|| format!("reading {}", sol_path.display()))?;
    let solution = SolutionRecord::from_toml_str(&text)?;
    let trace = read_trace_csv(&dir.join("trace.csv"))?;
    Ok(LoadedRun {
        label: dir.display().to_string(),
        solution,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub label: String,
    pub solver: SolverKind,
    /// First iteration whose relative objective change is at most the threshold.
    pub iterations_to_eps: Option<u64>,
    pub final_objective: f64,
    /// Relative gap to the best final objective among the compared runs.
    pub relative_gap: f64,
    pub converged: bool,
}

/// Builds one row per run. All runs must share the instance hash.
pub fn compare_runs(runs: &[LoadedRun], eps: f64) -> Result<Vec<CompareRow>> {
    let Some(first) = runs.first() else {
        bail!("nothing to compare");
    };
    if !(eps > 0.0) {
        bail!("threshold must be positive, got {eps}");
    }
    for r in runs {
        if r.solution.instance_hash != first.solution.instance_hash {
            bail!(
                "instance hash mismatch: {} has {} but {} has {}",
                first.label,
                first.solution.instance_hash,
                r.label,
                r.solution.instance_hash
            );
        }
    }
    let best = runs.iter().map(|r| r.solution.objective).fold(f64::INFINITY, f64::min);
    Ok(runs
        .iter()
        .map(|r| CompareRow {
            label: r.label.clone(),
            solver: r.solution.solver,
            iterations_to_eps: r.trace.iterations_to_eps(eps),
            final_objective: r.solution.objective,
            relative_gap: (r.solution.objective - best) / best.abs().max(f64::MIN_POSITIVE),
            converged: r.solution.status == RunStatus::Converged,
        })
        .collect())
}

pub fn rows_to_csv(rows: &[CompareRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "label",
        "solver",
        "iterations_to_eps",
        "final_objective",
        "relative_gap",
        "converged",
    ])?;
    for r in rows {
        w.write_record([
            r.label.clone(),
            r.solver.to_string(),
            r.iterations_to_eps.map_or_else(String::new, |i| i.to_string()),
            format!("{:e}", r.final_objective),
            format!("{:e}", r.relative_gap),
            r.converged.to_string(),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

/// Fixed-width table; non-converged runs are marked with `*`.
pub fn rows_to_table(rows: &[CompareRow], eps: f64) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:<10}  {:>12}  {:>16}  {:>12}",
        "label",
        "solver",
        format!("iters@{eps:e}"),
        "final_objective",
        "rel_gap"
    );
    for r in rows {
        let iters = r.iterations_to_eps.map_or_else(|| "-".to_string(), |i| i.to_string());
        let flag = if r.converged { "" } else { " *" };
        let _ = writeln!(
            out,
            "{:<width$}  {:<10}  {:>12}  {:>16.9e}  {:>12.3e}{flag}",
            r.label,
            r.solver.to_string(),
            iters,
            r.final_objective,
            r.relative_gap
        );
    }
    if rows.iter().any(|r| !r.converged) {
        out.push_str("* stopped at the iteration cap\n");
    }
    out
}
