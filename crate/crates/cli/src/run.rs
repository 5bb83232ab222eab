//! Experiment orchestration: generate, solve, and write the run artifacts.
//!
//! A run directory holds `config.toml` (the resolved config), `solution.toml`
//! and `trace.csv`. A failed run writes `error.toml` instead of the solution.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use prodfrac_core::baselines::{
    ao_baseline_association, dinkelbach_single_ratio, exhaustive_association, grid_oracle_offloading, ExhaustiveMode,
};
use prodfrac_core::hetnet::{inter_solve, AssocVars, HetNetInstance, InterConfig, InterOutcome};
use prodfrac_core::offloading::{solve_offloading, OffloadingInstance, OffloadingVars};
use prodfrac_core::transform::{bcd_minimize, PgdInner};
use prodfrac_core::{ConvergenceTrace, SolveStatus, TraceRecord};

use crate::config::{ExperimentConfig, GeneratorConfig, ResolvedConfig, Scenario, SolverKind};
use crate::generators::{
    apply_overrides, gen_generic_instance, gen_hetnet_instance, gen_offloading_instance, GenericGenConfig,
    GenericInstance, HetNetGenConfig, OffloadingGenConfig,
};

pub const TRACE_HEADER: &str = "iter,objective_surrogate,objective_original,kkt_residual,wall_ns";

/// A generated instance together with the generator settings that produced it.
#[derive(Debug, Clone)]
pub enum Instance {
    Offloading(OffloadingInstance),
    Association(HetNetInstance),
    Generic(GenericInstance),
}

impl Instance {
    /// SHA-256 of the instance's TOML serialisation, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let text = self.to_toml_string()?;
        let digest = Sha256::digest(text.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(match self {
            Instance::Offloading(i) => toml::to_string(i)?,
            Instance::Association(i) => toml::to_string(i)?,
            Instance::Generic(i) => toml::to_string(i)?,
        })
    }
}

/// Applies the overrides of `cfg` to the scenario's generator defaults and generates the instance.
pub fn build_instance(cfg: &ExperimentConfig) -> Result<(Instance, GeneratorConfig)> {
    Ok(match cfg.scenario {
        Scenario::Offloading => {
            let g: OffloadingGenConfig = apply_overrides(&OffloadingGenConfig::default(), &cfg.overrides)?;
            (
                Instance::Offloading(gen_offloading_instance(cfg.seed, &g)?),
                GeneratorConfig::Offloading(g),
            )
        }
        Scenario::Association => {
            let g: HetNetGenConfig = apply_overrides(&HetNetGenConfig::default(), &cfg.overrides)?;
            (
                Instance::Association(gen_hetnet_instance(cfg.seed, &g)?),
                GeneratorConfig::Association(g),
            )
        }
        Scenario::GenericMp | Scenario::GenericFp => {
            let g: GenericGenConfig = apply_overrides(&GenericGenConfig::default(), &cfg.overrides)?;
            (
                Instance::Generic(gen_generic_instance(cfg.seed, &g)?),
                GeneratorConfig::Generic(g),
            )
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Converged,
    IterationCap,
}

impl From<SolveStatus> for RunStatus {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Converged => RunStatus::Converged,
            SolveStatus::MaxItersExceeded => RunStatus::IterationCap,
        }
    }
}

/// The `solution.toml` artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionRecord {
    pub scenario: Scenario,
    pub solver: SolverKind,
    pub seed: u64,
    pub instance_hash: String,
    pub status: RunStatus,
    /// Final objective in the scenario's own units; the exact binary cost for association runs.
    pub objective: f64,
    /// Trace records after the first.
    pub iterations: usize,
    pub variables: BTreeMap<String, Vec<f64>>,
    pub diagnostics: BTreeMap<String, f64>,
}

impl SolutionRecord {
    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).context("parsing solution record")
    }
}

/// The `error.toml` artifact of a failed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub scenario: Scenario,
    pub solver: SolverKind,
    pub seed: u64,
    pub error: String,
    /// Full error chain, outermost first.
    pub causes: Vec<String>,
}

/// Result of [`run_experiment`] once artifacts are on disk.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub solution: Option<SolutionRecord>,
    pub trace: ConvergenceTrace,
    pub error: Option<String>,
}

impl RunReport {
    /// 0 converged, 2 iteration cap, 1 error.
    pub fn exit_code(&self) -> i32 {
        match &self.solution {
            None => 1,
            Some(s) if s.status == RunStatus::Converged => 0,
            Some(_) => 2,
        }
    }
}

struct Solved {
    status: SolveStatus,
    objective: f64,
    trace: ConvergenceTrace,
    variables: BTreeMap<String, Vec<f64>>,
    diagnostics: BTreeMap<String, f64>,
}

fn single_record(objective: f64) -> ConvergenceTrace {
    let mut t = ConvergenceTrace::new();
    t.push(objective, objective, None);
    t
}

fn offloading_vars(v: &OffloadingVars) -> BTreeMap<String, Vec<f64>> {
    BTreeMap::from([
        ("x".to_string(), v.x.clone()),
        ("f_local".to_string(), v.f_local.clone()),
        ("f_edge".to_string(), v.f_edge.clone()),
    ])
}

fn assoc_vars(v: &AssocVars) -> BTreeMap<String, Vec<f64>> {
    let col = |rows: &[[f64; 2]], m: usize| rows.iter().map(|r| r[m]).collect::<Vec<_>>();
    BTreeMap::from([
        ("x_sbs".to_string(), col(&v.x, 0)),
        ("x_mbs".to_string(), col(&v.x, 1)),
        ("f_local".to_string(), v.f_local.clone()),
        ("f_sbs".to_string(), v.f_sbs.clone()),
        ("power".to_string(), v.power.clone()),
        ("d_sbs".to_string(), col(&v.d_off, 0)),
        ("d_mbs".to_string(), col(&v.d_off, 1)),
        ("d_fwd".to_string(), v.d_fwd.clone()),
    ])
}

fn inter_solved(out: InterOutcome) -> Solved {
    Solved {
        status: out.status,
        objective: out.cost,
        variables: assoc_vars(&out.vars),
        diagnostics: BTreeMap::from([
            ("outer_iterations".to_string(), out.outer_iterations as f64),
            ("association_flips".to_string(), out.flips as f64),
            ("relaxed_gap".to_string(), out.relaxed_gap),
            ("relaxed_cost".to_string(), out.relaxed_cost),
        ]),
        trace: out.trace,
    }
}

fn solve(cfg: &ExperimentConfig, instance: &Instance) -> Result<Solved> {
    let stopping = cfg.stopping()?;
    let inter_cfg = || InterConfig {
        intra: stopping,
        c1: cfg.c1,
        ..InterConfig::default()
    };
    Ok(match (instance, cfg.solver) {
        (Instance::Offloading(inst), SolverKind::Transform) => {
            let out = solve_offloading(inst, &stopping, cfg.c1, &OffloadingVars::uniform(inst, 0.5))?;
            let objective = out
                .trace
                .records
                .iter()
                .map(|r| r.objective_original)
                .fold(f64::INFINITY, f64::min);
            Solved {
                status: out.status,
                objective,
                variables: offloading_vars(&out.vars),
                diagnostics: BTreeMap::from([
                    ("constant_branch_hits".to_string(), out.constant_branch_hits as f64),
                    ("kkt_stationarity".to_string(), out.worst_kkt.stationarity),
                    ("kkt_complementarity".to_string(), out.worst_kkt.complementarity),
                    ("kkt_dual_infeasibility".to_string(), out.worst_kkt.dual_infeasibility),
                    (
                        "kkt_primal_infeasibility".to_string(),
                        out.worst_kkt.primal_infeasibility,
                    ),
                ]),
                trace: out.trace,
            }
        }
        (Instance::Offloading(inst), SolverKind::Oracle) => {
            let (vars, cost) = grid_oracle_offloading(inst, cfg.grid)?;
            Solved {
                status: SolveStatus::Converged,
                objective: cost,
                variables: offloading_vars(&vars),
                diagnostics: BTreeMap::new(),
                trace: single_record(cost),
            }
        }
        (Instance::Association(inst), SolverKind::Transform) => inter_solved(inter_solve(inst, &inter_cfg())?),
        (Instance::Association(inst), SolverKind::Ao) => inter_solved(ao_baseline_association(inst, &inter_cfg())?),
        (Instance::Association(inst), SolverKind::Oracle) => {
            let mode = if cfg.oracle_grid {
                ExhaustiveMode::Grid(cfg.grid)
            } else {
                ExhaustiveMode::Intra(inter_cfg())
            };
            let out = exhaustive_association(inst, mode)?;
            let diagnostics = out
                .per_association
                .iter()
                .enumerate()
                .map(|(mask, c)| (format!("association_{mask}"), *c))
                .collect();
            Solved {
                status: SolveStatus::Converged,
                objective: out.cost,
                variables: assoc_vars(&out.vars),
                diagnostics,
                trace: single_record(out.cost),
            }
        }
        (Instance::Generic(g), SolverKind::Transform) => {
            let problem = if cfg.scenario == Scenario::GenericMp {
                g.product_problem()?
            } else {
                g.ratio_problem()?
            };
            let x0 = vec![0.5 * g.box_hi; g.dim()];
            let out = bcd_minimize(&problem, &PgdInner::default(), &stopping, &x0, cfg.c1)?;
            Solved {
                status: out.status,
                objective: problem.original_objective(&out.x),
                variables: BTreeMap::from([("x".to_string(), out.x.clone())]),
                diagnostics: BTreeMap::from([("constant_branch_hits".to_string(), out.constant_branch_hits as f64)]),
                trace: out.trace,
            }
        }
        (Instance::Generic(g), SolverKind::Dinkelbach) => {
            if g.quad_const.len() != 1 {
                anyhow::bail!("Dinkelbach handles a single ratio; set terms = 1");
            }
            let (num, den) = g.first_ratio();
            let x0 = vec![0.5 * g.box_hi; g.dim()];
            let out = dinkelbach_single_ratio(&num, &den, &g.feasible_set(), &x0, 1e-12, cfg.max_iters)?;
            Solved {
                status: out.status,
                objective: out.ratio,
                variables: BTreeMap::from([("x".to_string(), out.x.clone())]),
                diagnostics: BTreeMap::new(),
                trace: out.trace,
            }
        }
        (_, solver) => anyhow::bail!("solver {solver} is not available for scenario {}", cfg.scenario),
    })
}

/// Writes the trace with the fixed header; `wall_ns` is zeroed unless `keep_wall`.
pub fn write_trace_csv(trace: &ConvergenceTrace, path: &Path, keep_wall: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in &trace.records {
        let rec = TraceRecord {
            wall_ns: if keep_wall { r.wall_ns } else { 0 },
            ..*r
        };
        w.serialize(rec)?;
    }
    if trace.records.is_empty() {
        w.write_record(TRACE_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv(path: &Path) -> Result<ConvergenceTrace> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != TRACE_HEADER {
        anyhow::bail!("{} does not carry the trace header", path.display());
    }
    let mut trace = ConvergenceTrace::default();
    for rec in r.deserialize() {
        trace.records.push(rec?);
    }
    Ok(trace)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Generates the instance, runs the configured solver and writes the artifacts into `cfg.out`.
///
/// Solver and generator failures are recorded in `error.toml` and reported through the
/// returned [`RunReport`]; only I/O failures while writing artifacts are returned as errors.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    for stale in ["solution.toml", "error.toml", "trace.csv"] {
        let p = cfg.out.join(stale);
        if p.exists() {
            fs::remove_file(&p)?;
        }
    }
    let attempt = || -> Result<(ResolvedConfig, Solved)> {
        cfg.validate()?;
        let (instance, generator) = build_instance(cfg)?;
        let resolved = ResolvedConfig {
            instance_hash: instance.hash()?,
            experiment: cfg.clone(),
            generator,
        };
        write_text(&cfg.out.join("config.toml"), &resolved.to_toml_string()?)?;
        let solved = solve(cfg, &instance)?;
        Ok((resolved, solved))
    };
    match attempt() {
        Ok((resolved, solved)) => {
            write_trace_csv(&solved.trace, &cfg.out.join("trace.csv"), cfg.record_wall_time)?;
            let solution = SolutionRecord {
                scenario: cfg.scenario,
                solver: cfg.solver,
                seed: cfg.seed,
                instance_hash: resolved.instance_hash,
                status: solved.status.into(),
                objective: solved.objective,
                iterations: solved.trace.len().saturating_sub(1),
                variables: solved.variables,
                diagnostics: solved.diagnostics,
            };
            write_text(&cfg.out.join("solution.toml"), &solution.to_toml_string()?)?;
            Ok(RunReport {
                solution: Some(solution),
                trace: solved.trace,
                error: None,
            })
        }
        Err(e) => {
            let record = ErrorRecord {
                scenario: cfg.scenario,
                solver: cfg.solver,
                seed: cfg.seed,
                error: e.to_string(),
                causes: e.chain().map(|c| c.to_string()).collect(),
            };
            write_text(&cfg.out.join("error.toml"), &toml::to_string(&record)?)?;
            Ok(RunReport {
                solution: None,
                trace: ConvergenceTrace::default(),
                error: Some(e.to_string()),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dir: &Path, scenario: Scenario, solver: SolverKind, overrides: &[(&str, &str)]) -> ExperimentConfig {
        ExperimentConfig {
            scenario,
            solver,
            seed: 7,
            out: dir.to_path_buf(),
            overrides: overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn offloading_single_user_run() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(
            dir.path(),
            Scenario::Offloading,
            SolverKind::Transform,
            &[("users", "1")],
        );
        let report = run_experiment(&c).unwrap();
        assert_eq!(report.exit_code(), 0);
        let trace = read_trace_csv(&dir.path().join("trace.csv")).unwrap();
        assert!(trace.records.windows(2).all(|w| w[1].iter > w[0].iter));
        assert!(trace.records.iter().all(|r| r.wall_ns == 0));
        let text = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
        assert!(text.starts_with(TRACE_HEADER));
        let sol =
            SolutionRecord::from_toml_str(&fs::read_to_string(dir.path().join("solution.toml")).unwrap()).unwrap();
        assert_eq!(&sol, report.solution.as_ref().unwrap());
        let resolved =
            ResolvedConfig::from_toml_str(&fs::read_to_string(dir.path().join("config.toml")).unwrap()).unwrap();
        assert_eq!(resolved.instance_hash, sol.instance_hash);
        assert_eq!(resolved.experiment, c);
    }

    #[test]
    fn trace_csv_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = ConvergenceTrace::default();
        t.records.push(TraceRecord {
            iter: 0,
            objective_surrogate: 0.1 + 0.2,
            objective_original: 1e-300,
            kkt_residual: None,
            wall_ns: 5,
        });
        t.records.push(TraceRecord {
            iter: 1,
            objective_surrogate: -3.5,
            objective_original: 2.0 / 3.0,
            kkt_residual: Some(1.25e-9),
            wall_ns: 9,
        });
        let p = dir.path().join("t.csv");
        write_trace_csv(&t, &p, true).unwrap();
        assert_eq!(read_trace_csv(&p).unwrap().records, t.records);
    }

    #[test]
    fn failures_write_error_record() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(dir.path(), Scenario::Association, SolverKind::Oracle, &[("users", "5")]);
        let report = run_experiment(&c).unwrap();
        assert_eq!(report.exit_code(), 1);
        let text = fs::read_to_string(dir.path().join("error.toml")).unwrap();
        assert!(text.contains("exceeds the oracle limit"), "{text}");
        assert!(!dir.path().join("solution.toml").exists());

        let c = cfg(
            dir.path(),
            Scenario::Offloading,
            SolverKind::Transform,
            &[("userz", "5")],
        );
        assert_eq!(run_experiment(&c).unwrap().exit_code(), 1);
    }

    #[test]
    fn iteration_cap_exits_with_two() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = cfg(dir.path(), Scenario::GenericMp, SolverKind::Transform, &[]);
        c.max_iters = 1;
        c.eps_rel = 1e-15;
        assert_eq!(run_experiment(&c).unwrap().exit_code(), 2);
    }

    #[test]
    fn hash_depends_on_instance_only() {
        let a = cfg(
            Path::new("a"),
            Scenario::Association,
            SolverKind::Transform,
            &[("users", "3")],
        );
        let b = ExperimentConfig {
            solver: SolverKind::Ao,
            out: "b".into(),
            ..a.clone()
        };
        let ha = build_instance(&a).unwrap().0.hash().unwrap();
        assert_eq!(ha, build_instance(&b).unwrap().0.hash().unwrap());
        let c = ExperimentConfig { seed: 8, ..a };
        assert_ne!(ha, build_instance(&c).unwrap().0.hash().unwrap());
    }
}
