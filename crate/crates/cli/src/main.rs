//! `prodfrac` command line: generate instances, run solvers, compare runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use prodfrac_cli::compare::{compare_runs, load_run, rows_to_csv, rows_to_table};
use prodfrac_cli::config::{parse_overrides, ExperimentConfig, ResolvedConfig, Scenario, SolverKind};
use prodfrac_cli::run::{build_instance, run_experiment, RunReport};

#[derive(Parser, Debug)]
#[command(
    name = "prodfrac",
    version,
    about = "Product and ratio transform solvers with benchmark tooling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate an instance and write it with its resolved config.
    Gen {
        #[arg(long, value_enum)]
        scenario: Option<Scenario>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Solve a computation offloading instance.
    SolveOffload(CommonArgs),
    /// Solve a user association instance.
    SolveAssoc(CommonArgs),
    /// Solve a random generic sum-of-products or sum-of-ratios instance.
    SolveGeneric {
        #[arg(long, value_enum, default_value_t = Form::Product)]
        form: Form,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Run the reference oracle of a scenario.
    Oracle {
        #[arg(long, value_enum, default_value_t = OracleScenario::Offloading)]
        scenario: OracleScenario,
        /// Grid every fixed association instead of the frozen intra solve.
        #[arg(long)]
        grid: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compare finished runs on the same instance.
    Compare {
        /// Run directories or trace files.
        #[arg(required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        /// Relative change threshold for iterations-to-eps.
        #[arg(long, default_value_t = 1e-4)]
        eps: f64,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run small end-to-end checks in a scratch directory.
    Selftest {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone, Default)]
struct CommonArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Experiment config in TOML; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    solver: Option<SolverKind>,
    /// Relative objective change at which the solver stops.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Generator field override, `key=value`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Form {
    Product,
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OracleScenario {
    Offloading,
    Association,
}

impl CommonArgs {
    /// Config file (or defaults) with the scenario pinned and every given flag applied.
    fn resolve(&self, scenario: Option<Scenario>) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = scenario {
            if self.config.is_some() && cfg.scenario != s {
                bail!("config scenario {} conflicts with the subcommand ({s})", cfg.scenario);
            }
            cfg.scenario = s;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(solver) = self.solver {
            cfg.solver = solver;
        }
        if let Some(eps) = self.eps {
            cfg.eps_rel = eps;
        }
        if let Some(m) = self.max_iters {
            cfg.max_iters = m;
        }
        cfg.overrides.extend(parse_overrides(&self.overrides)?);
        Ok(cfg)
    }
}

fn report(r: &RunReport, out: &Path) -> ExitCode {
    match (&r.solution, &r.error) {
        (Some(s), _) => {
            println!(
                "{} {}: objective {:.12e} after {} iterations ({:?}); artifacts in {}",
                s.scenario,
                s.solver,
                s.objective,
                s.iterations,
                s.status,
                out.display()
            );
        }
        (None, e) => eprintln!("error: {}", e.as_deref().unwrap_or("unknown")),
    }
    ExitCode::from(r.exit_code() as u8)
}

fn solve(cfg: ExperimentConfig) -> Result<ExitCode> {
    let r = run_experiment(&cfg)?;
    Ok(report(&r, &cfg.out))
}

fn gen(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let (instance, generator) = build_instance(cfg)?;
    fs::create_dir_all(&cfg.out).with_context(|| format!("creating {}", cfg.out.display()))?;
    let resolved = ResolvedConfig {
        instance_hash: instance.hash()?,
        experiment: cfg.clone(),
        generator,
    };
    fs::write(cfg.out.join("instance.toml"), instance.to_toml_string()?)?;
    fs::write(cfg.out.join("config.toml"), resolved.to_toml_string()?)?;
    println!("{} {}", resolved.instance_hash, cfg.out.display());
    Ok(())
}

/// Scenario, solver and generator overrides of one smoke run.
type Case = (Scenario, SolverKind, &'static [(&'static str, &'static str)]);

fn selftest(root: &Path) -> Result<bool> {
    let cases: &[Case] = &[
        (Scenario::Offloading, SolverKind::Transform, &[("users", "4")]),
        (Scenario::Offloading, SolverKind::Oracle, &[("users", "1")]),
        (Scenario::Association, SolverKind::Transform, &[("users", "2")]),
        (Scenario::Association, SolverKind::Ao, &[("users", "2")]),
        (Scenario::GenericMp, SolverKind::Transform, &[]),
        (Scenario::GenericFp, SolverKind::Dinkelbach, &[("terms", "1")]),
    ];
    let mut ok = true;
    for (i, (scenario, solver, ov)) in cases.iter().enumerate() {
        let cfg = ExperimentConfig {
            scenario: *scenario,
            solver: *solver,
            seed: 11,
            out: root.join(format!("{i}-{scenario}-{solver}")),
            overrides: ov.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            ..ExperimentConfig::default()
        };
        let first = run_experiment(&cfg)?;
        let trace_a = fs::read(cfg.out.join("trace.csv")).unwrap_or_default();
        let again = run_experiment(&cfg)?;
        let trace_b = fs::read(cfg.out.join("trace.csv")).unwrap_or_default();
        let loaded = load_run(&cfg.out);
        let pass = first.solution.is_some()
            && again.solution == first.solution
            && trace_a == trace_b
            && loaded.is_ok_and(|l| Some(&l.solution) == first.solution.as_ref());
        println!("{} {scenario} {solver}", if pass { "PASS" } else { "FAIL" });
        ok &= pass;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Gen { scenario, common } => {
            gen(&common.resolve(scenario)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::SolveOffload(common) => solve(common.resolve(Some(Scenario::Offloading))?),
        Command::SolveAssoc(common) => solve(common.resolve(Some(Scenario::Association))?),
        Command::SolveGeneric { form, common } => {
            let scenario = match form {
                Form::Product => Scenario::GenericMp,
                Form::Ratio => Scenario::GenericFp,
            };
            solve(common.resolve(Some(scenario))?)
        }
        Command::Oracle { scenario, grid, common } => {
            let scenario = match scenario {
                OracleScenario::Offloading => Scenario::Offloading,
                OracleScenario::Association => Scenario::Association,
            };
            let mut cfg = common.resolve(Some(scenario))?;
            cfg.solver = SolverKind::Oracle;
            cfg.oracle_grid |= grid;
            solve(cfg)
        }
        Command::Compare { runs, eps, out } => {
            let loaded = runs.iter().map(|p| load_run(p)).collect::<Result<Vec<_>>>()?;
            let rows = compare_runs(&loaded, eps)?;
            print!("{}", rows_to_table(&rows, eps));
            if let Some(out) = out {
                fs::write(&out, rows_to_csv(&rows)?).with_context(|| format!("writing {}", out.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Selftest { out } => {
            let scratch;
            let root = match out {
                Some(p) => p,
                None => {
                    scratch = std::env::temp_dir().join(format!("prodfrac-selftest-{}", std::process::id()));
                    scratch
                }
            };
            let ok = selftest(&root)?;
            println!("{}", if ok { "selftest passed" } else { "selftest failed" });
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
    }
}
