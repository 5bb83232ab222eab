//! Experiment configuration and the resolved record written next to each run.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use prodfrac_core::baselines::GridSpec;
use prodfrac_core::transform::StoppingRule;
use prodfrac_core::DEFAULT_C1;

use crate::generators::{GenericGenConfig, HetNetGenConfig, OffloadingGenConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Offloading,
    Association,
    GenericMp,
    GenericFp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Transform,
    Ao,
    Oracle,
    Dinkelbach,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.to_possible_value().expect("no skipped variants").get_name())
    }
}

/// Everything needed to reproduce a run. A fixed config yields identical artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    /// Stored as a TOML integer, so at most `i64::MAX`.
    pub seed: u64,
    pub solver: SolverKind,
    pub eps_rel: f64,
    pub max_iters: usize,
    pub c1: f64,
    /// Record elapsed nanoseconds in the trace; off keeps traces byte-stable.
    pub record_wall_time: bool,
    /// The association oracle grids each fixed association instead of running the frozen intra solve.
    pub oracle_grid: bool,
    pub out: PathBuf,
    pub grid: GridSpec,
    /// Generator field overrides, `name = "value"`.
    pub overrides: BTreeMap<String, String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Offloading,
            seed: 0,
            solver: SolverKind::Transform,
            eps_rel: 1e-6,
            max_iters: 500,
            c1: DEFAULT_C1,
            record_wall_time: false,
            oracle_grid: false,
            out: PathBuf::from("run"),
            grid: GridSpec::default(),
            overrides: BTreeMap::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            bail!("seed {} does not fit a TOML integer", self.seed);
        }
        StoppingRule::new(self.eps_rel, self.max_iters)?;
        if !(self.c1 > 0.0 && self.c1.is_finite()) {
            bail!("c1 must be positive and finite, got {}", self.c1);
        }
        if self.grid.points_per_dim < 3 {
            bail!("grid needs at least three points per dimension");
        }
        let supported = match self.scenario {
            Scenario::Offloading => matches!(self.solver, SolverKind::Transform | SolverKind::Oracle),
            Scenario::Association => matches!(self.solver, SolverKind::Transform | SolverKind::Ao | SolverKind::Oracle),
            Scenario::GenericMp => self.solver == SolverKind::Transform,
            Scenario::GenericFp => matches!(self.solver, SolverKind::Transform | SolverKind::Dinkelbach),
        };
        if !supported {
            bail!("solver {} is not available for scenario {}", self.solver, self.scenario);
        }
        Ok(())
    }

    pub fn stopping(&self) -> Result<StoppingRule> {
        Ok(StoppingRule::new(self.eps_rel, self.max_iters)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing experiment config")?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Generator settings after overrides, one table per scenario family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub enum GeneratorConfig {
    #[serde(rename = "offloading")]
    Offloading(OffloadingGenConfig),
    #[serde(rename = "association")]
    Association(HetNetGenConfig),
    #[serde(rename = "generic")]
    Generic(GenericGenConfig),
}

/// The `config.toml` artifact: the experiment, the generator actually used and the instance hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedConfig {
    pub instance_hash: String,
    pub experiment: ExperimentConfig,
    pub generator: GeneratorConfig,
}

impl ResolvedConfig {
    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).context("parsing resolved config")
    }
}

/// Parses `key=value` override arguments.
pub fn parse_overrides(items: &[String]) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for item in items {
        let Some((k, v)) = item.split_once('=') else {
            bail!("override {item:?} is not of the form key=value");
        };
        let k = k.trim();
        if k.is_empty() {
            bail!("override {item:?} has an empty key");
        }
        map.insert(k.to_string(), v.trim().to_string());
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips() {
        let mut cfg = ExperimentConfig {
            scenario: Scenario::Association,
            seed: 42,
            solver: SolverKind::Ao,
            eps_rel: 1e-4,
            ..ExperimentConfig::default()
        };
        cfg.overrides.insert("users".into(), "3".into());
        let text = cfg.to_toml_string().unwrap();
        assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn resolved_round_trips() {
        let r = ResolvedConfig {
            instance_hash: "ab".into(),
            experiment: ExperimentConfig::default(),
            generator: GeneratorConfig::Association(HetNetGenConfig::default()),
        };
        let text = r.to_toml_string().unwrap();
        assert_eq!(ResolvedConfig::from_toml_str(&text).unwrap(), r);
    }

    #[test]
    fn unknown_keys_and_bad_pairs_rejected() {
        assert!(ExperimentConfig::from_toml_str("seeed = 3").is_err());
        let cfg = ExperimentConfig {
            solver: SolverKind::Dinkelbach,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig {
            seed: u64::MAX,
            ..ExperimentConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overrides_parse() {
        let m = parse_overrides(&["users=3".into(), " tau = 10 ".into()]).unwrap();
        assert_eq!(m["users"], "3");
        assert_eq!(m["tau"], "10");
        assert!(parse_overrides(&["users".into()]).is_err());
        assert!(parse_overrides(&["=3".into()]).is_err());
    }
}
