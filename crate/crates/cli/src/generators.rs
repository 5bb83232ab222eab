//! Seeded instance generators.
//!
//! Every generator draws from a single `ChaCha8Rng` seeded with `seed_from_u64`,
//! in a fixed order, so an instance is a pure function of its seed and config.
//! Decibel quantities are converted to linear SI units here.

use std::collections::BTreeMap;

use anyhow::{anyhow, bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use prodfrac_core::convex::{Bounds, FeasibleSet};
use prodfrac_core::hetnet::HetNetInstance;
use prodfrac_core::offloading::OffloadingInstance;
use prodfrac_core::transform::{FieldRange, ProductTerm, RatioTerm, ScalarField, TransformProblem};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OffloadingGenConfig {
    pub users: usize,
    pub task_bits_min: f64,
    pub task_bits_max: f64,
    pub cycles_local: f64,
    pub cycles_edge: f64,
    pub k: f64,
    pub w1: f64,
    pub w2: f64,
    pub f_local_max: f64,
    pub f_edge_total: f64,
}

impl Default for OffloadingGenConfig {
    fn default() -> Self {
        Self {
            users: 30,
            task_bits_min: 1e5,
            task_bits_max: 1e6,
            cycles_local: 1000.0,
            cycles_edge: 1000.0,
            k: 1e-26,
            w1: 0.5,
            w2: 0.5,
            f_local_max: 1.5e9,
            f_edge_total: 10e9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HetNetGenConfig {
    pub users: usize,
    pub radius_m: f64,
    /// Users and the SBS are kept at least this far from each base station.
    pub min_distance_m: f64,
    pub shadowing_db: f64,
    pub noise_dbm: f64,
    pub bandwidth_sbs: f64,
    pub bandwidth_mbs: f64,
    pub p_max: f64,
    pub f_sbs_total: f64,
    pub f_local_max: f64,
    pub data_bits: f64,
    pub cycles_per_bit: f64,
    pub f_mbs: f64,
    pub wired_rate: f64,
    pub wired_power: f64,
    pub k: f64,
    pub tau: f64,
    pub w1: f64,
    pub w2: f64,
}

impl Default for HetNetGenConfig {
    fn default() -> Self {
        Self {
            users: 20,
            radius_m: 1000.0,
            min_distance_m: 10.0,
            shadowing_db: 8.0,
            noise_dbm: -110.0,
            bandwidth_sbs: 5e6,
            bandwidth_mbs: 10e6,
            p_max: 0.1,
            f_sbs_total: 20e9,
            f_local_max: 1e9,
            data_bits: 350.0 * 8.0 * 1000.0,
            cycles_per_bit: 75.0,
            f_mbs: 5e9,
            wired_rate: 1e9,
            wired_power: 1.0,
            k: 1e-25,
            tau: 1e5,
            w1: 1.0,
            w2: 1e-4,
        }
    }
}

/// Random generic problems: `terms` products or ratios over a `dim`-dimensional box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericGenConfig {
    pub terms: usize,
    pub dim: usize,
    pub box_hi: f64,
}

impl Default for GenericGenConfig {
    fn default() -> Self {
        Self {
            terms: 3,
            dim: 3,
            box_hi: 2.0,
        }
    }
}

/// Parses an override value as an integer, float, boolean or, failing those, a string.
pub fn parse_override_value(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = raw.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = raw.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(raw.to_string())
    }
}

/// Applies `key = value` overrides to a serialisable config; unknown keys are errors.
pub fn apply_overrides<T: Serialize + DeserializeOwned>(cfg: &T, overrides: &BTreeMap<String, String>) -> Result<T> {
    let mut table = toml::Value::try_from(cfg)?;
    let map = table.as_table_mut().ok_or_else(|| anyhow!("config is not a table"))?;
    for (key, raw) in overrides {
        let Some(slot) = map.get_mut(key) else {
            bail!("unknown override key `{key}`");
        };
        let mut value = parse_override_value(raw);
        if let (toml::Value::Float(_), toml::Value::Integer(i)) = (&*slot, &value) {
            value = toml::Value::Float(*i as f64);
        }
        *slot = value;
    }
    table
        .try_into()
        .with_context(|| format!("invalid override value in {overrides:?}"))
}

pub fn gen_offloading_instance(seed: u64, cfg: &OffloadingGenConfig) -> Result<OffloadingInstance> {
    if cfg.users == 0 || !(cfg.task_bits_min > 0.0 && cfg.task_bits_min <= cfg.task_bits_max) {
        bail!("offloading generator needs users >= 1 and 0 < task_bits_min <= task_bits_max");
    }
    let mut rng = rng(seed);
    let n = cfg.users;
    let task_bits = (0..n)
        .map(|_| {
            if cfg.task_bits_min == cfg.task_bits_max {
                cfg.task_bits_min
            } else {
                rng.random_range(cfg.task_bits_min..cfg.task_bits_max)
            }
        })
        .collect();
    let inst = OffloadingInstance {
        task_bits,
        q_local: vec![cfg.cycles_local; n],
        q_edge: vec![cfg.cycles_edge; n],
        k_dev: vec![cfg.k; n],
        k_edge: cfg.k,
        w1: cfg.w1,
        w2: cfg.w2,
        f_edge_total: cfg.f_edge_total,
        f_local_max: vec![cfg.f_local_max; n],
        f_edge_max: vec![cfg.f_edge_total; n],
    };
    inst.validate()?;
    Ok(inst)
}

/// Linear gain from a path loss in dB.
pub fn db_to_linear_gain(loss_db: f64) -> f64 {
    10f64.powf(-loss_db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

fn point_in_disc(rng: &mut ChaCha8Rng, radius: f64) -> (f64, f64) {
    let r = radius * rng.random::<f64>().sqrt();
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    (r * phi.cos(), r * phi.sin())
}

pub fn gen_hetnet_instance(seed: u64, cfg: &HetNetGenConfig) -> Result<HetNetInstance> {
    if cfg.users == 0 || !(cfg.radius_m > cfg.min_distance_m) || !(cfg.shadowing_db >= 0.0) {
        bail!("hetnet generator needs users >= 1, radius above the minimum distance and non-negative shadowing");
    }
    let mut rng = rng(seed);
    let shadow = Normal::new(0.0, cfg.shadowing_db)?;
    // MBS at the centre; the SBS and the users uniform in the disc
    let sbs = point_in_disc(&mut rng, cfg.radius_m);
    let mut channel_gain = Vec::with_capacity(cfg.users);
    for _ in 0..cfg.users {
        let (ux, uy) = point_in_disc(&mut rng, cfg.radius_m);
        let d_mbs = ux.hypot(uy).max(cfg.min_distance_m) / 1000.0;
        let d_sbs = (ux - sbs.0).hypot(uy - sbs.1).max(cfg.min_distance_m) / 1000.0;
        let loss_sbs = 140.7 + 36.7 * d_sbs.log10() + shadow.sample(&mut rng);
        let loss_mbs = 128.1 + 36.7 * d_mbs.log10() + shadow.sample(&mut rng);
        channel_gain.push([db_to_linear_gain(loss_sbs), db_to_linear_gain(loss_mbs)]);
    }
    let n = cfg.users;
    let inst = HetNetInstance {
        bandwidth: [cfg.bandwidth_sbs, cfg.bandwidth_mbs],
        channel_gain,
        noise_power: dbm_to_watts(cfg.noise_dbm),
        p_max: vec![cfg.p_max; n],
        wired_rate: cfg.wired_rate,
        wired_power: cfg.wired_power,
        f_local_max: vec![cfg.f_local_max; n],
        f_sbs_total: cfg.f_sbs_total,
        f_mbs: cfg.f_mbs,
        data_bits: vec![cfg.data_bits; n],
        cycles_per_bit: vec![cfg.cycles_per_bit; n],
        k_local: cfg.k,
        k_sbs: cfg.k,
        k_mbs: cfg.k,
        w1: cfg.w1,
        w2: cfg.w2,
        tau: cfg.tau,
    };
    inst.validate()?;
    Ok(inst)
}

/// Coefficients of a random generic instance, kept so it can be serialised and hashed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericInstance {
    pub box_hi: f64,
    /// Per term: `a0 + sum a_i (x_i - p_i)^2`.
    pub quad_const: Vec<f64>,
    pub quad_weight: Vec<Vec<f64>>,
    pub quad_center: Vec<Vec<f64>>,
    /// Per term: `b0 + sum b_i x_i`.
    pub affine_const: Vec<f64>,
    pub affine_weight: Vec<Vec<f64>>,
}

impl GenericInstance {
    pub fn dim(&self) -> usize {
        self.quad_center.first().map_or(0, Vec::len)
    }

    fn quad(&self, k: usize) -> ScalarField {
        let (a0, w, p) = (
            self.quad_const[k],
            self.quad_weight[k].clone(),
            self.quad_center[k].clone(),
        );
        let (w2, p2) = (w.clone(), p.clone());
        ScalarField::new(FieldRange::Positive, move |x| {
            a0 + x
                .iter()
                .zip(&w)
                .zip(&p)
                .map(|((xi, wi), pi)| wi * (xi - pi).powi(2))
                .sum::<f64>()
        })
        .with_grad(move |x| {
            x.iter()
                .zip(&w2)
                .zip(&p2)
                .map(|((xi, wi), pi)| 2.0 * wi * (xi - pi))
                .collect()
        })
    }

    fn affine(&self, k: usize) -> ScalarField {
        let (b0, w) = (self.affine_const[k], self.affine_weight[k].clone());
        let w2 = w.clone();
        ScalarField::new(FieldRange::Positive, move |x| {
            b0 + x.iter().zip(&w).map(|(xi, wi)| wi * xi).sum::<f64>()
        })
        .with_grad(move |_| w2.clone())
    }

    pub fn feasible_set(&self) -> FeasibleSet {
        FeasibleSet::from_boxes(vec![Bounds::new(0.0, self.box_hi); self.dim()])
    }

    /// `sum_k quad_k(x) * affine_k(x)`.
    pub fn product_problem(&self) -> Result<TransformProblem> {
        let terms = (0..self.quad_const.len())
            .map(|k| ProductTerm::new(self.quad(k), self.affine(k)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(TransformProblem::products(terms, self.feasible_set())?)
    }

    /// `sum_k quad_k(x) / affine_k(x)`.
    pub fn ratio_problem(&self) -> Result<TransformProblem> {
        let terms = (0..self.quad_const.len())
            .map(|k| RatioTerm::new(self.quad(k), self.affine(k)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(TransformProblem::ratios(terms, self.feasible_set())?)
    }

    /// Numerator and denominator of the first term.
    pub fn first_ratio(&self) -> (ScalarField, ScalarField) {
        (self.quad(0), self.affine(0))
    }
}

pub fn gen_generic_instance(seed: u64, cfg: &GenericGenConfig) -> Result<GenericInstance> {
    if cfg.terms == 0 || cfg.dim == 0 || !(cfg.box_hi > 0.0) {
        bail!("generic generator needs terms >= 1, dim >= 1 and a positive box");
    }
    let mut rng = rng(seed);
    let mut inst = GenericInstance {
        box_hi: cfg.box_hi,
        quad_const: Vec::new(),
        quad_weight: Vec::new(),
        quad_center: Vec::new(),
        affine_const: Vec::new(),
        affine_weight: Vec::new(),
    };
    for _ in 0..cfg.terms {
        inst.quad_const.push(rng.random_range(0.1..2.0));
        inst.quad_weight
            .push((0..cfg.dim).map(|_| rng.random_range(0.1..2.0)).collect());
        inst.quad_center
            .push((0..cfg.dim).map(|_| rng.random_range(0.0..cfg.box_hi)).collect());
        inst.affine_const.push(rng.random_range(0.5..2.0));
        inst.affine_weight
            .push((0..cfg.dim).map(|_| rng.random_range(-0.2..1.0)).collect());
    }
    // keep every affine factor positive over the box
    for (b0, w) in inst.affine_const.iter_mut().zip(&inst.affine_weight) {
        let worst: f64 = w.iter().map(|wi| wi.min(0.0) * cfg.box_hi).sum();
        *b0 = b0.max(0.1 - worst);
    }
    Ok(inst)
}
