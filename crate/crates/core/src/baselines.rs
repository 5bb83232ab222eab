//! Reference solvers used to check the transform-based ones.
//!
//! The grid oracles share no code path with the solvers they check: they use
//! plain grid refinement for every one-dimensional minimisation and their own
//! bisection for the budget multiplier. The alternating-optimisation baseline
//! works on the untransformed objective with the true load factor.

use serde::{Deserialize, Serialize};

use crate::convex::{pgd_minimize, Bounds, FeasibleSet, FnObjective, Objective, PgdConfig};
use crate::error::{Error, Result};
use crate::hetnet::model::*;
use crate::hetnet::solve::{round_association, seed_point, InterConfig, InterOutcome, BUDGET_TOL};
use crate::hetnet::surrogate::budget_residual;
use crate::offloading::{offload_objective, OffloadingInstance, OffloadingVars};
use crate::trace::{ConvergenceTrace, SolveStatus};
use crate::transform::ScalarField;

/// Largest user count accepted by the offloading grid oracle.
pub const OFFLOAD_ORACLE_MAX_USERS: usize = 2;
/// Largest user count accepted by the exhaustive association search.
pub const EXHAUSTIVE_MAX_USERS: usize = 3;

/// Uniform grid with repeated zoom-in around the best node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub points_per_dim: usize,
    /// Each round shrinks the window to [`ZOOM`] of its width around the incumbent.
    pub refine_rounds: usize,
}

/// Window shrink factor of one refinement round.
pub const ZOOM: f64 = 0.2;

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            points_per_dim: 201,
            refine_rounds: 2,
        }
    }
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        if self.points_per_dim < 3 {
            return Err(Error::InvalidInput("grid needs at least three points".into()));
        }
        Ok(())
    }
}

/// Minimises `f` over `[lo, hi]` by a grid followed by zoomed regrids.
pub fn grid_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64, spec: GridSpec) -> (f64, f64) {
    let (lo0, hi0) = (lo, hi);
    let (mut lo, mut hi) = (lo, hi);
    let mut best = (lo, f(lo));
    for _ in 0..=spec.refine_rounds {
        let step = (hi - lo) / (spec.points_per_dim - 1) as f64;
        for i in 0..spec.points_per_dim {
            let t = if i + 1 == spec.points_per_dim {
                hi
            } else {
                lo + step * i as f64
            };
            let v = f(t);
            if v < best.1 {
                best = (t, v);
            }
        }
        let half = 0.5 * ZOOM * (hi - lo);
        lo = (best.0 - half).max(lo0);
        hi = (best.0 + half).min(hi0);
    }
    best
}

fn grid_nodes(spec: GridSpec) -> Vec<f64> {
    (0..spec.points_per_dim)
        .map(|i| i as f64 / (spec.points_per_dim - 1) as f64)
        .collect()
}

/// Global minimum of the offloading problem for at most two users, by brute force.
pub fn grid_oracle_offloading(inst: &OffloadingInstance, spec: GridSpec) -> Result<(OffloadingVars, f64)> {
    inst.validate()?;
    spec.validate()?;
    let users = inst.users();
    if users > OFFLOAD_ORACLE_MAX_USERS {
        return Err(Error::DimensionTooLarge {
            got: users,
            limit: OFFLOAD_ORACLE_MAX_USERS,
        });
    }
    let local: Vec<(f64, f64)> = (0..users)
        .map(|n| grid_min(|f| inst.h_local(n, f), inst.f_local_floor(n), inst.f_local_max[n], spec))
        .collect();
    let edge_cap = |n: usize| inst.f_edge_max[n].min(inst.f_edge_total);
    // best edge frequencies and their weighted cost for offload weights `x`
    let edge = |x: &[f64]| -> (Vec<f64>, f64) {
        if users == 1 {
            let (f, v) = grid_min(|f| inst.h_edge(0, f), inst.f_edge_floor(0), edge_cap(0), spec);
            return (vec![f], x[0] * v);
        }
        let inner = |f1: f64| {
            let hi = edge_cap(1).min(inst.f_edge_total - f1).max(inst.f_edge_floor(1));
            grid_min(|f| x[1] * inst.h_edge(1, f), inst.f_edge_floor(1), hi, spec)
        };
        let hi0 = edge_cap(0).min(inst.f_edge_total - inst.f_edge_floor(1));
        let (f1, v) = grid_min(
            |f1| x[0] * inst.h_edge(0, f1) + inner(f1).1,
            inst.f_edge_floor(0),
            hi0,
            spec,
        );
        (vec![f1, inner(f1).0], v)
    };
    let nodes = grid_nodes(spec);
    let mut best: Option<(Vec<f64>, Vec<f64>, f64)> = None;
    let mut x = vec![0.0; users];
    let combos = nodes.len().pow(users as u32);
    for k in 0..combos {
        let mut r = k;
        for slot in x.iter_mut() {
            *slot = nodes[r % nodes.len()];
            r /= nodes.len();
        }
        let (f_edge, edge_cost) = edge(&x);
        let local_cost: f64 = x.iter().zip(&local).map(|(xi, (_, v))| (1.0 - xi) * v).sum();
        let total = local_cost + edge_cost;
        if best.as_ref().is_none_or(|b| total < b.2) {
            best = Some((x.clone(), f_edge, total));
        }
    }
    let (x, f_edge, _) = best.expect("grid is non-empty");
    let vars = OffloadingVars {
        x,
        f_local: local.iter().map(|(f, _)| *f).collect(),
        f_edge,
    };
    let cost = offload_objective(inst, &vars)?;
    Ok((vars, cost))
}

/// How each fixed association is solved by [`exhaustive_association`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExhaustiveMode {
    /// Route enumeration with grid-refined one-dimensional minimisations.
    Grid(GridSpec),
    /// The transform intra solver with the association frozen.
    Intra(InterConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveOutcome {
    pub vars: AssocVars,
    pub cost: f64,
    /// Cost of every association, indexed by the bitmask of SBS users.
    pub per_association: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Route {
    Local,
    Forward,
    SbsCompute,
    Mbs,
}

/// Best binary association for at most three users by enumerating all of them.
pub fn exhaustive_association(inst: &HetNetInstance, mode: ExhaustiveMode) -> Result<ExhaustiveOutcome> {
    inst.validate()?;
    let users = inst.users();
    if users > EXHAUSTIVE_MAX_USERS {
        return Err(Error::DimensionTooLarge {
            got: users,
            limit: EXHAUSTIVE_MAX_USERS,
        });
    }
    let mut best: Option<(AssocVars, f64)> = None;
    let mut per_association = Vec::with_capacity(1 << users);
    for mask in 0..(1usize << users) {
        let x: Vec<[f64; 2]> = (0..users)
            .map(|n| if mask >> n & 1 == 1 { [1.0, 0.0] } else { [0.0, 1.0] })
            .collect();
        let (vars, cost) = match mode {
            ExhaustiveMode::Grid(spec) => grid_fixed_association(inst, &x, spec)?,
            ExhaustiveMode::Intra(cfg) => {
                let (out, cost) = crate::hetnet::solve::repair_binary(inst, &x, &seed_point(inst), &cfg)?;
                (out.vars, cost)
            }
        };
        per_association.push(cost);
        if best.as_ref().is_none_or(|b| cost < b.1) {
            best = Some((vars, cost));
        }
    }
    let (vars, cost) = best.expect("at least one association");
    Ok(ExhaustiveOutcome {
        vars,
        cost,
        per_association,
    })
}

fn grid_fixed_association(inst: &HetNetInstance, x: &[[f64; 2]], spec: GridSpec) -> Result<(AssocVars, f64)> {
    spec.validate()?;
    let users = inst.users();
    let load = effective_load(load_of(x.iter().copied()));
    let on_sbs: Vec<bool> = x.iter().map(|r| r[SBS] == 1.0).collect();
    let local: Vec<(f64, f64)> = (0..users)
        .map(|n| grid_min(|f| inst.local_kernel(n, f).0, NORM_FLOOR, 1.0, spec))
        .collect();
    let uplink: Vec<(f64, f64)> = (0..users)
        .map(|n| {
            let m = if on_sbs[n] { SBS } else { MBS };
            grid_min(|p| inst.uplink_kernel(n, m, p).0, NORM_FLOOR, 1.0, spec)
        })
        .collect();
    let choices = |n: usize| -> &'static [Route] {
        if on_sbs[n] {
            &[Route::Local, Route::Forward, Route::SbsCompute]
        } else {
            &[Route::Local, Route::Mbs]
        }
    };
    let combos: usize = (0..users).map(|n| choices(n).len()).product();
    let mut best: Option<(AssocVars, f64)> = None;
    for k in 0..combos {
        let mut r = k;
        let routes: Vec<Route> = (0..users)
            .map(|n| {
                let c = choices(n);
                let route = c[r % c.len()];
                r /= c.len();
                route
            })
            .collect();
        let computing: Vec<usize> = (0..users).filter(|&n| routes[n] == Route::SbsCompute).collect();
        let idle_sbs = (0..users)
            .filter(|&n| on_sbs[n] && routes[n] != Route::SbsCompute)
            .count();
        let budget = 1.0 - NORM_FLOOR * idle_sbs as f64;
        let f_sbs = split_sbs_budget(inst, &computing, budget, spec);
        let mut z = Vec::with_capacity(users * PER_USER);
        for n in 0..users {
            let mut u = [0.0; PER_USER];
            u[X_SBS] = x[n][SBS];
            u[X_MBS] = x[n][MBS];
            u[F_LOCAL] = 1.0;
            u[F_SBS] = NORM_FLOOR;
            u[POWER] = 1.0;
            match routes[n] {
                Route::Local => {
                    u[LOCAL_SHARE] = 1.0;
                    u[F_LOCAL] = local[n].0;
                }
                Route::Forward => {
                    u[FWD_SHARE] = 1.0;
                    u[POWER] = uplink[n].0;
                }
                Route::SbsCompute => {
                    u[SBS_SHARE] = 1.0;
                    u[POWER] = uplink[n].0;
                }
                Route::Mbs => {
                    u[MBS_SHARE] = 1.0;
                    u[POWER] = uplink[n].0;
                }
            }
            if !on_sbs[n] {
                u[LOCAL_SHARE] = 1.0;
            }
            z.extend_from_slice(&u);
        }
        for (&n, f) in computing.iter().zip(&f_sbs) {
            z[n * PER_USER + F_SBS] = *f;
        }
        let cost = cost_with_load(inst, &z, load);
        if best.as_ref().is_none_or(|b| cost < b.1) {
            best = Some((AssocVars::from_normalized(inst, &z), cost));
        }
    }
    let (vars, _) = best.expect("at least one route");
    let cost = total_cost(inst, &vars)?;
    Ok((vars, cost))
}

/// SBS frequencies minimising the summed compute cost of `users` within `budget`
/// (normalised), by bisection on the budget price.
fn split_sbs_budget(inst: &HetNetInstance, users: &[usize], budget: f64, spec: GridSpec) -> Vec<f64> {
    let at_price = |price: f64| -> Vec<f64> {
        users
            .iter()
            .map(|&n| grid_min(|f| inst.sbs_kernel(n, f).0 + price * f, NORM_FLOOR, 1.0, spec).0)
            .collect()
    };
    let free = at_price(0.0);
    if free.iter().sum::<f64>() <= budget {
        return free;
    }
    let mut hi = 1.0;
    while at_price(hi).iter().sum::<f64>() > budget {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at_price(mid).iter().sum::<f64>() > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // the grid leaves part of the budget unused; every kernel still decreases
    // below its free optimum, so hand the rest out proportionally up to it
    let mut f = at_price(hi);
    for _ in 0..50 {
        let left = budget - f.iter().sum::<f64>();
        let open: f64 = f.iter().zip(&free).filter(|(a, b)| a < b).map(|(a, _)| a).sum();
        if left <= 1e-15 * budget || open <= 0.0 {
            break;
        }
        for (fi, cap) in f.iter_mut().zip(&free) {
            if *fi < *cap {
                *fi = (*fi + left * *fi / open).min(*cap);
            }
        }
    }
    f
}

/// Untransformed relaxed objective with true load and the linearised penalty.
struct AoObjective<'a> {
    inst: &'a HetNetInstance,
    x_lin: &'a [[f64; 2]],
}

impl Objective for AoObjective<'_> {
    fn value(&self, z: &[f64]) -> f64 {
        let load = effective_load(load_normalized(z));
        cost_with_load(self.inst, z, load) + penalty_linearized(&assoc_rows(z), self.x_lin, self.inst.tau).0
    }

    fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let load = effective_load(load_normalized(z));
        cost_gradient(self.inst, z, load, true, grad);
        let (pen, pen_grad) = penalty_linearized(&assoc_rows(z), self.x_lin, self.inst.tau);
        for (g, pg) in grad.chunks_exact_mut(PER_USER).zip(pen_grad) {
            g[X_SBS] += pg[SBS];
            g[X_MBS] += pg[MBS];
        }
        cost_with_load(self.inst, z, load) + pen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Association,
    Shares,
    LocalFreq,
    SbsFreq,
    Power,
}

const BLOCKS: [Block; 5] = [
    Block::Association,
    Block::Shares,
    Block::LocalFreq,
    Block::SbsFreq,
    Block::Power,
];

fn block_set(z: &[f64], block: Block) -> FeasibleSet {
    let free = |i: usize| match block {
        Block::Association => i == X_SBS || i == X_MBS,
        Block::Shares => matches!(i, LOCAL_SHARE | SBS_SHARE | FWD_SHARE | MBS_SHARE),
        Block::LocalFreq => i == F_LOCAL,
        Block::SbsFreq => i == F_SBS,
        Block::Power => i == POWER,
    };
    let boxes = z
        .chunks_exact(PER_USER)
        .flat_map(|u| {
            u.iter().enumerate().map(move |(i, v)| {
                if !free(i) {
                    Bounds::fixed(*v)
                } else if matches!(i, F_LOCAL | F_SBS | POWER) {
                    Bounds::new(NORM_FLOOR, 1.0)
                } else {
                    Bounds::new(0.0, 1.0)
                }
            })
        })
        .collect();
    let mut set = FeasibleSet::from_boxes(boxes);
    for n in 0..z.len() / PER_USER {
        let base = n * PER_USER;
        match block {
            Block::Association => set = set.with_simplex_row(vec![base + X_SBS, base + X_MBS]),
            Block::Shares => set = set.with_simplex_row(vec![base + LOCAL_SHARE, base + SBS_SHARE, base + FWD_SHARE]),
            _ => {}
        }
    }
    match block {
        Block::SbsFreq => {
            let weight = z
                .chunks_exact(PER_USER)
                .flat_map(|u| (0..PER_USER).map(move |i| if i == F_SBS { u[X_SBS] } else { 0.0 }))
                .collect();
            set.with_coupling(weight, 1.0)
        }
        // moving x changes the budget usage, so the association block keeps it as a constraint
        Block::Association => set.with_extra_ineq(std::sync::Arc::new(FnObjective {
            value: budget_residual,
            grad: |z: &[f64], g: &mut [f64]| {
                g.fill(0.0);
                for (u, gu) in z.chunks_exact(PER_USER).zip(g.chunks_exact_mut(PER_USER)) {
                    gu[X_SBS] = u[F_SBS];
                    gu[F_SBS] = u[X_SBS];
                }
            },
        })),
        _ => set,
    }
}

/// One alternating-optimisation solve of the penalised subproblem linearised at `x_lin`.
fn ao_inner(
    inst: &HetNetInstance,
    x_lin: &[[f64; 2]],
    z0: &[f64],
    freeze_x: bool,
    cfg: &InterConfig,
) -> Result<(Vec<f64>, ConvergenceTrace, SolveStatus)> {
    let objective = AoObjective { inst, x_lin };
    let mut z = z0.to_vec();
    let used = budget_residual(&z) + 1.0;
    if used > 1.0 {
        for u in z.chunks_exact_mut(PER_USER) {
            u[F_SBS] = (u[F_SBS] / used).max(NORM_FLOOR);
        }
    }
    let mut trace = ConvergenceTrace::new();
    let mut current = objective.value(&z);
    trace.push(current, penalized_cost(inst, &z), None);
    let mut status = SolveStatus::MaxItersExceeded;
    for _ in 0..cfg.intra.max_iters {
        for block in BLOCKS {
            if freeze_x && block == Block::Association {
                continue;
            }
            let set = block_set(&z, block);
            let res = pgd_minimize(&objective, &set, &cfg.pgd, &z)?;
            if res.ineq_violation <= crate::convex::INEQ_TOL && objective.value(&res.x) <= objective.value(&z) {
                z = res.x;
            }
        }
        let next = objective.value(&z);
        trace.push(next, penalized_cost(inst, &z), None);
        let settled = cfg.intra.settled(current, next);
        current = next;
        if settled {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok((z, trace, status))
}

/// Alternating-optimisation baseline with the same outer linearisation, rounding and
/// repair as the transform solver, but block-wise descent on the untransformed objective.
pub fn ao_baseline_association(inst: &HetNetInstance, cfg: &InterConfig) -> Result<InterOutcome> {
    ao_baseline_from(inst, cfg, &seed_point(inst))
}

/// [`ao_baseline_association`] from an explicit normalised start.
pub fn ao_baseline_from(inst: &HetNetInstance, cfg: &InterConfig, z0: &[f64]) -> Result<InterOutcome> {
    inst.validate()?;
    cfg.validate()?;
    let mut z = z0.to_vec();
    let mut trace = ConvergenceTrace::new();
    let mut segment_starts = Vec::new();
    let mut status = SolveStatus::MaxItersExceeded;
    let mut outer_iterations = 0;
    for _ in 0..cfg.max_outer {
        outer_iterations += 1;
        let x_lin = assoc_rows(&z);
        let (next, seg, _) = ao_inner(inst, &x_lin, &z, false, cfg)?;
        segment_starts.push(trace.len());
        trace.extend_renumbered(&seg);
        let moved = next.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        z = next;
        if moved <= cfg.outer_tol {
            status = SolveStatus::Converged;
            break;
        }
    }
    let relaxed = AssocVars::from_normalized(inst, &z);
    let relaxed_gap = relaxed.binary_gap();
    let relaxed_cost = penalized_cost(inst, &z);
    let x = round_association(&relaxed.x);
    for (u, row) in z.chunks_exact_mut(PER_USER).zip(&x) {
        u[X_SBS] = row[SBS];
        u[X_MBS] = row[MBS];
    }
    let (z, seg, _) = ao_inner(inst, &x, &z, true, cfg)?;
    segment_starts.push(trace.len());
    trace.extend_renumbered(&seg);
    let vars = AssocVars::from_normalized(inst, &z);
    let used: f64 = vars.x.iter().zip(&vars.f_sbs).map(|(r, f)| r[SBS] * f).sum();
    let residual = (used - inst.f_sbs_total) / inst.f_sbs_total;
    if residual > BUDGET_TOL {
        return Err(Error::RoundingInfeasible { residual });
    }
    let cost = total_cost(inst, &vars)?;
    Ok(InterOutcome {
        vars,
        cost,
        trace,
        segment_starts,
        status,
        outer_iterations,
        relaxed_gap,
        relaxed_cost,
        flips: 0,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DinkelbachOutcome {
    pub x: Vec<f64>,
    pub ratio: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Surrogate column: the parameter of each step; original column: the ratio it reached.
    pub trace: ConvergenceTrace,
}

/// Dinkelbach iteration for `min N(x) / D(x)` with convex `N >= 0` and concave `D > 0`.
///
/// Each step minimises `N - lambda D` by projected gradient and resets `lambda` to the
/// ratio at the minimiser; the run stops once `|N - lambda D| <= tol`.
pub fn dinkelbach_single_ratio(
    numerator: &ScalarField,
    denominator: &ScalarField,
    set: &FeasibleSet,
    x0: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<DinkelbachOutcome> {
    set.validate()?;
    if !(tol > 0.0) || max_iters == 0 {
        return Err(Error::InvalidInput(
            "tolerance and iteration cap must be positive".into(),
        ));
    }
    let cfg = PgdConfig {
        grad_tol: 1e-8,
        max_iters: 20_000,
        ..PgdConfig::default()
    };
    let mut x = set.project(x0)?;
    let ratio_at = |x: &[f64]| -> Result<f64> {
        let d = denominator.checked_value(x)?;
        if !(d > 0.0) {
            return Err(crate::error::domain(format!("denominator must be positive, got {d}")));
        }
        Ok(numerator.checked_value(x)? / d)
    };
    let mut lambda = ratio_at(&x)?;
    let mut trace = ConvergenceTrace::new();
    trace.push(lambda, lambda, None);
    for it in 1..=max_iters {
        let lam = lambda;
        let parametric = FnObjective {
            value: |x: &[f64]| numerator.value(x) - lam * denominator.value(x),
            grad: |x: &[f64], g: &mut [f64]| {
                let gn = numerator.gradient(x);
                let gd = denominator.gradient(x);
                for ((gi, a), b) in g.iter_mut().zip(gn).zip(gd) {
                    *gi = a - lam * b;
                }
            },
        };
        let res = pgd_minimize(&parametric, set, &cfg, &x)?;
        x = res.x;
        let gap = numerator.value(&x) - lam * denominator.value(&x);
        lambda = ratio_at(&x)?;
        trace.push(lam, lambda, None);
        if gap.abs() <= tol {
            return Ok(DinkelbachOutcome {
                x,
                ratio: lambda,
                iterations: it,
                status: SolveStatus::Converged,
                trace,
            });
        }
    }
    Ok(DinkelbachOutcome {
        x,
        ratio: lambda,
        iterations: max_iters,
        status: SolveStatus::MaxItersExceeded,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convex::Bounds;
    use crate::transform::FieldRange;

    #[test]
    fn grid_min_finds_interior_and_edge() {
        let spec = GridSpec::default();
        let (x, v) = grid_min(|t| (t - 0.3).powi(2), 0.0, 1.0, spec);
        assert!((x - 0.3).abs() < 1e-10 && v < 1e-18);
        let (x, _) = grid_min(|t| 1.0 / t, 0.1, 2.0, spec);
        assert_eq!(x, 2.0);
        let (x, _) = grid_min(|t| t, 0.1, 2.0, spec);
        assert_eq!(x, 0.1);
    }

    fn two_user() -> OffloadingInstance {
        OffloadingInstance {
            task_bits: vec![2e5, 5e5],
            q_local: vec![1000.0; 2],
            q_edge: vec![1000.0; 2],
            k_dev: vec![1e-26; 2],
            k_edge: 1e-26,
            w1: 0.5,
            w2: 0.5,
            f_edge_total: 4e9,
            f_local_max: vec![1e9; 2],
            f_edge_max: vec![4e9; 2],
        }
    }

    #[test]
    fn offloading_oracle_beats_uniform_points() {
        let inst = two_user();
        let spec = GridSpec {
            points_per_dim: 41,
            refine_rounds: 2,
        };
        let (vars, cost) = grid_oracle_offloading(&inst, spec).unwrap();
        assert!(vars.violation(&inst) <= 1e-9);
        for x in [0.0, 0.5, 1.0] {
            let probe = OffloadingVars::uniform(&inst, x);
            assert!(cost <= offload_objective(&inst, &probe).unwrap() * (1.0 + 1e-12));
        }
    }

    #[test]
    fn oracle_dimension_limits() {
        let mut inst = two_user();
        inst.task_bits.push(1e5);
        inst.q_local.push(1000.0);
        inst.q_edge.push(1000.0);
        inst.k_dev.push(1e-26);
        inst.f_local_max.push(1e9);
        inst.f_edge_max.push(4e9);
        assert!(matches!(
            grid_oracle_offloading(&inst, GridSpec::default()),
            Err(Error::DimensionTooLarge { got: 3, limit: 2 })
        ));
    }

    #[test]
    fn budget_split_fills_budget() {
        let inst = crate::hetnet::surrogate::tests::instance(3);
        let f = split_sbs_budget(&inst, &[0, 1, 2], 0.3, GridSpec::default());
        let sum: f64 = f.iter().sum();
        assert!((0.3 - 1e-6..=0.3 + 1e-12).contains(&sum), "{sum}");
    }

    #[test]
    fn exhaustive_is_no_worse_than_any_association() {
        let inst = crate::hetnet::surrogate::tests::instance(2);
        let out = exhaustive_association(&inst, ExhaustiveMode::Grid(GridSpec::default())).unwrap();
        assert_eq!(out.per_association.len(), 4);
        let min = out.per_association.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(out.cost, min);
        assert_eq!(out.vars.binary_gap(), 0.0);
        assert!(out.vars.violation(&inst) <= 1e-9);
    }

    #[test]
    fn dinkelbach_linear_fractional() {
        // (x + 2) / (4 - x) on [0, 3] is minimised at x = 0 with ratio 1/2
        let num = ScalarField::new(FieldRange::Positive, |x| x[0] + 2.0).with_grad(|_| vec![1.0]);
        let den = ScalarField::new(FieldRange::Positive, |x| 4.0 - x[0]).with_grad(|_| vec![-1.0]);
        let set = FeasibleSet::from_boxes(vec![Bounds::new(0.0, 3.0)]);
        let out = dinkelbach_single_ratio(&num, &den, &set, &[2.0], 1e-12, 50).unwrap();
        assert!(out.status.converged());
        assert!((out.ratio - 0.5).abs() < 1e-12 && out.x[0].abs() < 1e-12);
    }

    #[test]
    fn dinkelbach_interior_optimum() {
        // (x^2 + 1) / x on [0.1, 10] has its minimum 2 at x = 1
        let num = ScalarField::new(FieldRange::Positive, |x| x[0] * x[0] + 1.0);
        let den = ScalarField::new(FieldRange::Positive, |x| x[0]);
        let set = FeasibleSet::from_boxes(vec![Bounds::new(0.1, 10.0)]);
        let out = dinkelbach_single_ratio(&num, &den, &set, &[5.0], 1e-12, 100).unwrap();
        assert!((out.ratio - 2.0).abs() < 1e-9 && (out.x[0] - 1.0).abs() < 1e-4);
    }
}
