//! Intra (transformed subproblem) and inter (penalty linearisation) loops.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::model::*;
use super::surrogate::*;
use crate::convex::{pgd_minimize, Bounds, FeasibleSet, PgdConfig};
use crate::error::{Error, Result};
use crate::trace::{ConvergenceTrace, SolveStatus};
use crate::transform::StoppingRule;
use crate::DEFAULT_C1;

/// Budget residual tolerated after repair, relative to the SBS budget.
pub const BUDGET_TOL: f64 = 1e-8;

/// Floor of the release phase and the frozen repair. It sits above the zero-factor
/// threshold so no factor enters the constant branch mid-solve.
const RELEASE_FLOOR: f64 = 1e-9;

/// Offload splits below this are tried at zero after the repair pass.
const SNAP_SHARE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterConfig {
    pub intra: StoppingRule,
    pub pgd: PgdConfig,
    pub c1: f64,
    /// Outer stop: sup-norm change of the normalised iterate.
    pub outer_tol: f64,
    pub max_outer: usize,
    /// Lower bound on association entries and splits while the association is relaxed.
    pub relax_floor: f64,
}

impl Default for InterConfig {
    fn default() -> Self {
        Self {
            intra: StoppingRule::default(),
            // each intra step only needs to lower the surrogate, not minimise it
            pgd: PgdConfig {
                max_iters: 100,
                ..PgdConfig::default()
            },
            c1: DEFAULT_C1,
            outer_tol: 1e-4,
            max_outer: 50,
            relax_floor: 1e-4,
        }
    }
}

impl InterConfig {
    pub fn validate(&self) -> Result<()> {
        self.intra.validate()?;
        self.pgd.validate()?;
        let floor_ok = self.relax_floor >= 0.0 && self.relax_floor < 1.0 / 3.0;
        if !(self.c1 > 0.0 && self.outer_tol > 0.0 && self.max_outer >= 1 && floor_ok) {
            return Err(Error::InvalidInput(format!("invalid outer loop config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IntraOutcome {
    /// Normalised iterate.
    pub z: Vec<f64>,
    pub vars: AssocVars,
    pub aux: NestedAux,
    /// Surrogate column: transformed intra objective; original column: [`penalized_cost`].
    pub trace: ConvergenceTrace,
    pub status: SolveStatus,
    pub objective: f64,
}

#[derive(Debug, Clone)]
pub struct InterOutcome {
    pub vars: AssocVars,
    /// Exact cost of the repaired binary solution.
    pub cost: f64,
    /// Concatenated intra traces including the repair pass.
    pub trace: ConvergenceTrace,
    /// Trace index where each outer iteration starts; the last entry starts the repair pass.
    pub segment_starts: Vec<usize>,
    pub status: SolveStatus,
    pub outer_iterations: usize,
    /// Largest distance of the relaxed association from binary before rounding.
    pub relaxed_gap: f64,
    pub relaxed_cost: f64,
    /// Association flips accepted by the polish after rounding.
    pub flips: usize,
}

/// Starting point: even association and splits, full local frequency and power.
pub fn seed_point(inst: &HetNetInstance) -> Vec<f64> {
    let share = 1.0 / inst.users() as f64;
    let mut u = [0.0; PER_USER];
    u[X_SBS] = 0.5;
    u[X_MBS] = 0.5;
    u[LOCAL_SHARE] = 1.0 / 3.0;
    u[SBS_SHARE] = 1.0 / 3.0;
    u[FWD_SHARE] = 1.0 / 3.0;
    u[MBS_SHARE] = 0.5;
    u[F_LOCAL] = 1.0;
    u[F_SBS] = share;
    u[POWER] = 1.0;
    u.repeat(inst.users())
}

fn feasible_set(z: &[f64], freeze_x: bool, floor: f64, lambda: &[AuxPair]) -> FeasibleSet {
    // a product factor at exactly zero cannot regrow under its majoriser
    let floor = if freeze_x { RELEASE_FLOOR.min(floor) } else { floor };
    let users = z.len() / PER_USER;
    let mut boxes = Vec::with_capacity(z.len());
    for u in z.chunks_exact(PER_USER) {
        for (i, v) in u.iter().enumerate() {
            boxes.push(match i {
                X_SBS | X_MBS if freeze_x => Bounds::fixed(*v),
                F_LOCAL | F_SBS | POWER => Bounds::new(NORM_FLOOR, 1.0),
                // the local complement of the MBS share is a product factor too
                MBS_SHARE => Bounds::new(floor, 1.0 - floor),
                _ => Bounds::new(0.0, 1.0),
            });
        }
    }
    let mut set = FeasibleSet::from_boxes(boxes);
    for n in 0..users {
        let base = n * PER_USER;
        if !freeze_x {
            set = set.with_simplex_row(vec![base + X_SBS, base + X_MBS]);
        }
        set = set.with_simplex_row(vec![base + LOCAL_SHARE, base + SBS_SHARE, base + FWD_SHARE]);
    }
    set.with_simplex_floor(floor)
        .with_extra_ineq(Arc::new(BudgetRestriction {
            lambda: lambda.to_vec(),
        }))
}

/// Shrinks SBS frequencies so the normalised budget holds.
fn enforce_budget(z: &mut [f64]) {
    let used = budget_residual(z) + 1.0;
    if used > 1.0 {
        for u in z.chunks_exact_mut(PER_USER) {
            u[F_SBS] = (u[F_SBS] / used).max(NORM_FLOOR);
        }
    }
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max)
}

/// Solves the subproblem whose penalty is linearised at `x_lin`, starting from `z0`.
///
/// With `freeze_x` the association of `z0` is held fixed and only the continuous
/// variables move.
pub fn intra_solve(
    inst: &HetNetInstance,
    x_lin: &[[f64; 2]],
    z0: &[f64],
    freeze_x: bool,
    cfg: &InterConfig,
) -> Result<IntraOutcome> {
    inst.validate()?;
    cfg.validate()?;
    if z0.len() != PER_USER * inst.users() || x_lin.len() != inst.users() {
        return Err(Error::InvalidInput("start point does not match the instance".into()));
    }
    let mut z = z0.to_vec();
    enforce_budget(&mut z);
    let probe = feasible_set(&z, freeze_x, cfg.relax_floor, &[]);
    z = FeasibleSet {
        extra_ineq: None,
        ..probe
    }
    .project(&z)?;
    enforce_budget(&mut z);

    let mut aux = nested_aux_update(inst, &z, cfg.c1)?;
    let mut trace = ConvergenceTrace::new();
    let mut current = intra_objective(inst, &z, x_lin);
    let surrogate_now = |z: &[f64], aux: &NestedAux| IntraSurrogate { inst, aux, x_lin }.value_at(z);
    trace.push(surrogate_now(&z, &aux), penalized_cost(inst, &z), None);
    let mut status = SolveStatus::MaxItersExceeded;
    for _ in 0..cfg.intra.max_iters {
        let objective = IntraSurrogate { inst, aux: &aux, x_lin };
        let set = feasible_set(&z, freeze_x, cfg.relax_floor, &aux.lambda);
        let res = pgd_minimize(&objective, &set, &cfg.pgd, &z)?;
        if objective.value_at(&res.x) <= objective.value_at(&z) && res.ineq_violation <= crate::convex::INEQ_TOL {
            z = res.x;
        }
        let mut fresh = nested_aux_update(inst, &z, cfg.c1)?;
        fresh.carry_constants(&aux);
        aux = fresh;
        let next = intra_objective(inst, &z, x_lin);
        trace.push(surrogate_now(&z, &aux), penalized_cost(inst, &z), None);
        let settled = cfg.intra.settled(current, next);
        current = next;
        if settled {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(IntraOutcome {
        vars: AssocVars::from_normalized(inst, &z),
        z,
        aux,
        trace,
        status,
        objective: current,
    })
}

impl IntraSurrogate<'_> {
    fn value_at(&self, z: &[f64]) -> f64 {
        crate::convex::Objective::value(self, z)
    }
}

/// Association rounded to the larger entry per user; ties go to the SBS.
pub fn round_association(x: &[[f64; 2]]) -> Vec<[f64; 2]> {
    x.iter()
        .map(|r| if r[SBS] >= r[MBS] { [1.0, 0.0] } else { [0.0, 1.0] })
        .collect()
}

/// Re-optimises the continuous variables with the association fixed and reports
/// the exact cost. Fails with [`Error::RoundingInfeasible`] if the SBS budget
/// cannot be met.
pub fn repair_binary(
    inst: &HetNetInstance,
    x: &[[f64; 2]],
    z0: &[f64],
    cfg: &InterConfig,
) -> Result<(IntraOutcome, f64)> {
    let mut z = z0.to_vec();
    for (u, row) in z.chunks_exact_mut(PER_USER).zip(x) {
        u[X_SBS] = row[SBS];
        u[X_MBS] = row[MBS];
    }
    let mut out = intra_solve(inst, x, &z, true, cfg)?;
    // the majoriser shrinks small splits only geometrically
    let snapped = snap_small_shares(&out.z);
    let snapped_vars = AssocVars::from_normalized(inst, &snapped);
    if total_cost(inst, &snapped_vars)? < total_cost(inst, &out.vars)? {
        out.z = snapped;
        out.vars = snapped_vars;
    }
    let used: f64 = out.vars.x.iter().zip(&out.vars.f_sbs).map(|(r, f)| r[SBS] * f).sum();
    let residual = (used - inst.f_sbs_total) / inst.f_sbs_total;
    if residual > BUDGET_TOL {
        return Err(Error::RoundingInfeasible { residual });
    }
    let cost = total_cost(inst, &out.vars)?;
    Ok((out, cost))
}

fn snap_small_shares(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    for u in out.chunks_exact_mut(PER_USER) {
        for i in [SBS_SHARE, FWD_SHARE] {
            if u[i] < SNAP_SHARE {
                u[LOCAL_SHARE] += u[i];
                u[i] = 0.0;
            }
        }
        if u[MBS_SHARE] < SNAP_SHARE {
            u[MBS_SHARE] = 0.0;
        }
    }
    out
}

/// Outer loop: relinearise the binarity penalty at the last intra solution until the
/// iterate stops moving, then round and repair.
pub fn inter_solve(inst: &HetNetInstance, cfg: &InterConfig) -> Result<InterOutcome> {
    inter_solve_from(inst, cfg, &seed_point(inst))
}

pub fn inter_solve_from(inst: &HetNetInstance, cfg: &InterConfig, z0: &[f64]) -> Result<InterOutcome> {
    inst.validate()?;
    cfg.validate()?;
    let mut z = z0.to_vec();
    let mut trace = ConvergenceTrace::new();
    let mut segment_starts = Vec::new();
    let mut status = SolveStatus::MaxItersExceeded;
    let mut outer_iterations = 0;
    // the floored phase explores, the release phase lets the penalty binarise x
    let released = InterConfig {
        relax_floor: RELEASE_FLOOR.min(cfg.relax_floor),
        ..*cfg
    };
    let phases: &[&InterConfig] = if released.relax_floor < cfg.relax_floor {
        &[cfg, &released]
    } else {
        &[cfg]
    };
    for phase in phases {
        status = SolveStatus::MaxItersExceeded;
        for _ in 0..phase.max_outer {
            outer_iterations += 1;
            let x_lin = assoc_rows(&z);
            let out = intra_solve(inst, &x_lin, &z, false, phase)?;
            segment_starts.push(trace.len());
            trace.extend_renumbered(&out.trace);
            let moved = sup_distance(&out.z, &z);
            z = out.z;
            if moved <= phase.outer_tol {
                status = SolveStatus::Converged;
                break;
            }
        }
    }
    let relaxed = AssocVars::from_normalized(inst, &z);
    let relaxed_gap = relaxed.binary_gap();
    let relaxed_cost = penalized_cost(inst, &z);
    let x = round_association(&relaxed.x);
    let (repaired, cost) = repair_binary(inst, &x, &z, cfg)?;
    // offload shares that vanished in the relaxation cannot regrow, so the repair
    // is also run from the interior seed and the cheaper result kept
    let (repaired, cost) = match repair_binary(inst, &x, &seed_point(inst), cfg) {
        Ok((alt, alt_cost)) if alt_cost < cost => (alt, alt_cost),
        _ => (repaired, cost),
    };
    let (repaired, cost, flips) = polish_association(inst, x, repaired, cost, cfg)?;
    segment_starts.push(trace.len());
    trace.extend_renumbered(&repaired.trace);
    Ok(InterOutcome {
        vars: repaired.vars,
        cost,
        trace,
        segment_starts,
        status,
        outer_iterations,
        relaxed_gap,
        relaxed_cost,
        flips,
    })
}

/// Single-user association flips after rounding, each repaired from the seed point,
/// kept while they strictly lower the cost.
///
/// A relaxation that settles at all-local computation leaves the association
/// uninformative, because every base station then looks equally loaded.
fn polish_association(
    inst: &HetNetInstance,
    mut x: Vec<[f64; 2]>,
    mut best: IntraOutcome,
    mut cost: f64,
    cfg: &InterConfig,
) -> Result<(IntraOutcome, f64, usize)> {
    let start = seed_point(inst);
    let mut flips = 0;
    let mut improved = true;
    while improved {
        improved = false;
        for n in 0..x.len() {
            let mut cand = x.clone();
            cand[n] = [cand[n][MBS], cand[n][SBS]];
            match repair_binary(inst, &cand, &start, cfg) {
                Ok((out, c)) if c < cost => {
                    (x, best, cost) = (cand, out, c);
                    flips += 1;
                    improved = true;
                }
                Ok(_) | Err(Error::RoundingInfeasible { .. }) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok((best, cost, flips))
}
