//! Partial offloading with local and edge frequency allocation.
//!
//! Each user splits its task between local execution (share `1 - x`) and one
//! shared edge server (share `x`). The cost of user `n` is
//! `(1 - x) H1(f_local) + x H2(f_edge)` with kernels
//! `H(f) = C q (w1 / f + w2 k f^2)`. Both products are decoupled with the updated
//! transform and the resulting convex subproblem is solved in closed form: `x`
//! from an affine stationarity condition, `f_local` at the kernel's stationary
//! point, and `f_edge` by bisection under a dual multiplier for the edge budget.

use serde::{Deserialize, Serialize};

use crate::convex::{bisect, dual_bisection_coupled, kernel_stationary_freq, BisectTol};
use crate::error::{domain, Error, Result};
use crate::is_zero_factor;
use crate::trace::{ConvergenceTrace, SolveStatus};
use crate::transform::{mp_aux_value, mp_surrogate_value, StoppingRule};

/// Lower frequency floor as a fraction of the corresponding cap.
pub const FREQ_FLOOR_REL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadingInstance {
    /// Task size per user (bits).
    pub task_bits: Vec<f64>,
    /// Cycles per bit on the device.
    pub q_local: Vec<f64>,
    /// Cycles per bit on the edge server.
    pub q_edge: Vec<f64>,
    pub k_dev: Vec<f64>,
    pub k_edge: f64,
    pub w1: f64,
    pub w2: f64,
    /// Total edge frequency budget (Hz).
    pub f_edge_total: f64,
    pub f_local_max: Vec<f64>,
    pub f_edge_max: Vec<f64>,
}

impl OffloadingInstance {
    pub fn users(&self) -> usize {
        self.task_bits.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.users();
        if n == 0 {
            return Err(Error::InvalidInput("instance has no users".into()));
        }
        let vectors = [
            ("q_local", &self.q_local),
            ("q_edge", &self.q_edge),
            ("k_dev", &self.k_dev),
            ("f_local_max", &self.f_local_max),
            ("f_edge_max", &self.f_edge_max),
        ];
        for (name, v) in vectors {
            if v.len() != n {
                return Err(Error::InvalidInput(format!(
                    "{name} has {} entries for {n} users",
                    v.len()
                )));
            }
        }
        let all_positive = vectors
            .iter()
            .flat_map(|(_, v)| v.iter())
            .chain(&self.task_bits)
            .chain([&self.k_edge, &self.w1, &self.w2, &self.f_edge_total])
            .all(|v| *v > 0.0 && v.is_finite());
        if !all_positive {
            return Err(Error::InvalidInput("all instance parameters must be positive".into()));
        }
        if self.f_edge_max.iter().any(|f| *f > self.f_edge_total) {
            return Err(Error::InvalidInput("per-user edge cap exceeds the edge budget".into()));
        }
        let floor_sum: f64 = (0..n).map(|i| self.f_edge_floor(i)).sum();
        if floor_sum > self.f_edge_total {
            return Err(Error::InvalidInput(
                "edge budget is below the sum of frequency floors".into(),
            ));
        }
        Ok(())
    }

    pub fn f_local_floor(&self, n: usize) -> f64 {
        FREQ_FLOOR_REL * self.f_local_max[n]
    }

    pub fn f_edge_floor(&self, n: usize) -> f64 {
        FREQ_FLOOR_REL * self.f_edge_max[n]
    }

    fn local_scale(&self, n: usize) -> f64 {
        self.task_bits[n] * self.q_local[n]
    }

    fn edge_scale(&self, n: usize) -> f64 {
        self.task_bits[n] * self.q_edge[n]
    }

    pub fn h_local(&self, n: usize, f: f64) -> f64 {
        self.local_scale(n) * (self.w1 / f + self.w2 * self.k_dev[n] * f * f)
    }

    pub fn h_edge(&self, n: usize, f: f64) -> f64 {
        self.edge_scale(n) * (self.w1 / f + self.w2 * self.k_edge * f * f)
    }

    fn dh_local(&self, n: usize, f: f64) -> f64 {
        self.local_scale(n) * (-self.w1 / (f * f) + 2.0 * self.w2 * self.k_dev[n] * f)
    }

    fn dh_edge(&self, n: usize, f: f64) -> f64 {
        self.edge_scale(n) * (-self.w1 / (f * f) + 2.0 * self.w2 * self.k_edge * f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadingVars {
    pub x: Vec<f64>,
    pub f_local: Vec<f64>,
    pub f_edge: Vec<f64>,
}

impl OffloadingVars {
    /// Every user at ratio `x` with both frequencies at half their caps, scaled into the budget.
    pub fn uniform(inst: &OffloadingInstance, x: f64) -> Self {
        let n = inst.users();
        let half: Vec<f64> = inst.f_edge_max.iter().map(|f| 0.5 * f).collect();
        let total: f64 = half.iter().sum();
        let scale = (inst.f_edge_total / total).min(1.0);
        Self {
            x: vec![x; n],
            f_local: inst.f_local_max.iter().map(|f| 0.5 * f).collect(),
            f_edge: half.iter().map(|f| f * scale).collect(),
        }
    }

    /// Largest violation of the box and budget constraints; the budget part is relative.
    pub fn violation(&self, inst: &OffloadingInstance) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..inst.users() {
            worst = worst.max(-self.x[i]).max(self.x[i] - 1.0);
            worst = worst.max(-self.f_local[i]).max(self.f_local[i] - inst.f_local_max[i]);
            worst = worst.max(-self.f_edge[i]).max(self.f_edge[i] - inst.f_edge_max[i]);
        }
        let used: f64 = self.f_edge.iter().sum();
        worst.max((used - inst.f_edge_total) / inst.f_edge_total)
    }
}

fn check_dims(inst: &OffloadingInstance, vars: &OffloadingVars) -> Result<()> {
    let n = inst.users();
    if vars.x.len() != n || vars.f_local.len() != n || vars.f_edge.len() != n {
        return Err(Error::InvalidInput(
            "variable dimensions do not match the instance".into(),
        ));
    }
    Ok(())
}

/// `(H1(f_local), H2(f_edge))` for user `n`.
pub fn cost_kernels(inst: &OffloadingInstance, n: usize, f_local: f64, f_edge: f64) -> Result<(f64, f64)> {
    if !(f_local > 0.0 && f_edge > 0.0) {
        return Err(domain(format!(
            "kernels need positive frequencies (local {f_local}, edge {f_edge})"
        )));
    }
    Ok((inst.h_local(n, f_local), inst.h_edge(n, f_edge)))
}

/// `sum_n (1 - x_n) H1 + x_n H2`.
pub fn offload_objective(inst: &OffloadingInstance, vars: &OffloadingVars) -> Result<f64> {
    check_dims(inst, vars)?;
    let mut total = 0.0;
    for n in 0..inst.users() {
        let (h1, h2) = cost_kernels(inst, n, vars.f_local[n], vars.f_edge[n])?;
        total += (1.0 - vars.x[n]) * h1 + vars.x[n] * h2;
    }
    Ok(total)
}

/// Auxiliaries of the two products per user, each with its own adaptive constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffloadAux {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub c_local: Vec<f64>,
    pub c_edge: Vec<f64>,
}

impl OffloadAux {
    pub fn validate(&self) -> Result<()> {
        for n in 0..self.u.len() {
            let ok = self.u[n] >= 0.0
                && self.v[n] >= 0.0
                && self.c_local[n] >= 0.0
                && self.c_edge[n] >= 0.0
                && self.u[n] + self.c_local[n] > 0.0
                && self.v[n] + self.c_edge[n] > 0.0;
            if !ok {
                return Err(domain(format!("auxiliaries of user {n} leave a zero denominator")));
            }
        }
        Ok(())
    }

    pub fn constant_branch_count(&self) -> usize {
        self.c_local.iter().chain(&self.c_edge).filter(|c| **c > 0.0).count()
    }

    /// Whether some pair uses the constant branch here but not in `prev`.
    pub fn enters_constant_branch(&self, prev: &OffloadAux) -> bool {
        let now = self.c_local.iter().chain(&self.c_edge);
        let before = prev.c_local.iter().chain(&prev.c_edge);
        now.zip(before).any(|(c, p)| *c > 0.0 && *p == 0.0)
    }
}

/// Closed-form auxiliary update; a vanished share puts only its own product on the `c1` branch.
pub fn offload_aux_update(inst: &OffloadingInstance, vars: &OffloadingVars, c1: f64) -> Result<OffloadAux> {
    check_dims(inst, vars)?;
    let n = inst.users();
    let mut aux = OffloadAux {
        u: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        c_local: Vec::with_capacity(n),
        c_edge: Vec::with_capacity(n),
    };
    for i in 0..n {
        let (h1, h2) = cost_kernels(inst, i, vars.f_local[i], vars.f_edge[i])?;
        let local_share = 1.0 - vars.x[i];
        let local_share = if is_zero_factor(local_share, h1) {
            0.0
        } else {
            local_share
        };
        let (u, cl) = mp_aux_value(h1, local_share, c1)?;
        let (v, ce) = mp_aux_value(h2, vars.x[i], c1)?;
        aux.u.push(u);
        aux.c_local.push(cl);
        aux.v.push(v);
        aux.c_edge.push(ce);
    }
    Ok(aux)
}

/// Transformed objective `sum_n g_n` at fixed auxiliaries.
pub fn surrogate_gn(inst: &OffloadingInstance, vars: &OffloadingVars, aux: &OffloadAux) -> Result<f64> {
    check_dims(inst, vars)?;
    let mut total = 0.0;
    for n in 0..inst.users() {
        let (h1, h2) = cost_kernels(inst, n, vars.f_local[n], vars.f_edge[n])?;
        total += mp_surrogate_value(h1, 1.0 - vars.x[n], aux.u[n], aux.c_local[n])?;
        total += mp_surrogate_value(h2, vars.x[n], aux.v[n], aux.c_edge[n])?;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktMultipliers {
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub zeta: Vec<f64>,
    pub eta: Vec<f64>,
    pub theta: Vec<f64>,
    pub delta: f64,
}

/// `dg/dx`: affine in `x`.
fn d_x(x: f64, sl: f64, se: f64) -> f64 {
    (x - 1.0) / (2.0 * sl) + x / (2.0 * se)
}

/// `dg/df_local`.
fn q_local(inst: &OffloadingInstance, n: usize, f: f64, sl: f64) -> f64 {
    2.0 * inst.h_local(n, f) * inst.dh_local(n, f) * sl
}

/// `dg/df_edge + delta`.
fn r_edge(inst: &OffloadingInstance, n: usize, f: f64, se: f64, delta: f64) -> f64 {
    2.0 * inst.h_edge(n, f) * inst.dh_edge(n, f) * se + delta
}

/// Edge frequency solving `R(f, delta) = 0`, clamped into `[floor, cap]`.
fn edge_freq_at(inst: &OffloadingInstance, n: usize, se: f64, delta: f64, f_stat: f64) -> Result<f64> {
    let lo = inst.f_edge_floor(n);
    let hi = inst.f_edge_max[n];
    if delta == 0.0 {
        return Ok(f_stat.clamp(lo, hi));
    }
    if f_stat <= lo || r_edge(inst, n, lo, se, delta) >= 0.0 {
        return Ok(lo);
    }
    let root = bisect(
        |f| r_edge(inst, n, f, se, delta),
        lo,
        f_stat,
        BisectTol {
            x: 1e-14 * f_stat,
            f: 0.0,
        },
    )?;
    Ok(root.clamp(lo, hi))
}

/// Closed-form minimiser of the transformed subproblem with its multipliers.
pub fn kkt_inner_solve(inst: &OffloadingInstance, aux: &OffloadAux) -> Result<(OffloadingVars, KktMultipliers)> {
    aux.validate()?;
    let n = inst.users();
    let sl: Vec<f64> = (0..n).map(|i| aux.u[i] + aux.c_local[i]).collect();
    let se: Vec<f64> = (0..n).map(|i| aux.v[i] + aux.c_edge[i]).collect();

    // near 1 the complement form rounds to the nearest double
    let x: Vec<f64> = (0..n)
        .map(|i| {
            let x = if sl[i] < se[i] {
                1.0 - sl[i] / (sl[i] + se[i])
            } else {
                se[i] / (sl[i] + se[i])
            };
            x.clamp(0.0, 1.0)
        })
        .collect();
    let mut f_local = Vec::with_capacity(n);
    let mut f_stat_edge = Vec::with_capacity(n);
    for i in 0..n {
        let fl = kernel_stationary_freq(inst.w1, inst.w2, inst.k_dev[i])?;
        f_local.push(fl.clamp(inst.f_local_floor(i), inst.f_local_max[i]));
        f_stat_edge.push(kernel_stationary_freq(inst.w1, inst.w2, inst.k_edge)?);
    }
    let per_user = |delta: f64| -> Vec<f64> {
        (0..n)
            .map(|i| edge_freq_at(inst, i, se[i], delta, f_stat_edge[i]).unwrap_or(f64::NAN))
            .collect()
    };
    let tol = 1e-10 * inst.f_edge_total;
    let (delta, f_edge) = dual_bisection_coupled(per_user, inst.f_edge_total, tol)?;
    if f_edge.iter().any(|f| f.is_nan()) {
        return Err(Error::BisectionFailure("edge frequency root failed".into()));
    }

    let mut m = KktMultipliers {
        beta: Vec::with_capacity(n),
        gamma: Vec::with_capacity(n),
        epsilon: Vec::with_capacity(n),
        zeta: Vec::with_capacity(n),
        eta: Vec::with_capacity(n),
        theta: Vec::with_capacity(n),
        delta,
    };
    for i in 0..n {
        m.beta.push(d_x(0.0, sl[i], se[i]).max(0.0));
        m.gamma.push(-d_x(1.0, sl[i], se[i]).min(0.0));
        m.epsilon.push(q_local(inst, i, inst.f_local_floor(i), sl[i]).max(0.0));
        m.zeta.push(-q_local(inst, i, inst.f_local_max[i], sl[i]).min(0.0));
        m.eta.push(r_edge(inst, i, inst.f_edge_floor(i), se[i], delta).max(0.0));
        m.theta
            .push(-r_edge(inst, i, inst.f_edge_max[i], se[i], delta).min(0.0));
    }
    Ok((OffloadingVars { x, f_local, f_edge }, m))
}

/// `|dL/dx|`, or zero when the stationary point lies between `x` and an adjacent double.
///
/// The curvature in `x` is `1/(2 sl) + 1/(2 se)`, so near a vanished side one ulp of `x`
/// can move the derivative by more than any fixed tolerance.
fn x_stationarity(x: f64, sl: f64, se: f64, beta: f64, gamma: f64) -> f64 {
    let r = |t: f64| d_x(t, sl, se) - beta + gamma;
    if r(x.next_down()) <= 0.0 && r(x.next_up()) >= 0.0 {
        0.0
    } else {
        r(x).abs()
    }
}

/// Residuals of the KKT system of the transformed subproblem.
///
/// Frequency stationarity is measured as `|dL/df| * f`, which carries the units
/// of the cost. Primal feasibility of the budget is relative to the budget.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    pub stationarity: f64,
    pub complementarity: f64,
    /// Most negative multiplier, reported as a non-negative magnitude.
    pub dual_infeasibility: f64,
    pub primal_infeasibility: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.complementarity)
            .max(self.dual_infeasibility)
            .max(self.primal_infeasibility)
    }

    pub fn worst(self, other: KktReport) -> KktReport {
        KktReport {
            stationarity: self.stationarity.max(other.stationarity),
            complementarity: self.complementarity.max(other.complementarity),
            dual_infeasibility: self.dual_infeasibility.max(other.dual_infeasibility),
            primal_infeasibility: self.primal_infeasibility.max(other.primal_infeasibility),
        }
    }
}

pub fn kkt_report(inst: &OffloadingInstance, aux: &OffloadAux, vars: &OffloadingVars, m: &KktMultipliers) -> KktReport {
    let mut r = KktReport::default();
    let mut dual_min: f64 = m.delta;
    for i in 0..inst.users() {
        let sl = aux.u[i] + aux.c_local[i];
        let se = aux.v[i] + aux.c_edge[i];
        let (x, fl, fe) = (vars.x[i], vars.f_local[i], vars.f_edge[i]);
        let (fl_lo, fl_hi) = (inst.f_local_floor(i), inst.f_local_max[i]);
        let (fe_lo, fe_hi) = (inst.f_edge_floor(i), inst.f_edge_max[i]);

        let sx = x_stationarity(x, sl, se, m.beta[i], m.gamma[i]);
        let sfl = (q_local(inst, i, fl, sl) - m.epsilon[i] + m.zeta[i]).abs() * fl;
        let sfe = (r_edge(inst, i, fe, se, m.delta) - m.eta[i] + m.theta[i]).abs() * fe;
        r.stationarity = r.stationarity.max(sx).max(sfl).max(sfe);

        let slack = [
            m.beta[i] * x,
            m.gamma[i] * (1.0 - x),
            m.epsilon[i] * (fl - fl_lo),
            m.zeta[i] * (fl_hi - fl),
            m.eta[i] * (fe - fe_lo),
            m.theta[i] * (fe_hi - fe),
        ];
        r.complementarity = slack.iter().fold(r.complementarity, |a, s| a.max(s.abs()));

        for v in [m.beta[i], m.gamma[i], m.epsilon[i], m.zeta[i], m.eta[i], m.theta[i]] {
            dual_min = dual_min.min(v);
        }
        let boxes = [-x, x - 1.0, fl_lo - fl, fl - fl_hi, fe_lo - fe, fe - fe_hi];
        r.primal_infeasibility = boxes.iter().fold(r.primal_infeasibility, |a, b| a.max(*b));
    }
    let used: f64 = vars.f_edge.iter().sum();
    r.complementarity = r.complementarity.max((m.delta * (used - inst.f_edge_total)).abs());
    r.primal_infeasibility = r
        .primal_infeasibility
        .max((used - inst.f_edge_total) / inst.f_edge_total);
    r.dual_infeasibility = (-dual_min).max(0.0);
    r
}

#[derive(Debug, Clone)]
pub struct OffloadOutcome {
    pub vars: OffloadingVars,
    pub trace: ConvergenceTrace,
    pub status: SolveStatus,
    /// Aux updates, summed over products, that used the adaptive-constant branch.
    pub constant_branch_hits: usize,
    /// Componentwise worst KKT residuals over all inner solves.
    pub worst_kkt: KktReport,
    /// Trace indices whose aux update moved a pair into the constant branch. The
    /// surrogate may rise at these records and at no others.
    pub branch_entries: Vec<usize>,
}

/// Alternates the auxiliary update and the closed-form inner solve.
///
/// Stops once the best original objective improves by at most `eps_rel`
/// relative, and returns the best iterate seen.
pub fn solve_offloading(
    inst: &OffloadingInstance,
    stopping: &StoppingRule,
    c1: f64,
    x0: &OffloadingVars,
) -> Result<OffloadOutcome> {
    inst.validate()?;
    stopping.validate()?;
    check_dims(inst, x0)?;
    let viol = x0.violation(inst);
    if viol > 1e-12 || x0.f_local.iter().chain(&x0.f_edge).any(|f| !(*f > 0.0)) {
        return Err(Error::InfeasibleStart(format!(
            "offloading start violates constraints by {viol:e} or has a zero frequency"
        )));
    }

    let mut vars = x0.clone();
    let mut aux = offload_aux_update(inst, &vars, c1)?;
    let mut hits = aux.constant_branch_count();
    let mut trace = ConvergenceTrace::new();
    let mut best_obj = offload_objective(inst, &vars)?;
    trace.push(surrogate_gn(inst, &vars, &aux)?, best_obj, None);
    let mut best = vars.clone();
    let mut worst_kkt = KktReport::default();
    let mut status = SolveStatus::MaxItersExceeded;
    let mut branch_entries = Vec::new();

    for _ in 0..stopping.max_iters {
        let (next, mults) = kkt_inner_solve(inst, &aux)?;
        let report = kkt_report(inst, &aux, &next, &mults);
        worst_kkt = worst_kkt.worst(report);
        vars = next;
        let fresh = offload_aux_update(inst, &vars, c1)?;
        if fresh.enters_constant_branch(&aux) {
            branch_entries.push(trace.len());
        }
        aux = fresh;
        hits += aux.constant_branch_count();
        let obj = offload_objective(inst, &vars)?;
        trace.push(surrogate_gn(inst, &vars, &aux)?, obj, Some(report.max_residual()));
        let prev_best = best_obj;
        if obj < best_obj {
            best_obj = obj;
            best = vars.clone();
        }
        if stopping.settled(prev_best, best_obj) {
            status = SolveStatus::Converged;
            break;
        }
    }
    Ok(OffloadOutcome {
        vars: best,
        trace,
        status,
        constant_branch_hits: hits,
        worst_kkt,
        branch_entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_instance() -> OffloadingInstance {
        OffloadingInstance {
            task_bits: vec![1.0],
            q_local: vec![1.0],
            q_edge: vec![1.0],
            k_dev: vec![1.0],
            k_edge: 1.0,
            w1: 1.0,
            w2: 1.0,
            f_edge_total: 10.0,
            f_local_max: vec![10.0],
            f_edge_max: vec![10.0],
        }
    }

    pub(crate) fn paper_like(users: usize) -> OffloadingInstance {
        OffloadingInstance {
            task_bits: (0..users).map(|i| 1e5 * (1.0 + (i % 7) as f64)).collect(),
            q_local: vec![1000.0; users],
            q_edge: vec![1000.0; users],
            k_dev: vec![1e-26; users],
            k_edge: 1e-26,
            w1: 0.5,
            w2: 0.5,
            f_edge_total: 10e9,
            f_local_max: vec![1.5e9; users],
            f_edge_max: vec![10e9; users],
        }
    }

    #[test]
    fn kernel_examples() {
        let inst = unit_instance();
        assert_eq!(cost_kernels(&inst, 0, 1.0, 1.0).unwrap(), (2.0, 2.0));
        let mut doubled = inst.clone();
        doubled.task_bits[0] = 2.0;
        let (h1, h2) = cost_kernels(&doubled, 0, 1.3, 0.7).unwrap();
        let (g1, g2) = cost_kernels(&inst, 0, 1.3, 0.7).unwrap();
        assert_eq!((h1, h2), (2.0 * g1, 2.0 * g2));
        assert!(cost_kernels(&inst, 0, 0.0, 1.0).is_err());
    }

    #[test]
    fn stationary_freq_minimises_kernel() {
        let inst = unit_instance();
        let f_star = kernel_stationary_freq(1.0, 1.0, 1.0).unwrap();
        let best = (1..=20000)
            .map(|k| k as f64 * 1e-4)
            .min_by(|a, b| inst.h_local(0, *a).total_cmp(&inst.h_local(0, *b)))
            .unwrap();
        assert!((best - f_star).abs() <= 1e-4);
    }

    #[test]
    fn objective_boundaries() {
        let inst = paper_like(3);
        let mut vars = OffloadingVars::uniform(&inst, 0.0);
        let local: f64 = (0..3).map(|n| inst.h_local(n, vars.f_local[n])).sum();
        assert!((offload_objective(&inst, &vars).unwrap() - local).abs() <= 1e-12 * local);
        vars.x = vec![1.0; 3];
        let edge: f64 = (0..3).map(|n| inst.h_edge(n, vars.f_edge[n])).sum();
        assert!((offload_objective(&inst, &vars).unwrap() - edge).abs() <= 1e-12 * edge);

        let sym = unit_instance();
        let v = OffloadingVars {
            x: vec![0.5],
            f_local: vec![1.0],
            f_edge: vec![1.0],
        };
        assert_eq!(offload_objective(&sym, &v).unwrap(), 2.0);
    }

    #[test]
    fn aux_examples() {
        // negligible energy weight: H1 = H2 = 1 at f = 1
        let mut inst = unit_instance();
        inst.w2 = 1e-300;
        let v = OffloadingVars {
            x: vec![0.5],
            f_local: vec![1.0],
            f_edge: vec![1.0],
        };
        let aux = offload_aux_update(&inst, &v, 1e-3).unwrap();
        assert!((aux.u[0] - 0.25).abs() < 1e-12 && (aux.v[0] - 0.25).abs() < 1e-12);
        assert_eq!((aux.c_local[0], aux.c_edge[0]), (0.0, 0.0));

        let v1 = OffloadingVars {
            x: vec![1.0],
            ..v.clone()
        };
        let aux = offload_aux_update(&inst, &v1, 1e-3).unwrap();
        assert_eq!((aux.u[0], aux.c_local[0], aux.c_edge[0]), (0.0, 1e-3, 0.0));
        let v0 = OffloadingVars { x: vec![0.0], ..v };
        let aux = offload_aux_update(&inst, &v0, 1e-3).unwrap();
        assert_eq!((aux.v[0], aux.c_edge[0], aux.c_local[0]), (0.0, 1e-3, 0.0));
    }

    #[test]
    fn surrogate_tight_inside_and_loose_on_boundary() {
        let inst = paper_like(2);
        let mut vars = OffloadingVars::uniform(&inst, 0.3);
        let aux = offload_aux_update(&inst, &vars, 1e-3).unwrap();
        let obj = offload_objective(&inst, &vars).unwrap();
        assert!((surrogate_gn(&inst, &vars, &aux).unwrap() - obj).abs() <= 1e-10 * obj);

        vars.x = vec![1.0, 1.0];
        let aux = offload_aux_update(&inst, &vars, 1e-3).unwrap();
        let obj = offload_objective(&inst, &vars).unwrap();
        let extra: f64 = (0..2).map(|n| inst.h_local(n, vars.f_local[n]).powi(2) * 1e-3).sum();
        let g = surrogate_gn(&inst, &vars, &aux).unwrap();
        assert!(g > obj);
        assert!((g - obj - extra).abs() <= 1e-10 * g);
    }

    #[test]
    fn inner_solve_examples() {
        let inst = paper_like(1);
        let sym = OffloadAux {
            u: vec![0.5],
            v: vec![0.5],
            c_local: vec![0.0],
            c_edge: vec![0.0],
        };
        let (vars, _) = kkt_inner_solve(&inst, &sym).unwrap();
        assert!((vars.x[0] - 0.5).abs() < 1e-15);
        let skew = OffloadAux {
            u: vec![0.25],
            v: vec![0.75],
            c_local: vec![0.0],
            c_edge: vec![0.0],
        };
        let (vars, m) = kkt_inner_solve(&inst, &skew).unwrap();
        assert!((vars.x[0] - 0.75).abs() < 1e-15);
        // one user far below the budget
        assert_eq!(m.delta, 0.0);
    }

    #[test]
    fn binding_budget_meets_kkt() {
        let inst = paper_like(30);
        let vars = OffloadingVars::uniform(&inst, 0.5);
        let aux = offload_aux_update(&inst, &vars, 1e-3).unwrap();
        let (sol, m) = kkt_inner_solve(&inst, &aux).unwrap();
        assert!(m.delta > 0.0);
        let r = kkt_report(&inst, &aux, &sol, &m);
        assert!(r.max_residual() <= 1e-6, "{r:?}");
        let used: f64 = sol.f_edge.iter().sum();
        assert!((used - inst.f_edge_total).abs() <= 1e-8 * inst.f_edge_total);
    }

    #[test]
    fn edge_root_matches_grid_sign_change() {
        let inst = paper_like(1);
        let se = 0.4;
        let delta = 1e-12;
        let f_stat = kernel_stationary_freq(inst.w1, inst.w2, inst.k_edge).unwrap();
        let root = edge_freq_at(&inst, 0, se, delta, f_stat).unwrap();
        let steps = 100_000;
        let lo = inst.f_edge_floor(0);
        let h = (f_stat - lo) / steps as f64;
        let crossing = (0..steps)
            .map(|k| lo + k as f64 * h)
            .find(|f| r_edge(&inst, 0, *f, se, delta) >= 0.0)
            .unwrap();
        assert!((crossing - root).abs() <= h, "{crossing} vs {root}");
    }

    #[test]
    fn solve_descends_and_converges() {
        let inst = paper_like(30);
        let out = solve_offloading(
            &inst,
            &StoppingRule::default(),
            1e-3,
            &OffloadingVars::uniform(&inst, 0.5),
        )
        .unwrap();
        assert!(out.status.converged());
        assert!(out.trace.is_surrogate_nonincreasing(1e-9));
        assert!(out.worst_kkt.max_residual() <= 1e-6, "{:?}", out.worst_kkt);
        assert!(out.vars.violation(&inst) <= 1e-8);
    }

    #[test]
    fn full_offload_when_edge_dominates() {
        let mut inst = paper_like(1);
        inst.k_dev = vec![1e-24];
        inst.q_local = vec![3000.0];
        let out = solve_offloading(
            &inst,
            &StoppingRule::new(1e-12, 5000).unwrap(),
            1e-3,
            &OffloadingVars::uniform(&inst, 0.5),
        )
        .unwrap();
        assert!(out.vars.x[0] > 1.0 - 1e-6, "{:?}", out.vars.x);
    }

    #[test]
    fn x_stationarity_allows_rounding_only() {
        let (sl, se) = (1.5e-12, 1.6);
        let x = se / (sl + se);
        assert_eq!(x_stationarity(x, sl, se, 0.0, 0.0), 0.0);
        let off = x.next_down().next_down().next_down();
        assert!(x_stationarity(off, sl, se, 0.0, 0.0) > 1e-6);
        assert!((x_stationarity(0.5, 1.0, 1.0, 0.0, 0.0)).abs() < 1e-15);
        assert_eq!(x_stationarity(0.25, 1.0, 1.0, 0.0, 0.0), 0.25);
    }

    #[test]
    fn boundary_starts_exercise_constant_branch() {
        let inst = paper_like(4);
        for x0 in [0.0, 1.0] {
            let out = solve_offloading(
                &inst,
                &StoppingRule::default(),
                1e-3,
                &OffloadingVars::uniform(&inst, x0),
            )
            .unwrap();
            assert!(out.constant_branch_hits > 0);
            assert!(out.trace.records.iter().all(|r| r.objective_original.is_finite()));
        }
    }

    proptest! {
        #[test]
        fn surrogate_convex_per_coordinate(x in 0.05f64..0.95, fl in 1e8f64..1.4e9, fe in 1e8f64..9e9) {
            let inst = paper_like(1);
            let aux = offload_aux_update(&inst, &OffloadingVars { x: vec![0.4], f_local: vec![5e8], f_edge: vec![5e8] }, 1e-3).unwrap();
            let g = |x: f64, fl: f64, fe: f64| surrogate_gn(&inst, &OffloadingVars { x: vec![x], f_local: vec![fl], f_edge: vec![fe] }, &aux).unwrap();
            let base = g(x, fl, fe);
            for (hx, hl, he) in [(1e-3, 0.0, 0.0), (0.0, 1e-3 * fl, 0.0), (0.0, 0.0, 1e-3 * fe)] {
                let d2 = g(x + hx, fl + hl, fe + he) - 2.0 * base + g(x - hx, fl - hl, fe - he);
                prop_assert!(d2 >= -1e-8 * base.max(1.0) * 1e-6);
            }
        }
    }
}
