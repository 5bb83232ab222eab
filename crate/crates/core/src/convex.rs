//! Convex building blocks for the inner subproblems.
//!
//! Everything here is stateless: monotone bisection, the closed-form stationary
//! point of the `w1/f + w2*k*f^2` cost kernel, Euclidean projections onto boxes,
//! probability simplices and a single weighted budget, a projected-gradient
//! solver with Armijo backtracking (Barzilai-Borwein trial steps), and a dual
//! bisection for one coupling budget shared by separable components.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::trace::SolveStatus;

/// A differentiable scalar function of a real vector.
pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;

    /// Writes the gradient into `grad` and returns the value.
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Adapts a value closure and a gradient closure into an [`Objective`].
pub struct FnObjective<F, G> {
    pub value: F,
    pub grad: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.grad)(x, grad);
        (self.value)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lo).min(self.hi)
    }
}

/// Linear budget `sum_i weight[i] * x[i] <= budget`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub weight: Vec<f64>,
    pub budget: f64,
}

/// Feasible region handled by [`pgd_minimize`].
///
/// Coordinates listed in a simplex row are projected jointly onto
/// `{u >= floor, sum u = 1}` with the shared `simplex_floor` (zero by default);
/// the box entries of those coordinates are ignored.
/// The coupling budget may only touch coordinates outside simplex rows. The
/// optional smooth inequality `g(x) <= 0` is enforced by an augmented
/// Lagrangian penalty rather than by projection.
#[derive(Clone, Default)]
pub struct FeasibleSet {
    pub boxes: Vec<Bounds>,
    pub simplex_rows: Vec<Vec<usize>>,
    pub simplex_floor: f64,
    pub coupling: Option<Coupling>,
    pub extra_ineq: Option<Arc<dyn Objective + Send + Sync>>,
}

impl fmt::Debug for FeasibleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FeasibleSet")
            .field("boxes", &self.boxes)
            .field("simplex_rows", &self.simplex_rows)
            .field("simplex_floor", &self.simplex_floor)
            .field("coupling", &self.coupling)
            .field("extra_ineq", &self.extra_ineq.is_some())
            .finish()
    }
}

impl FeasibleSet {
    pub fn from_boxes(boxes: Vec<Bounds>) -> Self {
        Self {
            boxes,
            ..Self::default()
        }
    }

    pub fn with_simplex_row(mut self, row: Vec<usize>) -> Self {
        self.simplex_rows.push(row);
        self
    }

    pub fn with_simplex_floor(mut self, floor: f64) -> Self {
        self.simplex_floor = floor;
        self
    }

    pub fn with_coupling(mut self, weight: Vec<f64>, budget: f64) -> Self {
        self.coupling = Some(Coupling { weight, budget });
        self
    }

    pub fn with_extra_ineq(mut self, g: Arc<dyn Objective + Send + Sync>) -> Self {
        self.extra_ineq = Some(g);
        self
    }

    pub fn dim(&self) -> usize {
        self.boxes.len()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, b) in self.boxes.iter().enumerate() {
            if !(b.lo <= b.hi) {
                return Err(Error::InvalidInput(format!("box {i} has lo {} > hi {}", b.lo, b.hi)));
            }
        }
        let mut seen = vec![false; self.dim()];
        for row in &self.simplex_rows {
            if row.is_empty() {
                return Err(Error::InvalidInput("empty simplex row".into()));
            }
            if !(self.simplex_floor >= 0.0 && self.simplex_floor * (row.len() as f64) < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "simplex floor {} leaves no room in a row of {}",
                    self.simplex_floor,
                    row.len()
                )));
            }
            for &i in row {
                if i >= self.dim() || seen[i] {
                    return Err(Error::InvalidInput(format!(
                        "simplex index {i} out of range or shared between rows"
                    )));
                }
                seen[i] = true;
            }
        }
        if let Some(c) = &self.coupling {
            if c.weight.len() != self.dim() {
                return Err(Error::InvalidInput("coupling weight length mismatch".into()));
            }
            if !(c.budget > 0.0) {
                return Err(Error::InvalidInput("coupling budget must be positive".into()));
            }
            if c.weight.iter().zip(&seen).any(|(w, s)| *s && *w != 0.0) {
                return Err(Error::InvalidInput(
                    "coupling weights may not touch simplex coordinates".into(),
                ));
            }
        }
        Ok(())
    }

    /// Euclidean projection onto boxes, simplex rows and the coupling budget.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut out = project_box(v, &self.boxes);
        let floor = self.simplex_floor;
        for row in &self.simplex_rows {
            if row_is_feasible(row.iter().map(|&i| v[i]), floor) {
                for &i in row {
                    out[i] = v[i];
                }
                continue;
            }
            // the floored simplex is a shifted and scaled copy of the plain one
            let scale = 1.0 - floor * row.len() as f64;
            let sub: Vec<f64> = row.iter().map(|&i| (v[i] - floor) / scale).collect();
            let mut vals: Vec<f64> = project_simplex_row(&sub).iter().map(|u| floor + scale * u).collect();
            settle_sum(&mut vals, floor);
            for (&i, x) in row.iter().zip(vals) {
                out[i] = x;
            }
        }
        if let Some(c) = &self.coupling {
            let used: f64 = c.weight.iter().zip(&out).map(|(w, x)| w * x).sum();
            if used > c.budget {
                project_box_halfspace(v, &self.boxes, c, &mut out)?;
            }
        }
        Ok(out)
    }

    /// Largest violation of boxes, simplex rows and coupling at `x`.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let mut in_row = vec![false; self.dim()];
        let mut worst: f64 = 0.0;
        for row in &self.simplex_rows {
            let mut s = 0.0;
            for &i in row {
                in_row[i] = true;
                worst = worst.max(self.simplex_floor - x[i]);
                s += x[i];
            }
            worst = worst.max((s - 1.0).abs());
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if !in_row[i] {
                worst = worst.max(b.lo - x[i]).max(x[i] - b.hi);
            }
        }
        if let Some(c) = &self.coupling {
            let used: f64 = c.weight.iter().zip(x).map(|(w, xi)| w * xi).sum();
            worst = worst.max(used - c.budget);
        }
        worst
    }
}

/// Coordinate-wise clamp of `v` into `boxes`.
pub fn project_box(v: &[f64], boxes: &[Bounds]) -> Vec<f64> {
    v.iter().zip(boxes).map(|(x, b)| b.clamp(*x)).collect()
}

/// Euclidean projection onto the probability simplex `{u >= 0, sum u = 1}`.
pub fn project_simplex_row(v: &[f64]) -> Vec<f64> {
    if row_is_feasible(v.iter().copied(), 0.0) {
        return v.to_vec();
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    let mut out: Vec<f64> = v.iter().map(|&x| (x - theta).max(0.0)).collect();
    settle_sum(&mut out, 0.0);
    out
}

/// Entries at or above `lo` whose left-to-right sum is exactly one.
fn row_is_feasible(vals: impl Iterator<Item = f64>, lo: f64) -> bool {
    let mut s = 0.0;
    for x in vals {
        if !(x >= lo) {
            return false;
        }
        s += x;
    }
    s == 1.0
}

/// Moves the rounding residue of `sum vals - 1` onto one entry, largest first, so
/// that the left-to-right sum is exactly one. Entries stay at or above `lo`.
fn settle_sum(vals: &mut [f64], lo: f64) {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    for _ in 0..4 {
        let s: f64 = vals.iter().sum();
        if s == 1.0 || !s.is_finite() || order.is_empty() {
            return;
        }
        for &k in &order {
            let old = vals[k];
            let step = if s < 1.0 { old.next_up() } else { old.next_down() };
            for cand in [old + (1.0 - s), step] {
                let cand = cand.max(lo);
                if cand == old {
                    continue;
                }
                vals[k] = cand;
                if vals.iter().sum::<f64>() == 1.0 {
                    return;
                }
            }
            vals[k] = old;
        }
        // no single move is exact; shift the largest entry and retry
        let k = order[0];
        vals[k] = (vals[k] + (1.0 - s)).max(lo);
    }
}

fn project_box_halfspace(v: &[f64], boxes: &[Bounds], c: &Coupling, out: &mut [f64]) -> Result<()> {
    let touched: Vec<usize> = (0..v.len()).filter(|&i| c.weight[i] != 0.0).collect();
    let fixed: f64 = (0..v.len())
        .filter(|&i| c.weight[i] == 0.0)
        .map(|i| c.weight[i] * out[i])
        .sum();
    let comps = |mu: f64| -> Vec<f64> {
        touched
            .iter()
            .map(|&i| c.weight[i] * boxes[i].clamp(v[i] - mu * c.weight[i]))
            .collect()
    };
    let budget = c.budget - fixed;
    let tol = 1e-12 * c.budget.abs().max(1.0);
    let (mu, _) = dual_bisection_coupled(comps, budget, tol)?;
    for &i in &touched {
        out[i] = boxes[i].clamp(v[i] - mu * c.weight[i]);
    }
    Ok(())
}

/// Tolerances for [`bisect`]: stop once the bracket is narrower than `x` or
/// `|f(mid)| <= f`.
#[derive(Debug, Clone, Copy)]
pub struct BisectTol {
    pub x: f64,
    pub f: f64,
}

/// Root of a monotone function on `[lo, hi]` with a single tolerance used both
/// for the bracket width and for `|f(r)|`.
pub fn bisect_root(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    bisect(f, lo, hi, BisectTol { x: tol, f: tol })
}

/// Monotone bisection. Evaluates `f` at most `ceil(log2((hi - lo) / tol.x)) + 2` times.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: BisectTol) -> Result<f64> {
    if !(tol.x > 0.0) || !(lo <= hi) {
        return Err(Error::InvalidInput(format!(
            "bisection needs lo <= hi and a positive tolerance (lo={lo}, hi={hi}, tol={})",
            tol.x
        )));
    }
    let f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::BisectionFailure("NaN at bracket end".into()));
    }
    if f_lo * f_hi > 0.0 {
        return Err(Error::NoSignChange { lo, hi, f_lo, f_hi });
    }
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    let rising = f_lo < 0.0;
    while hi - lo > tol.x {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm.is_nan() {
            return Err(Error::BisectionFailure(format!("NaN at {mid}")));
        }
        if fm.abs() <= tol.f {
            return Ok(mid);
        }
        if (fm < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Doubles `hi` from `start` until `f(hi)` has the opposite sign of `f(0)`.
pub fn expand_bracket(f: impl Fn(f64) -> f64, start: f64) -> Result<f64> {
    const LIMIT: f64 = 1_152_921_504_606_846_976.0; // 2^60
    let f0 = f(0.0);
    let mut hi = start;
    while hi <= LIMIT {
        if f(hi) * f0 <= 0.0 {
            return Ok(hi);
        }
        hi *= 2.0;
    }
    Err(Error::NoSignChange {
        lo: 0.0,
        hi: LIMIT,
        f_lo: f0,
        f_hi: f(LIMIT),
    })
}

/// Minimiser of `w1/f + w2*k*f^2` over `f > 0`: the root of `-w1/f^2 + 2*w2*k*f`.
pub fn kernel_stationary_freq(w1: f64, w2: f64, k: f64) -> Result<f64> {
    if !(w1 > 0.0 && w2 > 0.0 && k > 0.0) {
        return Err(domain(format!(
            "kernel parameters must be positive (w1={w1}, w2={w2}, k={k})"
        )));
    }
    Ok((w1 / (2.0 * w2 * k)).cbrt())
}

/// Finds the multiplier `delta >= 0` at which non-increasing components meet a budget.
///
/// Returns `(0, per_index(0))` when the unconstrained components already fit.
/// Otherwise the returned components sum to within `tol` below the budget.
pub fn dual_bisection_coupled(per_index: impl Fn(f64) -> Vec<f64>, budget: f64, tol: f64) -> Result<(f64, Vec<f64>)> {
    let sum = |v: &[f64]| v.iter().sum::<f64>();
    let at_zero = per_index(0.0);
    if sum(&at_zero) <= budget {
        return Ok((0.0, at_zero));
    }
    let over = |d: f64| sum(&per_index(d)) - budget;
    let mut hi = expand_bracket(over, 1.0).map_err(|_| Error::BudgetUnreachable {
        budget,
        sum: sum(&per_index(f64::MAX.sqrt())),
    })?;
    let mut lo = 0.0;
    let mut comps = per_index(hi);
    for _ in 0..2000 {
        let gap = budget - sum(&comps);
        if gap <= tol {
            return Ok((hi, comps));
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let c = per_index(mid);
        if sum(&c) > budget {
            lo = mid;
        } else {
            hi = mid;
            comps = c;
        }
    }
    let gap = budget - sum(&comps);
    if gap <= tol {
        Ok((hi, comps))
    } else {
        Err(Error::BisectionFailure(format!(
            "dual bisection stalled with budget gap {gap:e} > {tol:e}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub step0: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub penalty0: f64,
    pub penalty_growth: f64,
}

impl Default for PgdConfig {
    fn default() -> Self {
        Self {
            step0: 1.0,
            armijo_c: 1e-4,
            shrink: 0.5,
            grad_tol: 1e-8,
            max_iters: 5000,
            penalty0: 10.0,
            penalty_growth: 10.0,
        }
    }
}

impl PgdConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.step0 > 0.0
            && self.armijo_c > 0.0
            && self.armijo_c < 1.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.grad_tol > 0.0
            && self.max_iters >= 1
            && self.penalty0 > 0.0
            && self.penalty_growth > 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid PGD config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PgdResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iters: usize,
    pub status: SolveStatus,
    /// `max(g(x), 0)` for the smooth inequality, 0 when there is none.
    pub ineq_violation: f64,
}

/// Allowed violation of the smooth inequality at exit.
pub const INEQ_TOL: f64 = 1e-8;
const MAX_AL_ROUNDS: usize = 60;

/// Projected gradient descent with Armijo backtracking along the projection arc.
///
/// The smooth inequality of `set`, when present, is enforced with an augmented
/// Lagrangian whose penalty grows by `penalty_growth` whenever the violation
/// fails to shrink; rounds continue until the violation is at most [`INEQ_TOL`].
/// A feasible start is never traded for a worse exit point.
pub fn pgd_minimize(objective: &dyn Objective, set: &FeasibleSet, cfg: &PgdConfig, x0: &[f64]) -> Result<PgdResult> {
    cfg.validate()?;
    set.validate()?;
    if x0.len() != set.dim() {
        return Err(Error::InvalidInput(format!(
            "start has dimension {} but the set has {}",
            x0.len(),
            set.dim()
        )));
    }
    let Some(g) = set.extra_ineq.as_deref() else {
        return projected_descent(objective, set, cfg, x0);
    };

    let start = set.project(x0)?;
    let g_start = g.value(&start);
    let f_start = objective.value(&start);

    let mut x = start.clone();
    let mut mu = 0.0;
    let mut rho = cfg.penalty0;
    let mut prev_violation = f64::INFINITY;
    let mut iters = 0;
    let mut status = SolveStatus::MaxItersExceeded;
    for round in 0..MAX_AL_ROUNDS {
        let aug = AugmentedLagrangian {
            f: objective,
            g,
            mu,
            rho,
        };
        let res = projected_descent(&aug, set, cfg, &x)?;
        iters += res.iters;
        x = res.x;
        let gv = g.value(&x);
        let violation = gv.max(0.0);
        let mu_next = (mu + rho * gv).max(0.0);
        let settled = (mu_next - mu).abs() <= 1e-9 * mu_next.max(1.0);
        mu = mu_next;
        if violation <= INEQ_TOL && (settled || round > 0 && mu == 0.0) && res.status.converged() {
            status = SolveStatus::Converged;
            break;
        }
        if violation <= INEQ_TOL && round >= 8 {
            status = res.status;
            break;
        }
        if violation > 0.25 * prev_violation {
            rho *= cfg.penalty_growth;
        }
        prev_violation = violation;
    }
    let mut violation = g.value(&x).max(0.0);
    let mut value = objective.value(&x);
    if g_start <= 0.0 && (violation > INEQ_TOL || value > f_start) {
        x = start;
        violation = 0.0;
        value = f_start;
    }
    Ok(PgdResult {
        x,
        value,
        iters,
        status,
        ineq_violation: violation,
    })
}

struct AugmentedLagrangian<'a> {
    f: &'a dyn Objective,
    g: &'a (dyn Objective + Send + Sync),
    mu: f64,
    rho: f64,
}

impl Objective for AugmentedLagrangian<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let t = (self.mu + self.rho * self.g.value(x)).max(0.0);
        self.f.value(x) + (t * t - self.mu * self.mu) / (2.0 * self.rho)
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let fv = self.f.value_grad(x, grad);
        let mut gg = vec![0.0; x.len()];
        let gv = self.g.value_grad(x, &mut gg);
        let t = (self.mu + self.rho * gv).max(0.0);
        if t > 0.0 {
            for (a, b) in grad.iter_mut().zip(&gg) {
                *a += t * b;
            }
        }
        fv + (t * t - self.mu * self.mu) / (2.0 * self.rho)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn projected_descent(objective: &dyn Objective, set: &FeasibleSet, cfg: &PgdConfig, x0: &[f64]) -> Result<PgdResult> {
    let n = x0.len();
    let mut x = set.project(x0)?;
    let mut grad = vec![0.0; n];
    let mut f = objective.value_grad(&x, &mut grad);
    if !f.is_finite() {
        return Err(Error::InfeasibleStart(format!("objective is {f} at the start")));
    }
    let mut alpha = cfg.step0;
    let mut grad_new = vec![0.0; n];
    let mut step_buf = vec![0.0; n];
    let mut flat_steps = 0;
    for k in 0..cfg.max_iters {
        for i in 0..n {
            step_buf[i] = x[i] - grad[i];
        }
        let p = set.project(&step_buf)?;
        let pg = x.iter().zip(&p).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if pg <= cfg.grad_tol {
            return Ok(PgdResult {
                x,
                value: f,
                iters: k,
                status: SolveStatus::Converged,
                ineq_violation: 0.0,
            });
        }

        let mut a = alpha;
        let accepted = loop {
            for i in 0..n {
                step_buf[i] = x[i] - a * grad[i];
            }
            let xt = set.project(&step_buf)?;
            let moved: Vec<f64> = xt.iter().zip(&x).map(|(u, v)| u - v).collect();
            if moved.iter().all(|d| *d == 0.0) {
                break None;
            }
            let ft = objective.value(&xt);
            if ft.is_finite() && ft <= f + cfg.armijo_c * dot(&grad, &moved) {
                break Some((xt, ft, moved));
            }
            a *= cfg.shrink;
            if a < 1e-40 {
                break None;
            }
        };
        let Some((xt, ft, s)) = accepted else {
            // No representable descent step remains: numerically stationary.
            return Ok(PgdResult {
                x,
                value: f,
                iters: k,
                status: SolveStatus::Converged,
                ineq_violation: 0.0,
            });
        };

        let f_new = objective.value_grad(&xt, &mut grad_new);
        let sy: f64 = s
            .iter()
            .zip(grad_new.iter().zip(&grad))
            .map(|(si, (gn, go))| si * (gn - go))
            .sum();
        let ss = dot(&s, &s);
        alpha = if sy > 0.0 {
            (ss / sy).clamp(1e-30, 1e30)
        } else {
            (a * 4.0).min(1e30)
        };

        if f - f_new <= 1e-15 * f.abs().max(1e-300) {
            flat_steps += 1;
        } else {
            flat_steps = 0;
        }
        x = xt;
        f = f_new.min(ft);
        std::mem::swap(&mut grad, &mut grad_new);
        if flat_steps >= 25 {
            return Ok(PgdResult {
                x,
                value: f,
                iters: k + 1,
                status: SolveStatus::Converged,
                ineq_violation: 0.0,
            });
        }
    }
    Ok(PgdResult {
        x,
        value: f,
        iters: cfg.max_iters,
        status: SolveStatus::MaxItersExceeded,
        ineq_violation: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quad(center: Vec<f64>) -> impl Objective {
        let c2 = center.clone();
        FnObjective {
            value: move |x: &[f64]| x.iter().zip(&center).map(|(a, b)| (a - b).powi(2)).sum(),
            grad: move |x: &[f64], g: &mut [f64]| {
                for i in 0..x.len() {
                    g[i] = 2.0 * (x[i] - c2[i]);
                }
            },
        }
    }

    #[test]
    fn bisect_linear_and_cubic() {
        let r = bisect_root(|x| x - 2.0, 0.0, 10.0, 1e-10).unwrap();
        assert!((r - 2.0).abs() < 1e-9);
        let r = bisect_root(|x| x * x * x - 1.0, 0.0, 2.0, 1e-12).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bisect_rejects_same_sign() {
        let err = bisect_root(|x| x * x + 1.0, -1.0, 1.0, 1e-8).unwrap_err();
        assert!(matches!(err, Error::NoSignChange { .. }));
    }

    #[test]
    fn bisect_evaluation_budget() {
        let count = std::cell::Cell::new(0usize);
        let tol = 1e-9;
        let _ = bisect(
            |x| {
                count.set(count.get() + 1);
                x - 0.3
            },
            0.0,
            1.0,
            BisectTol { x: tol, f: 0.0 },
        )
        .unwrap();
        let bound = (1.0f64 / tol).log2().ceil() as usize + 2;
        assert!(count.get() <= bound, "{} > {bound}", count.get());
    }

    #[test]
    fn stationary_freq_examples() {
        assert!((kernel_stationary_freq(2.0, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((kernel_stationary_freq(1.0, 1.0, 0.5).unwrap() - 1.0).abs() < 1e-15);
        let f = kernel_stationary_freq(1.0, 1.0, 1.0).unwrap();
        // root of -w1/f^2 + 2 w2 k f found independently
        let r = bisect_root(|f| -1.0 / (f * f) + 2.0 * f, 0.1, 2.0, 1e-14).unwrap();
        assert!((f - r).abs() < 1e-12);
        assert!((f - 0.793_700_5).abs() < 1e-7);
        assert!(kernel_stationary_freq(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn box_projection_examples() {
        let b = [Bounds::new(0.0, 1.0)];
        assert_eq!(project_box(&[1.5], &b), vec![1.0]);
        assert_eq!(project_box(&[-0.2], &b), vec![0.0]);
        assert_eq!(project_box(&[0.4], &b), vec![0.4]);
    }

    #[test]
    fn simplex_projection_examples() {
        assert_eq!(project_simplex_row(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(project_simplex_row(&[2.0, 0.0]), vec![1.0, 0.0]);
    }

    #[test]
    fn simplex_projection_matches_grid() {
        // Dense search over the segment u = (t, 1 - t).
        let cases = [[0.3, 0.9], [-1.0, 0.2], [1.7, 1.1], [0.25, -0.25]];
        let steps = 1_000_000;
        for v in cases {
            let p = project_simplex_row(&v);
            let mut best = (f64::INFINITY, 0.0);
            for k in 0..=steps {
                let t = k as f64 / steps as f64;
                let d = (t - v[0]).powi(2) + (1.0 - t - v[1]).powi(2);
                if d < best.0 {
                    best = (d, t);
                }
            }
            assert!((p[0] - best.1).abs() <= 1.0 / steps as f64, "{v:?}");
        }
    }

    #[test]
    fn pgd_box_corner() {
        let set = FeasibleSet::from_boxes(vec![Bounds::new(0.0, 1.0); 2]);
        let r = pgd_minimize(&quad(vec![2.0, 2.0]), &set, &PgdConfig::default(), &[0.0, 0.0]).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-12 && (r.x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pgd_interior_minimum() {
        let set = FeasibleSet::from_boxes(vec![Bounds::new(-1.0, 1.0)]);
        let cfg = PgdConfig::default();
        let r = pgd_minimize(&quad(vec![0.0]), &set, &cfg, &[0.7]).unwrap();
        assert!(r.x[0].abs() <= cfg.grad_tol);
    }

    #[test]
    fn pgd_diagonal_quadratic_matches_clamped_minimiser() {
        // sum_i a_i (x_i - c_i)^2 over a box: the minimiser is the clamped centre.
        let a = vec![0.5, 3.0, 10.0, 1.0];
        let c = vec![-2.0, 0.3, 4.0, 0.9];
        let boxes = vec![Bounds::new(-1.0, 1.0); 4];
        let (a2, c2) = (a.clone(), c.clone());
        let obj = FnObjective {
            value: move |x: &[f64]| (0..4).map(|i| a[i] * (x[i] - c[i]).powi(2)).sum(),
            grad: move |x: &[f64], g: &mut [f64]| {
                for i in 0..4 {
                    g[i] = 2.0 * a2[i] * (x[i] - c2[i]);
                }
            },
        };
        let set = FeasibleSet::from_boxes(boxes.clone());
        let r = pgd_minimize(&obj, &set, &PgdConfig::default(), &[0.0; 4]).unwrap();
        let expect = project_box(&[-2.0, 0.3, 4.0, 0.9], &boxes);
        for (x, e) in r.x.iter().zip(&expect) {
            assert!((x - e).abs() < 1e-6, "{x} vs {e}");
        }
    }

    #[test]
    fn pgd_simplex_row() {
        let set = FeasibleSet::from_boxes(vec![Bounds::new(0.0, 1.0); 3]).with_simplex_row(vec![0, 1, 2]);
        let r = pgd_minimize(
            &quad(vec![1.0, 0.5, -1.0]),
            &set,
            &PgdConfig::default(),
            &[1.0 / 3.0; 3],
        )
        .unwrap();
        assert!((r.x[0] - 0.75).abs() < 1e-7 && (r.x[1] - 0.25).abs() < 1e-7 && r.x[2] == 0.0);
    }

    #[test]
    fn floored_simplex_projection() {
        let set = FeasibleSet::from_boxes(vec![Bounds::new(0.0, 1.0); 3])
            .with_simplex_row(vec![0, 1, 2])
            .with_simplex_floor(0.1);
        let p = set.project(&[2.0, 0.0, 0.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15 && (p[1] - 0.1).abs() < 1e-15 && (p[2] - 0.1).abs() < 1e-15);
        assert!(set.violation(&p) < 1e-15);
        assert!(set.clone().with_simplex_floor(0.4).validate().is_err());
    }

    #[test]
    fn pgd_with_smooth_inequality() {
        // minimise (x-2)^2 + (y-2)^2 subject to x^2 + y^2 <= 1
        let g = FnObjective {
            value: |x: &[f64]| x[0] * x[0] + x[1] * x[1] - 1.0,
            grad: |x: &[f64], g: &mut [f64]| {
                g[0] = 2.0 * x[0];
                g[1] = 2.0 * x[1];
            },
        };
        let set = FeasibleSet::from_boxes(vec![Bounds::new(-5.0, 5.0); 2]).with_extra_ineq(Arc::new(g));
        let r = pgd_minimize(&quad(vec![2.0, 2.0]), &set, &PgdConfig::default(), &[0.0, 0.0]).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(r.ineq_violation <= INEQ_TOL);
        assert!((r.x[0] - s).abs() < 1e-6 && (r.x[1] - s).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn coupling_projection() {
        let set = FeasibleSet::from_boxes(vec![Bounds::new(0.0, 1.0); 2]).with_coupling(vec![1.0, 1.0], 1.0);
        let p = set.project(&[0.9, 0.9]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-9 && (p[1] - 0.5).abs() < 1e-9);
        assert!(set.violation(&p) <= 1e-12);
    }

    #[test]
    fn dual_bisection_examples() {
        let (d, c) = dual_bisection_coupled(|d| vec![(1.0 - d).max(0.0); 2], 1.0, 1e-12).unwrap();
        assert!((d - 0.5).abs() < 1e-9);
        assert!((c[0] - 0.5).abs() < 1e-9 && (c[1] - 0.5).abs() < 1e-9);

        let (d, _) = dual_bisection_coupled(|d| vec![(0.25 - d).max(0.0); 2], 1.0, 1e-12).unwrap();
        assert_eq!(d, 0.0);
        let (d, _) = dual_bisection_coupled(|d| vec![(0.5 - d).max(0.0); 2], 1.0, 1e-12).unwrap();
        assert_eq!(d, 0.0);

        let err = dual_bisection_coupled(|_| vec![3.0], 1.0, 1e-9).unwrap_err();
        assert!(matches!(err, Error::BudgetUnreachable { .. }));
    }

    #[test]
    fn dual_bisection_slackness() {
        let budget = 2.0;
        let solver = |d: f64| vec![3.0 / (1.0 + d), 2.0 / (1.0 + 2.0 * d)];
        let (d, c) = dual_bisection_coupled(solver, budget, 1e-10).unwrap();
        assert_eq!(c, solver(d));
        let s: f64 = c.iter().sum();
        assert!((d * (s - budget)).abs() <= 1e-10 * budget.max(1.0));
    }

    proptest! {
        #[test]
        fn projections_idempotent(v in proptest::collection::vec(-3.0f64..3.0, 1..6)) {
            let p = project_simplex_row(&v);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-12);
            let pp = project_simplex_row(&p);
            for (a, b) in p.iter().zip(&pp) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
            let boxes = vec![Bounds::new(-1.0, 0.5); v.len()];
            let b = project_box(&v, &boxes);
            prop_assert_eq!(project_box(&b, &boxes), b);
        }

        #[test]
        fn simplex_rows_sum_exactly(v in proptest::collection::vec(-3.0f64..5.0, 3), floor in 0.0f64..0.3) {
            let p = project_simplex_row(&v);
            prop_assert_eq!(p.iter().sum::<f64>(), 1.0);
            let set = FeasibleSet::from_boxes(vec![Bounds::new(0.0, 1.0); 3])
                .with_simplex_row(vec![0, 1, 2])
                .with_simplex_floor(floor);
            prop_assert_eq!(set.violation(&set.project(&v).unwrap()), 0.0);
        }

        #[test]
        fn bisection_keeps_sign_change(root in -5.0f64..5.0, scale in 0.1f64..10.0) {
            let r = bisect_root(|x| scale * (x - root), -10.0, 10.0, 1e-10).unwrap();
            prop_assert!((r - root).abs() <= 1e-9);
        }
    }
}
