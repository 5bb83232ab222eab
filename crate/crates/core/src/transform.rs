//! Quadratic ratio transform, updated product transform and the block-coordinate driver.
//!
//! For a product `A(x) * B(x)` the surrogate is
//! `A^2 (y + c) + B^2 / (4 (y + c))`, tight at `y = B / (2A)`, `c = 0` whenever
//! `B > 0`. When `B` vanishes the auxiliary variable collapses to 0 and the
//! adaptive constant `c1 > 0` keeps the denominator away from zero. For a ratio
//! `A(x) / B(x)` the surrogate is `A^2 y + 1 / (4 B^2 y)`, tight at
//! `y = 1 / (2AB)`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::convex::{pgd_minimize, FeasibleSet, Objective, PgdConfig};
use crate::error::{domain, Error, Result};
use crate::trace::{ConvergenceTrace, SolveStatus};
use crate::{is_zero_factor, DEFAULT_C1};

pub type EvalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type GradFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type UnaryFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FieldRange {
    Positive,
    NonNegative,
    Unrestricted,
}

/// A real-valued function of the decision vector with an optional gradient.
#[derive(Clone)]
pub struct ScalarField {
    eval: EvalFn,
    grad: Option<GradFn>,
    pub range: FieldRange,
}

impl fmt::Debug for ScalarField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarField")
            .field("range", &self.range)
            .field("analytic_grad", &self.grad.is_some())
            .finish()
    }
}

impl ScalarField {
    pub fn new(range: FieldRange, eval: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(eval),
            grad: None,
            range,
        }
    }

    pub fn with_grad(mut self, grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn constant(range: FieldRange, v: f64) -> Self {
        Self::new(range, move |_| v).with_grad(|x| vec![0.0; x.len()])
    }

    pub fn has_analytic_grad(&self) -> bool {
        self.grad.is_some()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    /// Value checked against the declared range.
    pub fn checked_value(&self, x: &[f64]) -> Result<f64> {
        let v = self.value(x);
        let ok = match self.range {
            FieldRange::Positive => v > 0.0,
            FieldRange::NonNegative => v >= 0.0,
            FieldRange::Unrestricted => v.is_finite(),
        };
        if ok && v.is_finite() {
            Ok(v)
        } else {
            Err(domain(format!("field value {v} outside its {:?} range", self.range)))
        }
    }

    /// Analytic gradient when present, central differences otherwise.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match &self.grad {
            Some(g) => g(x),
            None => self.numeric_gradient(x),
        }
    }

    pub fn numeric_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut probe = x.to_vec();
        (0..x.len())
            .map(|i| {
                let h = 1e-6 * x[i].abs().max(1.0);
                probe[i] = x[i] + h;
                let up = self.value(&probe);
                probe[i] = x[i] - h;
                let down = self.value(&probe);
                probe[i] = x[i];
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    /// Largest relative gap between the analytic gradient and central differences.
    pub fn gradient_mismatch(&self, x: &[f64]) -> f64 {
        let analytic = self.gradient(x);
        let numeric = self.numeric_gradient(x);
        let scale = analytic
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / scale)
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct ProductTerm {
    pub a: ScalarField,
    pub b: ScalarField,
}

impl ProductTerm {
    pub fn new(a: ScalarField, b: ScalarField) -> Result<Self> {
        if a.range != FieldRange::Positive {
            return Err(Error::InvalidInput("product A factor must be Positive".into()));
        }
        if b.range == FieldRange::Unrestricted {
            return Err(Error::InvalidInput(
                "product B factor must be Positive or NonNegative".into(),
            ));
        }
        Ok(Self { a, b })
    }
}

#[derive(Debug, Clone)]
pub struct RatioTerm {
    pub a: ScalarField,
    pub b: ScalarField,
}

impl RatioTerm {
    pub fn new(a: ScalarField, b: ScalarField) -> Result<Self> {
        if a.range != FieldRange::Positive || b.range != FieldRange::Positive {
            return Err(Error::InvalidInput(
                "ratio numerator and denominator must both be Positive".into(),
            ));
        }
        Ok(Self { a, b })
    }
}

/// Per-problem term list; ratio and product terms never mix.
#[derive(Debug, Clone)]
pub enum Terms {
    Product(Vec<ProductTerm>),
    Ratio(Vec<RatioTerm>),
}

impl Terms {
    pub fn len(&self) -> usize {
        match self {
            Terms::Product(t) => t.len(),
            Terms::Ratio(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Nondecreasing outer function `G_k` applied to a term.
#[derive(Clone)]
pub struct Wrapper {
    eval: UnaryFn,
    deriv: Option<UnaryFn>,
}

impl fmt::Debug for Wrapper {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Wrapper")
            .field("analytic_deriv", &self.deriv.is_some())
            .finish()
    }
}

impl Wrapper {
    pub fn new(eval: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            eval: Arc::new(eval),
            deriv: None,
        }
    }

    pub fn with_deriv(mut self, deriv: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.deriv = Some(Arc::new(deriv));
        self
    }

    pub fn identity() -> Self {
        Self::new(|t| t).with_deriv(|_| 1.0)
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.eval)(t)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match &self.deriv {
            Some(d) => d(t),
            None => {
                let h = 1e-6 * t.abs().max(1.0);
                (self.value(t + h) - self.value(t - h)) / (2.0 * h)
            }
        }
    }

    /// Sampled check that the wrapper never decreases on `[0, 1e6]`, stopping at overflow.
    pub fn is_nondecreasing(&self) -> bool {
        let mut prev_t = 0.0;
        let mut prev = self.value(0.0);
        for k in -60..=60 {
            let t = 10f64.powf(k as f64 / 10.0);
            let v = self.value(t);
            if !v.is_finite() {
                break;
            }
            if !(v - prev >= -1e-9) {
                return false;
            }
            let h = 1e-6 * t.max(1.0);
            let ahead = self.value(t + h);
            if ahead.is_finite() && !(ahead - v >= -1e-9) {
                return false;
            }
            prev = v;
            prev_t = t;
        }
        prev_t > 0.0
    }
}

/// Auxiliary variables `y_k` and adaptive constants `c_k`, one per term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxState {
    pub y: Vec<f64>,
    pub c: Vec<f64>,
}

impl AuxState {
    pub fn validate(&self) -> Result<()> {
        if self.y.len() != self.c.len() {
            return Err(Error::InvalidInput("aux y and c lengths differ".into()));
        }
        for (k, (y, c)) in self.y.iter().zip(&self.c).enumerate() {
            if !(*y >= 0.0 && *c >= 0.0 && y + c > 0.0) {
                return Err(domain(format!("aux {k}: y = {y}, c = {c}")));
            }
        }
        Ok(())
    }

    /// Number of terms currently on the adaptive-constant branch.
    pub fn constant_branch_count(&self) -> usize {
        self.c.iter().filter(|c| **c > 0.0).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub eps_rel: f64,
    pub max_iters: usize,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            eps_rel: 1e-6,
            max_iters: 500,
        }
    }
}

impl StoppingRule {
    pub fn new(eps_rel: f64, max_iters: usize) -> Result<Self> {
        let rule = Self { eps_rel, max_iters };
        rule.validate()?;
        Ok(rule)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eps_rel > 0.0 && self.max_iters >= 1 {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("invalid stopping rule {self:?}")))
        }
    }

    /// True once `cur` is within `eps_rel` of `prev`, relative to `|prev|`.
    pub fn settled(&self, prev: f64, cur: f64) -> bool {
        (cur - prev).abs() <= self.eps_rel * prev.abs().max(f64::MIN_POSITIVE)
    }
}

/// `E(x) + sum_k G_k(term_k(x))` over a feasible set.
#[derive(Debug, Clone)]
pub struct TransformProblem {
    pub base: Option<ScalarField>,
    pub terms: Terms,
    pub wrappers: Option<Vec<Wrapper>>,
    pub feasible_set: FeasibleSet,
}

impl TransformProblem {
    pub fn new(
        base: Option<ScalarField>,
        terms: Terms,
        wrappers: Option<Vec<Wrapper>>,
        feasible_set: FeasibleSet,
    ) -> Result<Self> {
        if terms.is_empty() {
            return Err(Error::InvalidInput("problem needs at least one term".into()));
        }
        if let Some(w) = &wrappers {
            if w.len() != terms.len() {
                return Err(Error::InvalidInput(format!(
                    "{} wrappers for {} terms",
                    w.len(),
                    terms.len()
                )));
            }
            if let Some(k) = w.iter().position(|g| !g.is_nondecreasing()) {
                return Err(Error::InvalidInput(format!("wrapper {k} is decreasing somewhere")));
            }
        }
        feasible_set.validate()?;
        Ok(Self {
            base,
            terms,
            wrappers,
            feasible_set,
        })
    }

    pub fn products(terms: Vec<ProductTerm>, feasible_set: FeasibleSet) -> Result<Self> {
        Self::new(None, Terms::Product(terms), None, feasible_set)
    }

    pub fn ratios(terms: Vec<RatioTerm>, feasible_set: FeasibleSet) -> Result<Self> {
        Self::new(None, Terms::Ratio(terms), None, feasible_set)
    }

    fn wrap(&self, k: usize, t: f64) -> f64 {
        self.wrappers.as_ref().map_or(t, |w| w[k].value(t))
    }

    fn wrap_deriv(&self, k: usize, t: f64) -> f64 {
        self.wrappers.as_ref().map_or(1.0, |w| w[k].derivative(t))
    }

    fn base_value(&self, x: &[f64]) -> f64 {
        self.base.as_ref().map_or(0.0, |e| e.value(x))
    }

    /// Objective without any transform: `E(x) + sum_k G_k(A_k B_k)` or `G_k(A_k / B_k)`.
    pub fn original_objective(&self, x: &[f64]) -> f64 {
        let terms: f64 = match &self.terms {
            Terms::Product(ts) => ts
                .iter()
                .enumerate()
                .map(|(k, t)| self.wrap(k, t.a.value(x) * t.b.value(x)))
                .sum(),
            Terms::Ratio(ts) => ts
                .iter()
                .enumerate()
                .map(|(k, t)| self.wrap(k, t.a.value(x) / t.b.value(x)))
                .sum(),
        };
        self.base_value(x) + terms
    }

    /// Closed-form auxiliary update at `x`.
    pub fn aux_update(&self, x: &[f64], c1: f64) -> Result<AuxState> {
        let n = self.terms.len();
        let mut aux = AuxState {
            y: Vec::with_capacity(n),
            c: Vec::with_capacity(n),
        };
        match &self.terms {
            Terms::Product(ts) => {
                for t in ts {
                    let (y, c) = mp_aux_update(t, x, c1)?;
                    aux.y.push(y);
                    aux.c.push(c);
                }
            }
            Terms::Ratio(ts) => {
                for t in ts {
                    aux.y.push(fp_aux_update(t, x)?);
                    aux.c.push(0.0);
                }
            }
        }
        Ok(aux)
    }
}

fn check_c1(c1: f64) -> Result<()> {
    if c1 > 0.0 && c1.is_finite() {
        Ok(())
    } else {
        Err(domain(format!("adaptive constant c1 must be positive, got {c1}")))
    }
}

/// `A^2 y + 1 / (4 B^2 y)`.
pub fn fp_surrogate_value(a: f64, b: f64, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(domain(format!("ratio auxiliary must be positive, got {y}")));
    }
    if !(b > 0.0) {
        return Err(domain(format!("ratio denominator must be positive, got {b}")));
    }
    Ok(a * a * y + 1.0 / (4.0 * b * b * y))
}

/// `1 / (2AB)`.
pub fn fp_aux_value(a: f64, b: f64) -> Result<f64> {
    let ab = a * b;
    if !(ab > 0.0) {
        return Err(domain(format!("ratio aux update needs A*B > 0, got {ab}")));
    }
    Ok(1.0 / (2.0 * ab))
}

/// `A^2 (y + c) + B^2 / (4 (y + c))`.
pub fn mp_surrogate_value(a: f64, b: f64, y: f64, c: f64) -> Result<f64> {
    let s = y + c;
    if !(s > 0.0) {
        return Err(domain(format!("y + c must be positive, got {s}")));
    }
    Ok(a * a * s + b * b / (4.0 * s))
}

/// Auxiliary pair for one product with factor values `a`, `b`.
///
/// Returns `(b / (2a), 0)` for a nonzero `b` and `(0, c1)` otherwise.
pub fn mp_aux_value(a: f64, b: f64, c1: f64) -> Result<(f64, f64)> {
    check_c1(c1)?;
    if !(a > 0.0) {
        return Err(domain(format!("product A factor must be positive, got {a}")));
    }
    if is_zero_factor(b, a) {
        return Ok((0.0, c1));
    }
    if b < 0.0 {
        return Err(domain(format!("product B factor must be non-negative, got {b}")));
    }
    Ok((b / (2.0 * a), 0.0))
}

pub fn fp_surrogate_eval(term: &RatioTerm, x: &[f64], y: f64) -> Result<f64> {
    fp_surrogate_value(term.a.value(x), term.b.value(x), y)
}

pub fn fp_aux_update(term: &RatioTerm, x: &[f64]) -> Result<f64> {
    fp_aux_value(term.a.value(x), term.b.value(x))
}

pub fn mp_surrogate_eval(term: &ProductTerm, x: &[f64], y: f64, c: f64) -> Result<f64> {
    mp_surrogate_value(term.a.value(x), term.b.value(x), y, c)
}

pub fn mp_aux_update(term: &ProductTerm, x: &[f64], c1: f64) -> Result<(f64, f64)> {
    mp_aux_value(term.a.value(x), term.b.value(x), c1)
}

/// `E(x) + sum_k G_k(F_k(x, y_k, c_k))` with identity wrappers when none are set.
pub fn wrapped_objective_eval(problem: &TransformProblem, x: &[f64], aux: &AuxState) -> Result<f64> {
    if aux.y.len() != problem.terms.len() || aux.c.len() != problem.terms.len() {
        return Err(Error::InvalidInput(
            "aux dimension does not match the term count".into(),
        ));
    }
    let mut total = problem.base_value(x);
    match &problem.terms {
        Terms::Product(ts) => {
            for (k, t) in ts.iter().enumerate() {
                total += problem.wrap(k, mp_surrogate_eval(t, x, aux.y[k], aux.c[k])?);
            }
        }
        Terms::Ratio(ts) => {
            for (k, t) in ts.iter().enumerate() {
                total += problem.wrap(k, fp_surrogate_eval(t, x, aux.y[k])?);
            }
        }
    }
    Ok(total)
}

/// The surrogate at fixed auxiliaries, as a smooth objective in `x`.
pub struct Surrogate<'a> {
    pub problem: &'a TransformProblem,
    pub aux: &'a AuxState,
}

impl Objective for Surrogate<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        wrapped_objective_eval(self.problem, x, self.aux).unwrap_or(f64::INFINITY)
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let p = self.problem;
        let mut total = 0.0;
        if let Some(e) = &p.base {
            total += e.value(x);
            for (g, d) in grad.iter_mut().zip(e.gradient(x)) {
                *g += d;
            }
        }
        let mut add = |k: usize, f: f64, ca: f64, ga: Vec<f64>, cb: f64, gb: Vec<f64>| {
            let w = p.wrap_deriv(k, f);
            for i in 0..grad.len() {
                grad[i] += w * (ca * ga[i] + cb * gb[i]);
            }
            p.wrap(k, f)
        };
        match &p.terms {
            Terms::Product(ts) => {
                for (k, t) in ts.iter().enumerate() {
                    let (a, b) = (t.a.value(x), t.b.value(x));
                    let s = self.aux.y[k] + self.aux.c[k];
                    let Ok(f) = mp_surrogate_value(a, b, self.aux.y[k], self.aux.c[k]) else {
                        return f64::INFINITY;
                    };
                    total += add(k, f, 2.0 * a * s, t.a.gradient(x), b / (2.0 * s), t.b.gradient(x));
                }
            }
            Terms::Ratio(ts) => {
                for (k, t) in ts.iter().enumerate() {
                    let (a, b) = (t.a.value(x), t.b.value(x));
                    let y = self.aux.y[k];
                    let Ok(f) = fp_surrogate_value(a, b, y) else {
                        return f64::INFINITY;
                    };
                    let cb = -1.0 / (2.0 * b * b * b * y);
                    total += add(k, f, 2.0 * a * y, t.a.gradient(x), cb, t.b.gradient(x));
                }
            }
        }
        total
    }
}

/// Solves the x-block of the surrogate at fixed auxiliaries.
pub trait InnerSolver {
    fn solve(&self, problem: &TransformProblem, aux: &AuxState, x0: &[f64]) -> Result<Vec<f64>>;
}

/// Projected-gradient inner solver over the problem's feasible set.
#[derive(Debug, Clone, Copy, Default)]
pub struct PgdInner {
    pub cfg: PgdConfig,
}

impl InnerSolver for PgdInner {
    fn solve(&self, problem: &TransformProblem, aux: &AuxState, x0: &[f64]) -> Result<Vec<f64>> {
        let obj = Surrogate { problem, aux };
        Ok(pgd_minimize(&obj, &problem.feasible_set, &self.cfg, x0)?.x)
    }
}

#[derive(Debug, Clone)]
pub struct BcdOutcome {
    pub x: Vec<f64>,
    pub aux: AuxState,
    pub trace: ConvergenceTrace,
    pub status: SolveStatus,
    /// Aux updates, summed over terms, that landed on the adaptive-constant branch.
    pub constant_branch_hits: usize,
}

/// Alternates the x-block solve and the closed-form auxiliary update.
///
/// Each trace record holds the surrogate at the freshly updated auxiliaries and
/// the original objective. The loop stops when the original objective changes
/// by at most `eps_rel` relative, or after `max_iters` outer iterations, in
/// which case the best iterate seen is returned with `MaxItersExceeded`.
pub fn bcd_minimize(
    problem: &TransformProblem,
    inner: &dyn InnerSolver,
    stopping: &StoppingRule,
    x0: &[f64],
    c1: f64,
) -> Result<BcdOutcome> {
    stopping.validate()?;
    check_c1(c1)?;
    let set = &problem.feasible_set;
    if x0.len() != set.dim() {
        return Err(Error::InvalidInput(format!(
            "start has dimension {} but the set has {}",
            x0.len(),
            set.dim()
        )));
    }
    let viol = set.violation(x0);
    let g_viol = set.extra_ineq.as_ref().map_or(0.0, |g| g.value(x0).max(0.0));
    if viol > 1e-9 || g_viol > crate::convex::INEQ_TOL {
        return Err(Error::InfeasibleStart(format!(
            "violation {viol:e}, inequality violation {g_viol:e}"
        )));
    }

    let mut x = x0.to_vec();
    let mut aux = problem.aux_update(&x, c1)?;
    let mut hits = aux.constant_branch_count();
    let mut trace = ConvergenceTrace::new();
    let mut orig = problem.original_objective(&x);
    trace.push(wrapped_objective_eval(problem, &x, &aux)?, orig, None);
    let mut best = (orig, x.clone(), aux.clone());

    let mut status = SolveStatus::MaxItersExceeded;
    for _ in 0..stopping.max_iters {
        let candidate = inner.solve(problem, &aux, &x)?;
        let sur = Surrogate { problem, aux: &aux };
        // An inexact inner solve must never undo descent.
        if sur.value(&candidate) <= sur.value(&x) {
            x = candidate;
        }
        aux = problem.aux_update(&x, c1)?;
        hits += aux.constant_branch_count();
        let next = problem.original_objective(&x);
        trace.push(wrapped_objective_eval(problem, &x, &aux)?, next, None);
        if next < best.0 {
            best = (next, x.clone(), aux.clone());
        }
        if stopping.settled(orig, next) {
            status = SolveStatus::Converged;
            break;
        }
        orig = next;
    }
    let (_, x, aux) = best;
    Ok(BcdOutcome {
        x,
        aux,
        trace,
        status,
        constant_branch_hits: hits,
    })
}

/// [`bcd_minimize`] with the default projected-gradient inner solver and `c1`.
pub fn bcd_minimize_default(problem: &TransformProblem, stopping: &StoppingRule, x0: &[f64]) -> Result<BcdOutcome> {
    bcd_minimize(problem, &PgdInner::default(), stopping, x0, DEFAULT_C1)
}
