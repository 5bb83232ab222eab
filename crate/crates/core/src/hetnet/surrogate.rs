//! Nested updated transform of the per-user cost.
//!
//! The local, uplink and SBS-compute costs are triple products
//! `x * share * kernel`. Each is majorised in two stages: an inner pair with
//! `A = kernel`, `B = share` and an outer pair with `A = inner surrogate`,
//! `B = x`. Both stages are convex, and an increasing square of a nonnegative
//! convex function stays convex, so the nested surrogate is jointly convex
//! whenever the kernel is. The uplink cost carries one more factor, the load
//! `max(sum_n x_{n,m}, 1)` of its base station, paired as `A = outer surrogate`,
//! `B = load`; the load is convex in `x`, so convexity survives and every user
//! sees the congestion it causes. The forwarded and MBS-compute costs are plain
//! products `constant * x * share` and take a single pair with `A = x`,
//! `B = share`.
//!
//! The SBS budget `sum x1 * f_sbs <= 1` (normalised) gets the same treatment
//! with `A = f_sbs`, `B = x1`, which yields an inner convex restriction of it.

use serde::{Deserialize, Serialize};

use super::model::*;
use crate::convex::Objective;
use crate::error::{domain, Result};
use crate::{is_zero_factor, DEFAULT_C1};

/// Auxiliary value and adaptive constant of one product pair.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AuxPair {
    pub y: f64,
    pub c: f64,
}

impl AuxPair {
    /// Tight pair for factors `a`, `b`. A vanishing factor on either side selects the
    /// constant branch with `c = c1 / max(a, c1)`, so the bias `a^2 c` it adds is at
    /// most `a * c1`: `c1` relative to the kernel in the normalised units of `b`.
    pub fn fresh(a: f64, b: f64, c1: f64) -> Result<Self> {
        if !(c1 > 0.0 && c1.is_finite()) {
            return Err(domain(format!("adaptive constant must be positive, got {c1}")));
        }
        if !(a >= 0.0) || !(b >= -ZERO_SLACK) || !a.is_finite() || !b.is_finite() {
            return Err(domain(format!("product factors must be non-negative, got {a}, {b}")));
        }
        if a <= f64::MIN_POSITIVE || is_zero_factor(b, a) {
            return Ok(Self {
                y: 0.0,
                c: c1 / a.max(c1),
            });
        }
        Ok(Self {
            y: b / (2.0 * a),
            c: 0.0,
        })
    }

    pub fn denom(&self) -> f64 {
        self.y + self.c
    }

    pub fn is_constant_branch(&self) -> bool {
        self.c > 0.0
    }

    /// `a^2 (y + c) + b^2 / (4 (y + c))` and its partials in `a` and `b`.
    pub fn eval(&self, a: f64, b: f64) -> (f64, f64, f64) {
        let s = self.denom();
        (a * a * s + b * b / (4.0 * s), 2.0 * a * s, b / (2.0 * s))
    }
}

// Projections can leave shares a few ulps below zero.
const ZERO_SLACK: f64 = 1e-12;

/// Auxiliary state of the nested transform. Per-station arrays are indexed by
/// [`SBS`] and [`MBS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedAux {
    /// Outer pair of the local cost.
    pub alpha: Vec<[AuxPair; 2]>,
    /// Inner pair of the local cost.
    pub beta: Vec<[AuxPair; 2]>,
    /// Outer pair of the uplink cost.
    pub gamma: Vec<[AuxPair; 2]>,
    /// Inner pair of the uplink cost.
    pub delta: Vec<[AuxPair; 2]>,
    /// Pair of the uplink surrogate with the load of its base station.
    pub load_pair: Vec<[AuxPair; 2]>,
    /// Outer pair of the SBS compute cost.
    pub epsilon: Vec<AuxPair>,
    /// Inner pair of the SBS compute cost.
    pub zeta: Vec<AuxPair>,
    /// Pair of the forwarded cost.
    pub eta: Vec<AuxPair>,
    /// Pair of the MBS compute cost.
    pub theta: Vec<AuxPair>,
    /// Pair of the SBS budget constraint.
    pub lambda: Vec<AuxPair>,
}

impl NestedAux {
    fn pairs(&self) -> impl Iterator<Item = &AuxPair> {
        self.alpha
            .iter()
            .chain(&self.beta)
            .chain(&self.gamma)
            .chain(&self.delta)
            .chain(&self.load_pair)
            .flatten()
            .chain(&self.epsilon)
            .chain(&self.zeta)
            .chain(&self.eta)
            .chain(&self.theta)
            .chain(&self.lambda)
    }

    fn pairs_mut(&mut self) -> impl Iterator<Item = &mut AuxPair> {
        self.alpha
            .iter_mut()
            .chain(&mut self.beta)
            .chain(&mut self.gamma)
            .chain(&mut self.delta)
            .chain(&mut self.load_pair)
            .flatten()
            .chain(&mut self.epsilon)
            .chain(&mut self.zeta)
            .chain(&mut self.eta)
            .chain(&mut self.theta)
            .chain(&mut self.lambda)
    }

    pub fn constant_branch_count(&self) -> usize {
        self.pairs().filter(|p| p.is_constant_branch()).count()
    }

    /// Keeps the constant of every pair that was already in the constant branch in
    /// `prev`. The scaled constant follows `A`, and a changed constant is not the
    /// minimiser of the pair, so refreshing it could raise the surrogate.
    pub fn carry_constants(&mut self, prev: &NestedAux) {
        for (p, old) in self.pairs_mut().zip(prev.pairs()) {
            if p.is_constant_branch() && old.is_constant_branch() {
                p.c = old.c;
            }
        }
    }

    fn nested(&self, n: usize) -> [(AuxPair, AuxPair, Option<AuxPair>); 5] {
        [
            (self.beta[n][SBS], self.alpha[n][SBS], None),
            (self.beta[n][MBS], self.alpha[n][MBS], None),
            (self.delta[n][SBS], self.gamma[n][SBS], Some(self.load_pair[n][SBS])),
            (self.delta[n][MBS], self.gamma[n][MBS], Some(self.load_pair[n][MBS])),
            (self.zeta[n], self.epsilon[n], None),
        ]
    }
}

/// One triple product `x * share * kernel` of a user, with the coordinates it touches.
struct Triple {
    kernel: f64,
    kernel_deriv: f64,
    kernel_idx: usize,
    share: f64,
    share_idx: &'static [(usize, f64)],
    x_idx: usize,
    /// Base station whose load multiplies the product.
    loaded: Option<usize>,
}

fn triples(inst: &HetNetInstance, n: usize, u: &[f64]) -> [Triple; 5] {
    let (kl, dkl) = inst.local_kernel(n, u[F_LOCAL]);
    let (ks, dks) = inst.sbs_kernel(n, u[F_SBS]);
    let (up1, dup1) = inst.uplink_kernel(n, SBS, u[POWER]);
    let (up2, dup2) = inst.uplink_kernel(n, MBS, u[POWER]);
    [
        Triple {
            kernel: kl,
            kernel_deriv: dkl,
            kernel_idx: F_LOCAL,
            share: u[LOCAL_SHARE],
            share_idx: &[(LOCAL_SHARE, 1.0)],
            x_idx: X_SBS,
            loaded: None,
        },
        Triple {
            kernel: kl,
            kernel_deriv: dkl,
            kernel_idx: F_LOCAL,
            share: 1.0 - u[MBS_SHARE],
            share_idx: &[(MBS_SHARE, -1.0)],
            x_idx: X_MBS,
            loaded: None,
        },
        Triple {
            kernel: up1,
            kernel_deriv: dup1,
            kernel_idx: POWER,
            share: u[SBS_SHARE] + u[FWD_SHARE],
            share_idx: &[(SBS_SHARE, 1.0), (FWD_SHARE, 1.0)],
            x_idx: X_SBS,
            loaded: Some(SBS),
        },
        Triple {
            kernel: up2,
            kernel_deriv: dup2,
            kernel_idx: POWER,
            share: u[MBS_SHARE],
            share_idx: &[(MBS_SHARE, 1.0)],
            x_idx: X_MBS,
            loaded: Some(MBS),
        },
        Triple {
            kernel: ks,
            kernel_deriv: dks,
            kernel_idx: F_SBS,
            share: u[SBS_SHARE],
            share_idx: &[(SBS_SHARE, 1.0)],
            x_idx: X_SBS,
            loaded: None,
        },
    ]
}

/// Plain products `scale * x * share`: forwarded then MBS compute.
fn doubles(inst: &HetNetInstance, n: usize) -> [(f64, usize, usize); 2] {
    let d = inst.data_bits[n];
    [
        (d * inst.forward_cost_per_bit(n), X_SBS, FWD_SHARE),
        (d * inst.mbs_compute_per_bit(n), X_MBS, MBS_SHARE),
    ]
}

/// Surrogate of user `n` at the normalised coordinates `u` under the given load.
///
/// Accumulates into `grad` when given and adds the partials in each load to
/// `load_sens`; the caller spreads those onto every user's association.
fn user_surrogate(
    inst: &HetNetInstance,
    n: usize,
    u: &[f64],
    aux: &NestedAux,
    load: [f64; 2],
    mut grad: Option<(&mut [f64], &mut [f64; 2])>,
) -> f64 {
    let mut total = 0.0;
    for (t, (inner, outer, load_pair)) in triples(inst, n, u).iter().zip(aux.nested(n)) {
        let (hat, d_kernel, d_share) = inner.eval(t.kernel, t.share);
        let x = u[t.x_idx];
        let (mut value, mut d_hat, mut d_x) = outer.eval(hat, x);
        if let (Some(m), Some(pair)) = (t.loaded, load_pair) {
            let (v, d_outer, d_load) = pair.eval(value, load[m]);
            d_hat *= d_outer;
            d_x *= d_outer;
            value = v;
            if let Some((_, sens)) = grad.as_mut() {
                sens[m] += d_load;
            }
        }
        total += value;
        if let Some((g, _)) = grad.as_mut() {
            g[t.kernel_idx] += d_hat * d_kernel * t.kernel_deriv;
            for &(i, coef) in t.share_idx {
                g[i] += d_hat * d_share * coef;
            }
            g[t.x_idx] += d_x;
        }
    }
    for ((scale, x_idx, share_idx), pair) in doubles(inst, n).into_iter().zip([aux.eta[n], aux.theta[n]]) {
        let (value, d_x, d_share) = pair.eval(u[x_idx], u[share_idx]);
        total += scale * value;
        if let Some((g, _)) = grad.as_mut() {
            g[x_idx] += scale * d_x;
            g[share_idx] += scale * d_share;
        }
    }
    total
}

/// Nested surrogate of the total cost at the normalised point `z`.
pub fn nested_transform_eval(inst: &HetNetInstance, z: &[f64], aux: &NestedAux) -> f64 {
    let load = effective_load(load_normalized(z));
    z.chunks_exact(PER_USER)
        .enumerate()
        .map(|(n, u)| user_surrogate(inst, n, u, aux, load, None))
        .sum()
}

/// Gradient of [`nested_transform_eval`] in `z`, written into `grad`; returns the value.
pub fn nested_transform_grad(inst: &HetNetInstance, z: &[f64], aux: &NestedAux, grad: &mut [f64]) -> f64 {
    grad.fill(0.0);
    let raw = load_normalized(z);
    let load = effective_load(raw);
    let mut sens = [0.0; 2];
    let mut total = 0.0;
    for (n, (u, g)) in z
        .chunks_exact(PER_USER)
        .zip(grad.chunks_exact_mut(PER_USER))
        .enumerate()
    {
        total += user_surrogate(inst, n, u, aux, load, Some((g, &mut sens)));
    }
    // the load is max(sum x, 1); below one user it does not move
    for g in grad.chunks_exact_mut(PER_USER) {
        if raw[SBS] > 1.0 {
            g[X_SBS] += sens[SBS];
        }
        if raw[MBS] > 1.0 {
            g[X_MBS] += sens[MBS];
        }
    }
    total
}

/// Fresh auxiliaries at `z`. Inner pairs are fixed first and each outer pair is
/// taken at the refreshed surrogate beneath it, which is what makes the nest tight.
pub fn nested_aux_update(inst: &HetNetInstance, z: &[f64], c1: f64) -> Result<NestedAux> {
    let users = inst.users();
    let load = effective_load(load_normalized(z));
    let mut aux = NestedAux {
        alpha: Vec::with_capacity(users),
        beta: Vec::with_capacity(users),
        gamma: Vec::with_capacity(users),
        delta: Vec::with_capacity(users),
        load_pair: Vec::with_capacity(users),
        epsilon: Vec::with_capacity(users),
        zeta: Vec::with_capacity(users),
        eta: Vec::with_capacity(users),
        theta: Vec::with_capacity(users),
        lambda: Vec::with_capacity(users),
    };
    for (n, u) in z.chunks_exact(PER_USER).enumerate() {
        let mut pairs = [(AuxPair::default(), AuxPair::default(), AuxPair::default()); 5];
        for (slot, t) in pairs.iter_mut().zip(triples(inst, n, u)) {
            let inner = AuxPair::fresh(t.kernel, t.share, c1)?;
            let (hat, _, _) = inner.eval(t.kernel, t.share);
            let outer = AuxPair::fresh(hat, u[t.x_idx], c1)?;
            let loaded = match t.loaded {
                Some(m) => {
                    let (value, _, _) = outer.eval(hat, u[t.x_idx]);
                    AuxPair::fresh(value, load[m], c1)?
                }
                None => AuxPair::default(),
            };
            *slot = (inner, outer, loaded);
        }
        aux.beta.push([pairs[0].0, pairs[1].0]);
        aux.alpha.push([pairs[0].1, pairs[1].1]);
        aux.delta.push([pairs[2].0, pairs[3].0]);
        aux.gamma.push([pairs[2].1, pairs[3].1]);
        aux.load_pair.push([pairs[2].2, pairs[3].2]);
        aux.zeta.push(pairs[4].0);
        aux.epsilon.push(pairs[4].1);
        aux.eta.push(AuxPair::fresh(u[X_SBS], u[FWD_SHARE], c1)?);
        aux.theta.push(AuxPair::fresh(u[X_MBS], u[MBS_SHARE], c1)?);
        aux.lambda.push(AuxPair::fresh(u[F_SBS], u[X_SBS], c1)?);
    }
    Ok(aux)
}

/// Auxiliary of the MBS compute pair under the alternative pairing `A = share`,
/// `B = x`, i.e. `x / (2 share)`. The solver pairs the other way round so that a
/// vanishing share costs `x^2 c1` instead of a large `x^2 / (4 c1)` term.
pub fn paper_theta(x_mbs: f64, mbs_share: f64) -> Result<f64> {
    Ok(AuxPair::fresh(mbs_share, x_mbs, DEFAULT_C1)?.y)
}

/// Transformed SBS budget `sum (f^2 (y + c) + x1^2 / (4 (y + c))) - 1 <= 0` in normalised units.
#[derive(Debug, Clone)]
pub struct BudgetRestriction {
    pub lambda: Vec<AuxPair>,
}

impl Objective for BudgetRestriction {
    fn value(&self, z: &[f64]) -> f64 {
        z.chunks_exact(PER_USER)
            .zip(&self.lambda)
            .map(|(u, p)| p.eval(u[F_SBS], u[X_SBS]).0)
            .sum::<f64>()
            - 1.0
    }

    fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        let mut total = -1.0;
        for ((u, g), p) in z
            .chunks_exact(PER_USER)
            .zip(grad.chunks_exact_mut(PER_USER))
            .zip(&self.lambda)
        {
            let (v, d_f, d_x) = p.eval(u[F_SBS], u[X_SBS]);
            total += v;
            g[F_SBS] = d_f;
            g[X_SBS] = d_x;
        }
        total
    }
}

/// Normalised budget usage `sum x1 * f_sbs - 1`.
pub fn budget_residual(z: &[f64]) -> f64 {
    z.chunks_exact(PER_USER).map(|u| u[X_SBS] * u[F_SBS]).sum::<f64>() - 1.0
}

/// Intra-level objective: nested surrogate with frozen load plus the linearised penalty.
pub struct IntraSurrogate<'a> {
    pub inst: &'a HetNetInstance,
    pub aux: &'a NestedAux,
    pub x_lin: &'a [[f64; 2]],
}

/// Linearised penalty measured from its value at the linearisation point, so the
/// intra objective stays on the scale of the cost.
fn penalty_shift(x: &[[f64; 2]], x_lin: &[[f64; 2]], tau: f64) -> (f64, Vec<[f64; 2]>) {
    let (pen, grad) = penalty_linearized(x, x_lin, tau);
    (pen - penalty_linearized(x_lin, x_lin, tau).0, grad)
}

impl Objective for IntraSurrogate<'_> {
    fn value(&self, z: &[f64]) -> f64 {
        let (pen, _) = penalty_shift(&assoc_rows(z), self.x_lin, self.inst.tau);
        nested_transform_eval(self.inst, z, self.aux) + pen
    }

    fn value_grad(&self, z: &[f64], grad: &mut [f64]) -> f64 {
        let total = nested_transform_grad(self.inst, z, self.aux, grad);
        let (pen, pen_grad) = penalty_shift(&assoc_rows(z), self.x_lin, self.inst.tau);
        for (g, pg) in grad.chunks_exact_mut(PER_USER).zip(pen_grad) {
            g[X_SBS] += pg[SBS];
            g[X_MBS] += pg[MBS];
        }
        total + pen
    }
}

/// Intra-level original objective: relaxed cost plus the change of the linearised
/// penalty since `x_lin`.
pub fn intra_objective(inst: &HetNetInstance, z: &[f64], x_lin: &[[f64; 2]]) -> f64 {
    let load = effective_load(load_normalized(z));
    cost_with_load(inst, z, load) + penalty_shift(&assoc_rows(z), x_lin, inst.tau).0
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn instance(users: usize) -> HetNetInstance {
        HetNetInstance {
            bandwidth: [5e6, 10e6],
            channel_gain: (0..users)
                .map(|i| [2e-12 / (1.0 + i as f64), 1e-12 * (1.0 + 0.5 * i as f64)])
                .collect(),
            noise_power: 1e-14,
            p_max: vec![0.1; users],
            wired_rate: 1e9,
            wired_power: 1.0,
            f_local_max: vec![1e9; users],
            f_sbs_total: 20e9,
            f_mbs: 5e9,
            data_bits: vec![2.8e6; users],
            cycles_per_bit: vec![75.0; users],
            k_local: 1e-25,
            k_sbs: 1e-25,
            k_mbs: 1e-25,
            w1: 1.0,
            w2: 1e-4,
            tau: 1e5,
        }
    }

    fn point(raw: &[f64]) -> Vec<f64> {
        // raw entries in (0, 1) mapped onto a feasible normalised point
        raw.chunks_exact(PER_USER)
            .flat_map(|r| {
                let s = r[2] + r[3] + r[4];
                [
                    r[0],
                    1.0 - r[0],
                    r[2] / s,
                    r[3] / s,
                    r[4] / s,
                    r[5],
                    r[6].max(NORM_FLOOR),
                    (0.2 * r[7]).max(NORM_FLOOR),
                    r[8].max(NORM_FLOOR),
                ]
            })
            .collect()
    }

    fn relaxed(inst: &HetNetInstance, z: &[f64]) -> f64 {
        cost_with_load(inst, z, effective_load(load_normalized(z)))
    }

    fn unit() -> impl Strategy<Value = f64> {
        0.05f64..0.95
    }

    proptest! {
        #[test]
        fn nested_tightness(raw in prop::collection::vec(unit(), 3 * PER_USER)) {
            let inst = instance(3);
            let z = point(&raw);
            let aux = nested_aux_update(&inst, &z, DEFAULT_C1).unwrap();
            let sur = nested_transform_eval(&inst, &z, &aux);
            let cost = relaxed(&inst, &z);
            prop_assert!((sur - cost).abs() <= 1e-9 * cost, "{} vs {}", sur, cost);
            let budget = BudgetRestriction { lambda: aux.lambda.clone() };
            prop_assert!((budget.value(&z) - budget_residual(&z)).abs() <= 1e-12);
        }

        #[test]
        fn nested_majorizes(raw in prop::collection::vec(unit(), 3 * PER_USER), other in prop::collection::vec(unit(), 3 * PER_USER)) {
            let inst = instance(3);
            let z = point(&raw);
            let w = point(&other);
            let aux = nested_aux_update(&inst, &z, DEFAULT_C1).unwrap();
            let sur = nested_transform_eval(&inst, &w, &aux);
            let cost = relaxed(&inst, &w);
            prop_assert!(sur >= cost * (1.0 - 1e-12));
            let budget = BudgetRestriction { lambda: aux.lambda.clone() };
            prop_assert!(budget.value(&w) >= budget_residual(&w) - 1e-12);
        }

        #[test]
        fn surrogate_convex_along_segments(
            raw in prop::collection::vec(unit(), 3 * PER_USER),
            a in prop::collection::vec(unit(), 3 * PER_USER),
            b in prop::collection::vec(unit(), 3 * PER_USER),
        ) {
            // Low SNR keeps the uplink kernel convex in power.
            let mut inst = instance(3);
            inst.channel_gain = vec![[1e-15, 2e-15], [2e-15, 1e-15], [1e-15, 1e-15]];
            let aux = nested_aux_update(&inst, &point(&raw), DEFAULT_C1).unwrap();
            let (za, zb) = (point(&a), point(&b));
            let f = |t: f64| {
                let z: Vec<f64> = za.iter().zip(&zb).map(|(p, q)| (1.0 - t) * p + t * q).collect();
                nested_transform_eval(&inst, &z, &aux)
            };
            for k in 1..10 {
                let t = k as f64 / 10.0;
                let mid = f(t);
                let chord = (1.0 - t) * f(0.0) + t * f(1.0);
                prop_assert!(mid <= chord * (1.0 + 1e-10) + 1e-12, "{} > {}", mid, chord);
            }
        }
    }

    #[test]
    fn gradient_matches_differences() {
        let inst = instance(3);
        let mut raw: Vec<f64> = (0..3 * PER_USER)
            .map(|i| 0.1 + 0.8 * ((i * 37 % 17) as f64 / 17.0))
            .collect();
        for (n, x) in [0.6, 0.5, 0.45].into_iter().enumerate() {
            raw[n * PER_USER] = x;
        }
        let z = point(&raw);
        assert!(load_normalized(&z).iter().all(|&l| l > 1.0));
        let aux = nested_aux_update(
            &inst,
            &point(&raw.iter().map(|v| 1.0 - v).collect::<Vec<_>>()),
            DEFAULT_C1,
        )
        .unwrap();
        let x_lin = vec![[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]];
        let obj = IntraSurrogate {
            inst: &inst,
            aux: &aux,
            x_lin: &x_lin,
        };
        let mut g = vec![0.0; z.len()];
        obj.value_grad(&z, &mut g);
        for i in 0..z.len() {
            let h = 1e-5;
            let mut p = z.clone();
            p[i] += h;
            let mut m = z.clone();
            m[i] -= h;
            let fd = (obj.value(&p) - obj.value(&m)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0),
                "coord {i}: {fd} vs {}",
                g[i]
            );
        }
        let budget = BudgetRestriction {
            lambda: aux.lambda.clone(),
        };
        budget.value_grad(&z, &mut g);
        for i in 0..z.len() {
            let h = 1e-5;
            let mut p = z.clone();
            p[i] += h;
            let mut m = z.clone();
            m[i] -= h;
            let fd = (budget.value(&p) - budget.value(&m)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn stale_inner_breaks_tightness() {
        let inst = instance(1);
        let z1 = point(&[0.6, 0.0, 0.5, 0.3, 0.2, 0.4, 0.9, 0.3, 0.8]);
        let z2 = point(&[0.3, 0.0, 0.2, 0.5, 0.3, 0.7, 0.5, 0.1, 0.4]);
        let at_z1 = nested_aux_update(&inst, &z1, DEFAULT_C1).unwrap();
        let fresh = nested_aux_update(&inst, &z2, DEFAULT_C1).unwrap();
        // outer pairs refreshed at z2 but computed from the inner surrogate with z1's inner pairs
        let mut stale = fresh.clone();
        stale.beta = at_z1.beta.clone();
        stale.delta = at_z1.delta.clone();
        stale.zeta = at_z1.zeta.clone();
        let u = &z2;
        for (slot, (t, inner)) in stale.alpha[0]
            .iter_mut()
            .zip(triples(&inst, 0, u).iter().take(2).zip(at_z1.beta[0]))
        {
            let (hat, _, _) = inner.eval(t.kernel, t.share);
            *slot = AuxPair::fresh(hat, u[t.x_idx], DEFAULT_C1).unwrap();
        }
        let cost = relaxed(&inst, &z2);
        let good = nested_transform_eval(&inst, &z2, &fresh);
        let bad = nested_transform_eval(&inst, &z2, &stale);
        assert!((good - cost).abs() <= 1e-9 * cost);
        assert!((bad - cost).abs() > 1e-9 * cost);
    }

    #[test]
    fn aux_examples() {
        // x2 = 0.6 with a share of 3 units: the alternative pairing gives 0.1
        assert!((paper_theta(0.6, 3.0).unwrap() - 0.1).abs() < 1e-15);
        let p = AuxPair::fresh(0.6, 0.3, DEFAULT_C1).unwrap();
        assert!((p.y - 0.25).abs() < 1e-15 && p.c == 0.0);
        let p = AuxPair::fresh(0.6, 0.0, DEFAULT_C1).unwrap();
        assert_eq!(p.y, 0.0);
        assert!((p.c - DEFAULT_C1 / 0.6).abs() < 1e-18);
        let p = AuxPair::fresh(0.0, 0.4, DEFAULT_C1).unwrap();
        assert_eq!((p.y, p.c), (0.0, 1.0));
        assert!(AuxPair::fresh(1.0, 0.5, 0.0).is_err());
        assert!(AuxPair::fresh(-1.0, 0.5, 1e-3).is_err());
    }

    #[test]
    fn vanished_share_uses_constant_branch() {
        let inst = instance(1);
        let mut z = point(&[0.6, 0.0, 0.5, 0.3, 0.2, 0.4, 0.9, 0.3, 0.8]);
        z[FWD_SHARE] = 0.0;
        z[X_MBS] = 0.0;
        z[MBS_SHARE] = 0.0;
        z[X_SBS] = 1.0;
        let aux = nested_aux_update(&inst, &z, DEFAULT_C1).unwrap();
        assert!(aux.eta[0].is_constant_branch());
        assert!(aux.alpha[0][MBS].is_constant_branch());
        assert!(!aux.alpha[0][SBS].is_constant_branch());
        let cost = relaxed(&inst, &z);
        let sur = nested_transform_eval(&inst, &z, &aux);
        // the constant branch only adds A^2 c terms
        assert!(sur >= cost && sur - cost <= 1e-2 * cost, "{sur} vs {cost}");
    }

    #[test]
    fn carried_constants_keep_branch_terms_from_rising() {
        let inst = instance(1);
        let mut z = point(&[0.6, 0.0, 0.5, 0.3, 0.2, 0.4, 0.9, 0.3, 0.8]);
        z[X_SBS] = 0.0;
        z[X_MBS] = 1.0;
        let prev = nested_aux_update(&inst, &z, DEFAULT_C1).unwrap();
        // a lower local frequency moves the kernels, and so the scaled constants
        let mut w = z.clone();
        w[F_LOCAL] = 0.5;
        let mut carried = nested_aux_update(&inst, &w, DEFAULT_C1).unwrap();
        let refreshed = carried.clone();
        carried.carry_constants(&prev);
        assert!(prev.alpha[0][SBS].is_constant_branch());
        assert_eq!(carried.alpha[0][SBS].c, prev.alpha[0][SBS].c);
        assert_ne!(refreshed.alpha[0][SBS].c, prev.alpha[0][SBS].c);
        assert_eq!(carried.constant_branch_count(), refreshed.constant_branch_count());
        // pairs outside the branch keep their fresh values
        assert_eq!(carried.beta, refreshed.beta);
        let cost = relaxed(&inst, &w);
        assert!(nested_transform_eval(&inst, &w, &carried) >= cost * (1.0 - 1e-12));
    }
}
