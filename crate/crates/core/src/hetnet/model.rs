//! Two-tier system model: instance data, decision variables and exact costs.
//!
//! Solvers work on a normalised per-user vector of [`PER_USER`] coordinates:
//! association `(x1, x2)` on a simplex, the SBS-route split of the task into
//! local / SBS-compute / forwarded shares on a simplex, the MBS-route offloaded
//! share, and local frequency, SBS frequency and transmit power divided by their
//! caps. [`AssocVars`] holds the same point in physical units.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Association to the small base station (index 0) or the macro base station (index 1).
pub const SBS: usize = 0;
pub const MBS: usize = 1;

pub const X_SBS: usize = 0;
pub const X_MBS: usize = 1;
/// Share of the task kept local when associated to the SBS.
pub const LOCAL_SHARE: usize = 2;
/// Share computed on the SBS server.
pub const SBS_SHARE: usize = 3;
/// Share forwarded by the SBS over the wired link to the MBS.
pub const FWD_SHARE: usize = 4;
/// Share offloaded directly to the MBS when associated to it.
pub const MBS_SHARE: usize = 5;
pub const F_LOCAL: usize = 6;
pub const F_SBS: usize = 7;
pub const POWER: usize = 8;
pub const PER_USER: usize = 9;

/// Floor on normalised frequencies and power.
pub const NORM_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HetNetInstance {
    /// Bandwidth of the SBS and the MBS (Hz).
    pub bandwidth: [f64; 2],
    /// Linear channel gain of each user towards the SBS and the MBS.
    pub channel_gain: Vec<[f64; 2]>,
    /// Noise power (W).
    pub noise_power: f64,
    pub p_max: Vec<f64>,
    /// Wired SBS-to-MBS rate (bit/s).
    pub wired_rate: f64,
    /// Wired transmission power (W).
    pub wired_power: f64,
    /// Local frequency cap per user (Hz).
    pub f_local_max: Vec<f64>,
    /// SBS server frequency budget (Hz).
    pub f_sbs_total: f64,
    /// Frequency the MBS grants each task (Hz).
    pub f_mbs: f64,
    /// Task size per user (bits).
    pub data_bits: Vec<f64>,
    pub cycles_per_bit: Vec<f64>,
    pub k_local: f64,
    pub k_sbs: f64,
    pub k_mbs: f64,
    pub w1: f64,
    pub w2: f64,
    pub tau: f64,
}

impl HetNetInstance {
    pub fn users(&self) -> usize {
        self.data_bits.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.users();
        if n == 0 {
            return Err(Error::InvalidInput("instance has no users".into()));
        }
        let lens = [
            self.channel_gain.len(),
            self.p_max.len(),
            self.f_local_max.len(),
            self.cycles_per_bit.len(),
        ];
        if lens.iter().any(|l| *l != n) {
            return Err(Error::InvalidInput("per-user vectors differ in length".into()));
        }
        let scalars = [
            self.bandwidth[0],
            self.bandwidth[1],
            self.noise_power,
            self.wired_rate,
            self.wired_power,
            self.f_sbs_total,
            self.f_mbs,
            self.k_local,
            self.k_sbs,
            self.k_mbs,
            self.w1,
            self.w2,
            self.tau,
        ];
        let ok = scalars
            .iter()
            .chain(self.channel_gain.iter().flatten())
            .chain(&self.p_max)
            .chain(&self.f_local_max)
            .chain(&self.data_bits)
            .chain(&self.cycles_per_bit)
            .all(|v| *v > 0.0 && v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput("all instance parameters must be positive".into()))
        }
    }

    /// `d c (w1 / f + w2 k f^2)` with `f = f_hat * cap`.
    fn cpu_kernel(&self, n: usize, f_hat: f64, cap: f64, k: f64) -> (f64, f64) {
        let scale = self.data_bits[n] * self.cycles_per_bit[n];
        let f = f_hat * cap;
        let value = scale * (self.w1 / f + self.w2 * k * f * f);
        let deriv = scale * cap * (-self.w1 / (f * f) + 2.0 * self.w2 * k * f);
        (value, deriv)
    }

    /// Local execution cost of the whole task and its derivative in the normalised frequency.
    pub fn local_kernel(&self, n: usize, f_hat: f64) -> (f64, f64) {
        self.cpu_kernel(n, f_hat, self.f_local_max[n], self.k_local)
    }

    /// SBS execution cost of the whole task and its derivative in the normalised frequency.
    pub fn sbs_kernel(&self, n: usize, f_hat: f64) -> (f64, f64) {
        self.cpu_kernel(n, f_hat, self.f_sbs_total, self.k_sbs)
    }

    /// Uplink cost of the whole task per unit load, and its derivative in normalised power.
    pub fn uplink_kernel(&self, n: usize, m: usize, p_hat: f64) -> (f64, f64) {
        let pm = self.p_max[n];
        let p = p_hat * pm;
        let snr_per_watt = self.channel_gain[n][m] / self.noise_power;
        let log = (snr_per_watt * p).ln_1p();
        let energy = self.w1 + self.w2 * p;
        let b = self.bandwidth[m];
        let d = self.data_bits[n];
        let value = d * energy / (b * log);
        let dlog = snr_per_watt / (1.0 + snr_per_watt * p);
        let deriv = pm * d * (self.w2 * log - energy * dlog) / (b * log * log);
        (value, deriv)
    }

    /// Per-bit cost constant of the forwarded path: wired transfer plus MBS compute.
    pub fn forward_cost_per_bit(&self, n: usize) -> f64 {
        (self.w1 + self.w2 * self.wired_power) / self.wired_rate + self.mbs_compute_per_bit(n)
    }

    pub fn mbs_compute_per_bit(&self, n: usize) -> f64 {
        (self.w1 / self.f_mbs + self.w2 * self.k_mbs * self.f_mbs * self.f_mbs) * self.cycles_per_bit[n]
    }
}

/// Decision variables in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssocVars {
    pub x: Vec<[f64; 2]>,
    pub f_local: Vec<f64>,
    pub f_sbs: Vec<f64>,
    pub power: Vec<f64>,
    /// Bits offloaded towards the SBS and the MBS.
    pub d_off: Vec<[f64; 2]>,
    /// Bits the SBS forwards to the MBS.
    pub d_fwd: Vec<f64>,
}

impl AssocVars {
    pub fn from_normalized(inst: &HetNetInstance, z: &[f64]) -> Self {
        let n = inst.users();
        let mut v = AssocVars {
            x: Vec::with_capacity(n),
            f_local: Vec::with_capacity(n),
            f_sbs: Vec::with_capacity(n),
            power: Vec::with_capacity(n),
            d_off: Vec::with_capacity(n),
            d_fwd: Vec::with_capacity(n),
        };
        for (i, u) in z.chunks_exact(PER_USER).enumerate() {
            let d = inst.data_bits[i];
            v.x.push([u[X_SBS], u[X_MBS]]);
            v.f_local.push(u[F_LOCAL] * inst.f_local_max[i]);
            v.f_sbs.push(u[F_SBS] * inst.f_sbs_total);
            v.power.push(u[POWER] * inst.p_max[i]);
            v.d_off.push([d * (u[SBS_SHARE] + u[FWD_SHARE]), d * u[MBS_SHARE]]);
            v.d_fwd.push(d * u[FWD_SHARE]);
        }
        v
    }

    pub fn to_normalized(&self, inst: &HetNetInstance) -> Vec<f64> {
        let mut z = Vec::with_capacity(PER_USER * inst.users());
        for i in 0..inst.users() {
            let d = inst.data_bits[i];
            let sbs_off = self.d_off[i][SBS] / d;
            let fwd = self.d_fwd[i] / d;
            let mut u = [0.0; PER_USER];
            u[X_SBS] = self.x[i][SBS];
            u[X_MBS] = self.x[i][MBS];
            u[LOCAL_SHARE] = 1.0 - sbs_off;
            u[SBS_SHARE] = sbs_off - fwd;
            u[FWD_SHARE] = fwd;
            u[MBS_SHARE] = self.d_off[i][MBS] / d;
            u[F_LOCAL] = self.f_local[i] / inst.f_local_max[i];
            u[F_SBS] = self.f_sbs[i] / inst.f_sbs_total;
            u[POWER] = self.power[i] / inst.p_max[i];
            z.extend_from_slice(&u);
        }
        z
    }

    /// Users per base station under this association.
    pub fn load(&self) -> [f64; 2] {
        load_of(self.x.iter().copied())
    }

    /// Largest violation of the model constraints. The SBS budget part is relative to its total.
    pub fn violation(&self, inst: &HetNetInstance) -> f64 {
        let mut worst: f64 = 0.0;
        let mut budget = 0.0;
        for i in 0..inst.users() {
            let d = inst.data_bits[i];
            let [x1, x2] = self.x[i];
            worst = worst
                .max((x1 + x2 - 1.0).abs())
                .max(-x1)
                .max(-x2)
                .max(x1 - 1.0)
                .max(x2 - 1.0);
            worst = worst
                .max((-self.f_local[i]) / inst.f_local_max[i])
                .max((self.f_local[i] - inst.f_local_max[i]) / inst.f_local_max[i]);
            worst = worst.max(-self.f_sbs[i] / inst.f_sbs_total);
            worst = worst
                .max(-self.power[i] / inst.p_max[i])
                .max((self.power[i] - inst.p_max[i]) / inst.p_max[i]);
            for m in 0..2 {
                worst = worst.max(-self.d_off[i][m] / d).max((self.d_off[i][m] - d) / d);
            }
            worst = worst
                .max(-self.d_fwd[i] / d)
                .max((self.d_fwd[i] - self.d_off[i][SBS]) / d);
            budget += x1 * self.f_sbs[i];
        }
        worst.max((budget - inst.f_sbs_total) / inst.f_sbs_total)
    }

    /// `max |x - round(x)|` over all association entries.
    pub fn binary_gap(&self) -> f64 {
        self.x
            .iter()
            .flatten()
            .map(|v| (v - v.round()).abs())
            .fold(0.0, f64::max)
    }
}

pub fn load_of(rows: impl Iterator<Item = [f64; 2]>) -> [f64; 2] {
    rows.fold([0.0, 0.0], |acc, r| [acc[0] + r[0], acc[1] + r[1]])
}

/// Load sums of a normalised vector.
pub fn load_normalized(z: &[f64]) -> [f64; 2] {
    load_of(z.chunks_exact(PER_USER).map(|u| [u[X_SBS], u[X_MBS]]))
}

/// Load shares used by the cost model: never below one user.
pub fn effective_load(load: [f64; 2]) -> [f64; 2] {
    [load[0].max(1.0), load[1].max(1.0)]
}

/// `B_m / (sum_n x_{n,m}) * ln(1 + P H / sigma^2)`.
pub fn uplink_rate(inst: &HetNetInstance, n: usize, m: usize, x: &[[f64; 2]], power: f64) -> Result<f64> {
    let load: f64 = x.iter().map(|r| r[m]).sum();
    if !(load > 0.0) {
        return Err(domain(format!("base station {m} has no associated load")));
    }
    if power < 0.0 {
        return Err(domain(format!("negative transmit power {power}")));
    }
    let snr = power * inst.channel_gain[n][m] / inst.noise_power;
    Ok(inst.bandwidth[m] / load * snr.ln_1p())
}

/// Weighted latency plus energy of every user, evaluated term by term from the model.
pub fn total_cost(inst: &HetNetInstance, vars: &AssocVars) -> Result<f64> {
    let (w1, w2) = (inst.w1, inst.w2);
    let mut total = 0.0;
    for n in 0..inst.users() {
        let d = inst.data_bits[n];
        let c = inst.cycles_per_bit[n];
        let fl = vars.f_local[n];
        let p = vars.power[n];
        let mut latency = 0.0;
        let mut energy = 0.0;
        for m in 0..2 {
            let x = vars.x[n][m];
            if x == 0.0 {
                continue;
            }
            let local_bits = d - vars.d_off[n][m];
            if local_bits > 0.0 {
                if !(fl > 0.0) {
                    return Err(domain("local frequency must be positive"));
                }
                latency += x * local_bits * c / fl;
                energy += x * inst.k_local * local_bits * c * fl * fl;
            }
            let up = vars.d_off[n][m];
            if up > 0.0 {
                let rate = uplink_rate(inst, n, m, &vars.x, p)?;
                latency += x * up / rate;
                energy += x * p * up / rate;
            }
        }
        let x1 = vars.x[n][SBS];
        if x1 != 0.0 {
            let on_sbs = vars.d_off[n][SBS] - vars.d_fwd[n];
            let fwd = vars.d_fwd[n];
            if on_sbs > 0.0 {
                let fs = vars.f_sbs[n];
                if !(fs > 0.0) {
                    return Err(domain("SBS frequency must be positive"));
                }
                latency += x1 * on_sbs * c / fs;
                energy += x1 * inst.k_sbs * on_sbs * c * fs * fs;
            }
            latency += x1 * (fwd / inst.wired_rate + fwd * c / inst.f_mbs);
            energy += x1 * (inst.wired_power * fwd / inst.wired_rate + inst.k_mbs * fwd * c * inst.f_mbs * inst.f_mbs);
        }
        let x2 = vars.x[n][MBS];
        let direct = vars.d_off[n][MBS];
        latency += x2 * direct * c / inst.f_mbs;
        energy += x2 * inst.k_mbs * direct * c * inst.f_mbs * inst.f_mbs;
        total += w1 * latency + w2 * energy;
    }
    Ok(total)
}

/// Per-user cost components at a normalised point with the given load shares.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UserComponents {
    /// Local computation.
    pub local: f64,
    /// Uplink transmission.
    pub uplink: f64,
    /// SBS computation.
    pub sbs: f64,
    /// Forwarded and MBS computation.
    pub mbs: f64,
    /// Per-bit constant of the forwarded path.
    pub forward_const: f64,
}

impl UserComponents {
    pub fn total(&self) -> f64 {
        self.local + self.uplink + self.sbs + self.mbs
    }
}

pub fn user_components(inst: &HetNetInstance, n: usize, u: &[f64], load: [f64; 2]) -> UserComponents {
    let (x1, x2) = (u[X_SBS], u[X_MBS]);
    let (kl, _) = inst.local_kernel(n, u[F_LOCAL]);
    let (ks, _) = inst.sbs_kernel(n, u[F_SBS]);
    let (up1, _) = inst.uplink_kernel(n, SBS, u[POWER]);
    let (up2, _) = inst.uplink_kernel(n, MBS, u[POWER]);
    let d = inst.data_bits[n];
    let fwd_const = inst.forward_cost_per_bit(n);
    UserComponents {
        local: x1 * u[LOCAL_SHARE] * kl + x2 * (1.0 - u[MBS_SHARE]) * kl,
        uplink: x1 * (u[SBS_SHARE] + u[FWD_SHARE]) * up1 * load[SBS] + x2 * u[MBS_SHARE] * up2 * load[MBS],
        sbs: x1 * u[SBS_SHARE] * ks,
        mbs: x1 * u[FWD_SHARE] * d * fwd_const + x2 * u[MBS_SHARE] * d * inst.mbs_compute_per_bit(n),
        forward_const: fwd_const,
    }
}

/// Component split of the cost at physical variables, using their own load.
pub fn q_components(inst: &HetNetInstance, vars: &AssocVars) -> Result<Vec<UserComponents>> {
    let load = vars.load();
    if load
        .iter()
        .zip(
            vars.x
                .iter()
                .fold([false; 2], |acc, r| [acc[0] || r[0] > 0.0, acc[1] || r[1] > 0.0]),
        )
        .any(|(l, used)| used && !(*l > 0.0))
    {
        return Err(domain("a base station with users has zero load"));
    }
    let z = vars.to_normalized(inst);
    Ok(z.chunks_exact(PER_USER)
        .enumerate()
        .map(|(n, u)| user_components(inst, n, u, load))
        .collect())
}

/// Cost of a normalised point with explicit load shares.
pub fn cost_with_load(inst: &HetNetInstance, z: &[f64], load: [f64; 2]) -> f64 {
    z.chunks_exact(PER_USER)
        .enumerate()
        .map(|(n, u)| user_components(inst, n, u, load).total())
        .sum()
}

/// Gradient of [`cost_with_load`] in the normalised coordinates. With `load_from_x`
/// the load is the point's own floored load and its dependence on `x` is included.
pub fn cost_gradient(inst: &HetNetInstance, z: &[f64], load: [f64; 2], load_from_x: bool, grad: &mut [f64]) {
    grad.fill(0.0);
    let mut uplink_sum = [0.0; 2];
    for (n, (u, g)) in z
        .chunks_exact(PER_USER)
        .zip(grad.chunks_exact_mut(PER_USER))
        .enumerate()
    {
        let (x1, x2) = (u[X_SBS], u[X_MBS]);
        let (kl, dkl) = inst.local_kernel(n, u[F_LOCAL]);
        let (ks, dks) = inst.sbs_kernel(n, u[F_SBS]);
        let (up1, dup1) = inst.uplink_kernel(n, SBS, u[POWER]);
        let (up2, dup2) = inst.uplink_kernel(n, MBS, u[POWER]);
        let d = inst.data_bits[n];
        let fwd = d * inst.forward_cost_per_bit(n);
        let mbs = d * inst.mbs_compute_per_bit(n);
        let (l, s, w, o) = (u[LOCAL_SHARE], u[SBS_SHARE], u[FWD_SHARE], u[MBS_SHARE]);
        uplink_sum[SBS] += x1 * (s + w) * up1;
        uplink_sum[MBS] += x2 * o * up2;
        g[X_SBS] = l * kl + (s + w) * up1 * load[SBS] + s * ks + w * fwd;
        g[X_MBS] = (1.0 - o) * kl + o * up2 * load[MBS] + o * mbs;
        g[LOCAL_SHARE] = x1 * kl;
        g[SBS_SHARE] = x1 * up1 * load[SBS] + x1 * ks;
        g[FWD_SHARE] = x1 * up1 * load[SBS] + x1 * fwd;
        g[MBS_SHARE] = -x2 * kl + x2 * up2 * load[MBS] + x2 * mbs;
        g[F_LOCAL] = (x1 * l + x2 * (1.0 - o)) * dkl;
        g[F_SBS] = x1 * s * dks;
        g[POWER] = x1 * (s + w) * dup1 * load[SBS] + x2 * o * dup2 * load[MBS];
    }
    if load_from_x {
        let raw = load_normalized(z);
        for g in grad.chunks_exact_mut(PER_USER) {
            if raw[SBS] > 1.0 {
                g[X_SBS] += uplink_sum[SBS];
            }
            if raw[MBS] > 1.0 {
                g[X_MBS] += uplink_sum[MBS];
            }
        }
    }
}

/// Relaxed cost with the point's own (floored) load plus the exact binarity penalty
/// `tau * sum x (1 - x)`. Both solver families report this quantity.
pub fn penalized_cost(inst: &HetNetInstance, z: &[f64]) -> f64 {
    let load = effective_load(load_normalized(z));
    let penalty: f64 = z
        .chunks_exact(PER_USER)
        .flat_map(|u| [u[X_SBS], u[X_MBS]])
        .map(|x| x * (1.0 - x))
        .sum();
    cost_with_load(inst, z, load) + inst.tau * penalty
}

/// Linearised penalty `-tau * H(x | x_prev)` and its gradient in `x`.
///
/// `H(x | x_prev) = sum [x_prev (x_prev - 1) + (2 x_prev - 1)(x - x_prev)]` is the
/// tangent of the convex `sum x (x - 1)`, so `H <= sum x (x - 1)` everywhere.
pub fn penalty_linearized(x: &[[f64; 2]], x_prev: &[[f64; 2]], tau: f64) -> (f64, Vec<[f64; 2]>) {
    let mut h = 0.0;
    let mut grad = Vec::with_capacity(x.len());
    for (row, prev) in x.iter().zip(x_prev) {
        let mut g = [0.0; 2];
        for m in 0..2 {
            let p = prev[m];
            h += p * (p - 1.0) + (2.0 * p - 1.0) * (row[m] - p);
            g[m] = -tau * (2.0 * p - 1.0);
        }
        grad.push(g);
    }
    (-tau * h, grad)
}

/// Association rows of a normalised vector.
pub fn assoc_rows(z: &[f64]) -> Vec<[f64; 2]> {
    z.chunks_exact(PER_USER).map(|u| [u[X_SBS], u[X_MBS]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_instance(users: usize) -> HetNetInstance {
        HetNetInstance {
            bandwidth: [5e6, 10e6],
            channel_gain: (0..users)
                .map(|i| [1e-12 * (1.0 + i as f64), 5e-13 * (2.0 + i as f64)])
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

    #[test]
    fn rate_examples() {
        let mut inst = small_instance(2);
        inst.channel_gain[0][SBS] = (std::f64::consts::E - 1.0) * inst.noise_power / 0.1;
        let one = [[1.0, 0.0], [0.0, 1.0]];
        let r = uplink_rate(&inst, 0, SBS, &one, 0.1).unwrap();
        assert!((r - inst.bandwidth[SBS]).abs() <= 1e-9 * r);
        assert_eq!(uplink_rate(&inst, 0, SBS, &one, 0.0).unwrap(), 0.0);
        let both = [[1.0, 0.0], [1.0, 0.0]];
        let shared = uplink_rate(&inst, 0, SBS, &both, 0.1).unwrap();
        assert!((shared - r / 2.0).abs() <= 1e-9 * r);
        assert!(uplink_rate(&inst, 0, MBS, &both, 0.1).is_err());
    }

    fn binary_vars(inst: &HetNetInstance, on_sbs: &[bool]) -> AssocVars {
        let n = inst.users();
        AssocVars {
            x: on_sbs
                .iter()
                .map(|s| if *s { [1.0, 0.0] } else { [0.0, 1.0] })
                .collect(),
            f_local: vec![0.8e9; n],
            f_sbs: vec![3e9; n],
            power: vec![0.05; n],
            d_off: (0..n)
                .map(|i| [0.5 * inst.data_bits[i], 0.4 * inst.data_bits[i]])
                .collect(),
            d_fwd: (0..n).map(|i| 0.2 * inst.data_bits[i]).collect(),
        }
    }

    #[test]
    fn all_local_cost() {
        let inst = small_instance(2);
        let mut v = binary_vars(&inst, &[true, false]);
        v.d_off = vec![[0.0, 0.0]; 2];
        v.d_fwd = vec![0.0; 2];
        let expected: f64 = (0..2)
            .map(|n| {
                let c = inst.data_bits[n] * inst.cycles_per_bit[n];
                let f = v.f_local[n];
                inst.w1 * c / f + inst.w2 * inst.k_local * c * f * f
            })
            .sum();
        let got = total_cost(&inst, &v).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn hand_evaluated_single_user() {
        // Spreadsheet-style recomputation of every displayed latency and energy term.
        let inst = small_instance(1);
        let v = binary_vars(&inst, &[true]);
        let (d, c) = (inst.data_bits[0], inst.cycles_per_bit[0]);
        let d1 = v.d_off[0][0];
        let dp = v.d_fwd[0];
        let rate = inst.bandwidth[0] * (1.0 + v.power[0] * inst.channel_gain[0][0] / inst.noise_power).ln();
        let t_local = (d - d1) * c / v.f_local[0];
        let e_local = inst.k_local * (d - d1) * c * v.f_local[0].powi(2);
        let t_sbs = d1 / rate + (d1 - dp) * c / v.f_sbs[0] + dp / inst.wired_rate + dp * c / inst.f_mbs;
        let e_sbs = v.power[0] * d1 / rate
            + inst.k_sbs * (d1 - dp) * c * v.f_sbs[0].powi(2)
            + inst.wired_power * dp / inst.wired_rate
            + inst.k_mbs * dp * c * inst.f_mbs.powi(2);
        let expected = inst.w1 * (t_local + t_sbs) + inst.w2 * (e_local + e_sbs);
        let got = total_cost(&inst, &v).unwrap();
        assert!((got - expected).abs() <= 1e-12 * expected);
    }

    #[test]
    fn components_sum_to_cost() {
        let inst = small_instance(3);
        let v = binary_vars(&inst, &[true, false, true]);
        let comps = q_components(&inst, &v).unwrap();
        let sum: f64 = comps.iter().map(|c| c.total()).sum();
        let cost = total_cost(&inst, &v).unwrap();
        assert!((sum - cost).abs() <= 1e-9 * cost, "{sum} vs {cost}");
    }

    #[test]
    fn component_dropouts() {
        let inst = small_instance(2);
        let mut v = binary_vars(&inst, &[false, false]);
        let comps = q_components(&inst, &v).unwrap();
        assert_eq!(comps[0].sbs, 0.0);
        v.d_off = vec![[0.0, 0.0]; 2];
        v.d_fwd = vec![0.0; 2];
        let comps = q_components(&inst, &v).unwrap();
        for (n, c) in comps.iter().enumerate() {
            assert_eq!((c.uplink, c.sbs, c.mbs), (0.0, 0.0, 0.0));
            let (kl, _) = inst.local_kernel(n, v.f_local[n] / inst.f_local_max[n]);
            assert!((c.local - kl).abs() <= 1e-12 * kl);
        }
        // no forwarding: the SBS path keeps only uplink and SBS compute
        let mut v = binary_vars(&inst, &[true, true]);
        v.d_fwd = vec![0.0; 2];
        let comps = q_components(&inst, &v).unwrap();
        assert_eq!(comps[0].mbs, 0.0);
    }

    #[test]
    fn normalized_round_trip() {
        let inst = small_instance(3);
        let v = binary_vars(&inst, &[true, false, true]);
        let back = AssocVars::from_normalized(&inst, &v.to_normalized(&inst));
        for i in 0..3 {
            assert!((back.d_off[i][0] - v.d_off[i][0]).abs() <= 1e-6);
            assert!((back.d_fwd[i] - v.d_fwd[i]).abs() <= 1e-6);
            assert!((back.f_sbs[i] - v.f_sbs[i]).abs() <= 1e-3);
        }
    }

    #[test]
    fn penalty_examples() {
        let tau = 7.0;
        let bin = vec![[1.0, 0.0], [0.0, 1.0]];
        let (v, _) = penalty_linearized(&bin, &bin, tau);
        assert_eq!(v, 0.0);
        let half = vec![[0.5, 0.5]];
        let (v, g) = penalty_linearized(&[[0.3, 0.7]], &half, tau);
        assert!((v - (-tau * -0.5)).abs() < 1e-15);
        assert_eq!(g, vec![[0.0, 0.0]]);
    }

    #[test]
    fn cost_gradient_matches_differences() {
        let inst = small_instance(3);
        let z: Vec<f64> = (0..3)
            .flat_map(|n| {
                let a = 0.2 + 0.3 * n as f64;
                [a, 1.0 - a, 0.3, 0.5, 0.2, 0.4, 0.7, 0.05 + 0.1 * n as f64, 0.6]
            })
            .collect();
        let dynamic = |z: &[f64]| cost_with_load(&inst, z, effective_load(load_normalized(z)));
        let mut g = vec![0.0; z.len()];
        cost_gradient(&inst, &z, effective_load(load_normalized(&z)), true, &mut g);
        for i in 0..z.len() {
            let h = 1e-6;
            let mut p = z.clone();
            p[i] += h;
            let mut m = z.clone();
            m[i] -= h;
            let fd = (dynamic(&p) - dynamic(&m)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1e-3),
                "coord {i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn kernel_derivatives_match_differences() {
        let inst = small_instance(1);
        for (f, kernel) in [
            (0.4, &(|h| inst.local_kernel(0, h)) as &dyn Fn(f64) -> (f64, f64)),
            (0.1, &|h| inst.sbs_kernel(0, h)),
            (0.3, &|h| inst.uplink_kernel(0, SBS, h)),
            (0.9, &|h| inst.uplink_kernel(0, MBS, h)),
        ] {
            let h = 1e-6 * f;
            let fd = (kernel(f + h).0 - kernel(f - h).0) / (2.0 * h);
            let an = kernel(f).1;
            assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-12), "{fd} vs {an}");
        }
    }
}
