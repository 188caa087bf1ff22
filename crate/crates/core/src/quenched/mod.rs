//! Quenched partition functions at a fixed realisation of the medium.
//!
//! Discrete time has three independent routes (exhaustive enumeration, a transfer DP on the
//! lattice and the renewal expansion over collision times); continuous time is evaluated by
//! uniformization (`ct`) and the modified renewal variants by Volterra recursions (`volterra`).

pub(crate) mod ct;
pub mod volterra;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::disorder::{sample_ct, sample_ct_with, sample_discrete, sample_discrete_with, DisorderPath};
use crate::error::{invalid, PinError};
use crate::kernels::{green_ct, pair_green_value, KernelTable};
use crate::rng::{stream, Module};
use crate::stats::McEstimate;
use crate::{Mode, Result};

pub use ct::ct_partition;
pub use volterra::{ct_modified_partitions, volterra_solve, ModifiedPartitions, VolterraSolution};

/// Largest number of paths `enumerate_partition` will visit.
pub const ENUMERATION_LIMIT: f64 = 1e7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelParams {
    pub mode: Mode,
    pub d: usize,
    pub beta: f64,
    /// Jump rate of the medium (continuous time; 1 by convention in discrete time).
    pub rho: f64,
    /// `(e^beta - 1) G^{X-Y}` in discrete time, `beta G_{1+rho}` in continuous time;
    /// `None` when the Green function diverges.
    pub z: Option<f64>,
}

impl ModelParams {
    pub fn discrete(d: usize, beta: f64) -> Result<Self> {
        if d == 0 || !beta.is_finite() {
            return Err(invalid(format!("need d >= 1 and finite beta (d={d}, beta={beta})")));
        }
        let z = if d >= 3 { Some(beta.exp_m1() * pair_green_value(d)?) } else { None };
        Ok(Self { mode: Mode::Discrete, d, beta, rho: 1.0, z })
    }

    /// Discrete parameters at a given annealed-normalised coupling `z`.
    pub fn from_z(d: usize, z: f64) -> Result<Self> {
        if d < 3 || !(z >= 0.0) {
            return Err(invalid(format!("coupling z needs d >= 3 and z >= 0 (d={d}, z={z})")));
        }
        let g = pair_green_value(d)?;
        Ok(Self { mode: Mode::Discrete, d, beta: (z / g).ln_1p(), rho: 1.0, z: Some(z) })
    }

    pub fn continuous(d: usize, beta: f64, rho: f64) -> Result<Self> {
        if d == 0 || !beta.is_finite() || !(rho >= 0.0) {
            return Err(invalid(format!("need d >= 1, finite beta, rho >= 0 (beta={beta}, rho={rho})")));
        }
        let z = if d >= 3 { Some(beta * ct_green(d, rho)?) } else { None };
        Ok(Self { mode: Mode::Continuous, d, beta, rho, z })
    }

    /// Continuous parameters at a given `beta_bar = beta G_{1+rho}`.
    pub fn from_beta_bar(d: usize, rho: f64, beta_bar: f64) -> Result<Self> {
        if d < 3 || !(rho >= 0.0) {
            return Err(invalid(format!("beta_bar needs d >= 3 and rho >= 0 (d={d}, rho={rho})")));
        }
        let g = ct_green(d, rho)?;
        Ok(Self { mode: Mode::Continuous, d, beta: beta_bar / g, rho, z: Some(beta_bar) })
    }

    /// `z' = e^beta - 1`.
    pub fn z_prime(&self) -> f64 {
        self.beta.exp_m1()
    }

    pub fn beta_bar(&self) -> Option<f64> {
        match self.mode {
            Mode::Continuous => self.z,
            Mode::Discrete => None,
        }
    }
}

/// `G_{1+rho}`, checked by two routes.
pub(crate) fn ct_green(d: usize, rho: f64) -> Result<f64> {
    green_ct(d, rho, 1e-7)?.g_ct.and_then(|g| g.value()).ok_or(PinError::Recurrent(d))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Free,
    Pin,
    Pin1,
    Pin2,
    Z1,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Free => "free",
            Variant::Pin => "pin",
            Variant::Pin1 => "pin1",
            Variant::Pin2 => "pin2",
            Variant::Z1 => "z1",
        }
    }
}

/// Log-domain partition value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartitionValue {
    pub log_value: f64,
    pub variant: Variant,
    pub window: (f64, f64),
    pub params: ModelParams,
    /// Relative truncation or discretisation bound; 0 for exact routes.
    pub error_bound: f64,
}

impl PartitionValue {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

/// One simulated trajectory of `X` with its collision local time against the medium.
#[derive(Debug, Clone, Serialize)]
pub struct CollisionSample {
    pub x_path: DisorderPath,
    pub collision_value: f64,
}

fn check_discrete(params: &ModelParams, path: &DisorderPath, n: usize) -> Result<()> {
    if params.mode != Mode::Discrete || path.mode != Mode::Discrete {
        return Err(invalid("discrete route called with continuous parameters or path"));
    }
    if path.d != params.d {
        return Err(invalid(format!("path dimension {} differs from d={}", path.d, params.d)));
    }
    if n > path.len() {
        return Err(invalid(format!("horizon {n} exceeds path length {}", path.len())));
    }
    Ok(())
}

fn log_sum_exp(terms: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = terms.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Exhaustive `E^X[e^{beta L_N}]` (optionally on `X_N = Y_N`) over all `(2d)^N` paths.
///
/// Paths are tallied by their collision count, so the result is a finite exponential sum
/// with integer weights.
pub fn enumerate_partition(params: &ModelParams, path: &DisorderPath, n: usize, constrained: bool) -> Result<PartitionValue> {
    check_discrete(params, path, n)?;
    let d = params.d;
    let paths = ((2 * d) as f64).powi(n as i32);
    if paths > ENUMERATION_LIMIT {
        return Err(PinError::TooLarge(format!("(2d)^N = {paths:e} paths exceeds {ENUMERATION_LIMIT:e}")));
    }
    let ys = path.positions();
    let mut counts = vec![0u64; n + 1];
    let mut x = vec![0i32; d];
    fn walk(step: usize, n: usize, hits: usize, x: &mut Vec<i32>, ys: &[Vec<i32>], constrained: bool, counts: &mut [u64]) {
        if step == n {
            if !constrained || x[..] == ys[n][..] {
                counts[hits] += 1;
            }
            return;
        }
        for axis in 0..x.len() {
            for delta in [1, -1] {
                x[axis] += delta;
                let hit = (x[..] == ys[step + 1][..]) as usize;
                walk(step + 1, n, hits + hit, x, ys, constrained, counts);
                x[axis] -= delta;
            }
        }
    }
    walk(0, n, 0, &mut x, &ys, constrained, &mut counts);
    let log_paths = n as f64 * ((2 * d) as f64).ln();
    let log_value = log_sum_exp(
        counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(k, &c)| (c as f64).ln() + params.beta * k as f64),
    ) - log_paths;
    let variant = if constrained { Variant::Pin } else { Variant::Free };
    Ok(PartitionValue { log_value, variant, window: (0.0, n as f64), params: *params, error_bound: 0.0 })
}

// e^{300}
const RESCALE_HI: f64 = 1.942_426_395_241_255_8e130;
const RESCALE_LO: f64 = 1.0 / RESCALE_HI;

/// Transfer DP `u_{n+1}(x) = e^{beta 1{x = Y_{n+1}}} (1/2d) sum_{|e|=1} u_n(x - e)` on `[-N, N]^d`.
pub fn field_dp_partition(params: &ModelParams, path: &DisorderPath, n: usize, constrained: bool) -> Result<PartitionValue> {
    check_discrete(params, path, n)?;
    let d = params.d;
    let bx = ct::LatticeBox::new(d, n.max(1))?;
    let ys = path.positions();
    let mut u = vec![0.0; bx.len];
    let mut next = vec![0.0; bx.len];
    u[bx.index(&vec![0; d]).expect("origin")] = 1.0;
    let weight = params.beta.exp();
    let inv = 1.0 / (2 * d) as f64;
    let mut log_scale = 0.0;
    for y in &ys[1..=n] {
        bx.neighbour_sum(&u, &mut next, false);
        next.iter_mut().for_each(|v| *v *= inv);
        next[bx.index(y).expect("medium stays within N of the origin")] *= weight;
        std::mem::swap(&mut u, &mut next);
        let m = u.iter().copied().fold(0.0, f64::max);
        if m > RESCALE_HI || m < RESCALE_LO {
            u.iter_mut().for_each(|v| *v /= m);
            log_scale += m.ln();
        }
    }
    let raw = if constrained { u[bx.index(&ys[n]).expect("endpoint")] } else { crate::stats::pairwise_sum(&u) };
    let variant = if constrained { Variant::Pin } else { Variant::Free };
    Ok(PartitionValue { log_value: raw.ln() + log_scale, variant, window: (0.0, n as f64), params: *params, error_bound: 0.0 })
}

/// Renewal weights `q_j = sum_{i<j} q_i z' p_{j-i}(Y_j - Y_i)`, `q_0 = 1`, with a common log scale.
pub(crate) fn renewal_weights(z_prime: f64, path: &DisorderPath, n: usize, table: &KernelTable) -> Result<(Vec<f64>, f64)> {
    if n > table.n_max() {
        return Err(invalid(format!("kernel table n_max {} does not cover N={n}", table.n_max())));
    }
    let ys = path.positions();
    let d = path.d;
    let mut q = vec![0.0; n + 1];
    q[0] = 1.0;
    let mut log_scale = 0.0;
    let mut diff = vec![0i32; d];
    for j in 1..=n {
        let mut acc = 0.0;
        for i in 0..j {
            if q[i] == 0.0 {
                continue;
            }
            for a in 0..d {
                diff[a] = ys[j][a] - ys[i][a];
            }
            acc += q[i] * table.prob(j - i, &diff);
        }
        q[j] = z_prime * acc;
        let m = q[j].abs();
        if m > RESCALE_HI {
            q[..=j].iter_mut().for_each(|v| *v /= m);
            log_scale += m.ln();
        }
    }
    Ok((q, log_scale))
}

/// Renewal representation: free `1 + sum_{j>=1} q_j`, constrained `q_N`.
///
/// The free value equals `field_dp_partition`; the constrained one is `z'/(1+z')` times it.
pub fn renewal_dp_partition(params: &ModelParams, path: &DisorderPath, n: usize, constrained: bool, table: &KernelTable) -> Result<PartitionValue> {
    check_discrete(params, path, n)?;
    if table.d() != params.d {
        return Err(invalid("kernel table dimension differs from d"));
    }
    let (q, log_scale) = renewal_weights(params.z_prime(), path, n, table)?;
    let raw = if constrained { q[n] } else { crate::stats::pairwise_sum(&q) };
    let variant = if constrained { Variant::Pin } else { Variant::Free };
    let log_value = if raw > 0.0 {
        raw.ln() + log_scale
    } else if raw == 0.0 {
        f64::NEG_INFINITY
    } else {
        return Err(PinError::Numerical(format!("renewal expansion is negative ({raw:e}) for beta < 0")));
    };
    Ok(PartitionValue { log_value, variant, window: (0.0, n as f64), params: *params, error_bound: 0.0 })
}

/// `(1/N) log Z^{beta,pin}` for one medium realisation, by the field DP or uniformization.
fn pinned_rate(params: &ModelParams, horizon: f64, seed: u64, replica: u64, eps: f64) -> Result<f64> {
    match params.mode {
        Mode::Discrete => {
            let n = horizon as usize;
            let y = sample_discrete(params.d, n, seed, replica);
            Ok(field_dp_partition(params, &y, n, true)?.log_value / n as f64)
        }
        Mode::Continuous => {
            let y = sample_ct(params.d, params.rho, horizon, seed, replica)?;
            Ok(ct_partition(params, &y, horizon, eps, true)?.log_value / horizon)
        }
    }
}

/// Mean and standard error of `(1/N) log Z^{beta,pin}_{N,Y}` over independent media.
///
/// Replica `r` uses the medium stream `(seed, r)`, so results do not depend on the thread count.
pub fn free_energy_estimate(params: &ModelParams, horizon: f64, replicas: usize, seed: u64) -> Result<McEstimate> {
    if !(horizon >= 1.0) || replicas == 0 {
        return Err(invalid(format!("need horizon >= 1 and replicas >= 1 (horizon={horizon})")));
    }
    if params.mode == Mode::Discrete && horizon.fract() != 0.0 {
        return Err(invalid("discrete horizon must be an integer"));
    }
    let samples: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| pinned_rate(params, horizon, seed, r, 1e-8))
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&samples, seed))
}

/// Estimates at `N` and `2N` from the same seed, exposing the super-additive growth of `E log Z^pin`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DoublingReport {
    pub horizon: f64,
    pub single: McEstimate,
    pub double: McEstimate,
    /// `E log Z_{2N} - 2 E log Z_N`, which is nonnegative in expectation.
    pub excess: f64,
    pub excess_stderr: f64,
}

pub fn free_energy_doubling(params: &ModelParams, horizon: f64, replicas: usize, seed: u64) -> Result<DoublingReport> {
    let single = free_energy_estimate(params, horizon, replicas, seed)?;
    let double = free_energy_estimate(params, 2.0 * horizon, replicas, seed)?;
    let excess = 2.0 * horizon * (double.mean - single.mean);
    let excess_stderr = 2.0 * horizon * (double.stderr.powi(2) + single.stderr.powi(2)).sqrt();
    Ok(DoublingReport { horizon, single, double, excess, excess_stderr })
}

/// Simulated collision local times.
#[derive(Debug, Clone, Serialize)]
pub struct CollisionReport {
    pub mode: Mode,
    pub d: usize,
    pub rho: f64,
    pub horizon: f64,
    pub values: Vec<f64>,
    pub estimate: McEstimate,
    /// In `d = 2`: mean of `L / log(horizon)` and its limit `1/(pi(1+rho))`.
    pub log_ratio: Option<(McEstimate, f64)>,
}

/// Simulate `X` against a fresh medium and record `L`.
pub fn collision_sample<R: Rng>(rng: &mut R, mode: Mode, d: usize, rho: f64, horizon: f64) -> Result<(DisorderPath, CollisionSample)> {
    match mode {
        Mode::Discrete => {
            let n = horizon as usize;
            let y = sample_discrete_with(rng, d, n);
            let x = sample_discrete_with(rng, d, n);
            let (xs, ys) = (x.positions(), y.positions());
            let hits = (1..=n).filter(|&k| xs[k] == ys[k]).count();
            Ok((y, CollisionSample { x_path: x, collision_value: hits as f64 }))
        }
        Mode::Continuous => {
            let y = sample_ct_with(rng, d, rho, horizon)?;
            let x = sample_ct_with(rng, d, 1.0, horizon)?;
            let value = ct_overlap(&x, &y, horizon);
            Ok((y, CollisionSample { x_path: x, collision_value: value }))
        }
    }
}

/// Time in `[0, t]` that two right-continuous jump paths spend at the same site.
fn ct_overlap(x: &DisorderPath, y: &DisorderPath, t: f64) -> f64 {
    let d = x.d;
    let mut diff = vec![0i32; d];
    let (mut i, mut j) = (0, 0);
    let mut now = 0.0;
    let mut total = 0.0;
    loop {
        let tx = x.times.get(i).copied().unwrap_or(f64::INFINITY);
        let ty = y.times.get(j).copied().unwrap_or(f64::INFINITY);
        let next = tx.min(ty).min(t);
        if diff.iter().all(|&v| v == 0) {
            total += next - now;
        }
        if next >= t {
            return total;
        }
        now = next;
        if tx <= ty {
            let s = x.steps[i];
            diff[(s / 2) as usize] += if s % 2 == 0 { 1 } else { -1 };
            i += 1;
        } else {
            let s = y.steps[j];
            diff[(s / 2) as usize] -= if s % 2 == 0 { 1 } else { -1 };
            j += 1;
        }
    }
}

/// Direct simulation of the collision local time over `replicas` independent pairs.
pub fn collision_mc(mode: Mode, d: usize, rho: f64, horizon: f64, replicas: usize, seed: u64) -> Result<CollisionReport> {
    if d == 0 || replicas == 0 || !(horizon > 0.0) {
        return Err(invalid("collision_mc needs d >= 1, replicas >= 1, horizon > 0"));
    }
    if mode == Mode::Discrete && horizon.fract() != 0.0 {
        return Err(invalid("discrete horizon must be an integer"));
    }
    let values: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, Module::Collision, r);
            collision_sample(&mut rng, mode, d, rho, horizon).map(|(_, s)| s.collision_value)
        })
        .collect::<Result<_>>()?;
    let estimate = McEstimate::from_samples(&values, seed);
    let log_ratio = (d == 2 && horizon > 1.0).then(|| {
        let l = horizon.ln();
        let scaled: Vec<f64> = values.iter().map(|v| v / l).collect();
        let rate = if mode == Mode::Continuous { 1.0 + rho } else { 1.0 };
        (McEstimate::from_samples(&scaled, seed), 1.0 / (std::f64::consts::PI * rate))
    });
    Ok(CollisionReport { mode, d, rho, horizon, values, estimate, log_ratio })
}
