//! Renewal-type Volterra equations for the continuous-time partition functions.
//!
//! With `kappa(s, y) = beta p_s(y)` (the product `K_{1+rho}(s) w(beta_bar, s, y)`) and
//! `K(s) = p_{(1+rho)s}(0) / G_{1+rho}`:
//!
//! ```text
//! pin1(t) = K(t) + int_0^t pin1(s) kappa(t - s, Y_t - Y_s) ds
//! pin2(t) = K(t) + int_0^t pin1(s) K(t - s) ds
//! z1(t)   = 1 + int_0^t pin1(s) ds
//! zpin(t) = p_t(Y_t) + beta int_0^t zpin(s) p_{t-s}(Y_t - Y_s) ds,   z(t) = 1 + beta int_0^t zpin
//! ```
//!
//! The last pair is the plain partition function and serves as a cross-check against
//! uniformization. Integrals use the trapezoid rule on a uniform grid refined by the jump
//! times of `Y`; solutions jump at those times, so each node carries a left limit and a value.

use std::collections::HashMap;

use serde::Serialize;

use super::{ct_green, ModelParams, PartitionValue, Variant};
use crate::disorder::DisorderPath;
use crate::error::{invalid, PinError};
use crate::special::scaled_bessel_row;
use crate::{Mode, Result};

/// Grid solution, reported at the uniform nodes `k t / M`.
#[derive(Debug, Clone, Serialize)]
pub struct VolterraSolution {
    pub times: Vec<f64>,
    pub z1: Vec<f64>,
    pub pin1: Vec<f64>,
    pub pin2: Vec<f64>,
    pub z: Vec<f64>,
    pub zpin: Vec<f64>,
}

struct Node {
    time: f64,
    grid: Option<usize>,
    y: Vec<i32>,
    /// Position just before `time`.
    y_left: Vec<i32>,
}

fn build_nodes(path: &DisorderPath, t: f64, m: usize) -> Vec<Node> {
    let dt = t / m as f64;
    let tol = 1e-12 * t;
    let jumps: Vec<f64> = path.times.iter().copied().filter(|&u| u <= t).collect();
    let mut times: Vec<(f64, Option<usize>)> = (0..=m).map(|k| (k as f64 * dt, Some(k))).collect();
    for &u in &jumps {
        let k = (u / dt).round() as usize;
        if (k as f64 * dt - u).abs() > tol {
            times.push((u, None));
        }
    }
    times.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut nodes: Vec<Node> = Vec::with_capacity(times.len());
    let mut pos = vec![0i32; path.d];
    let mut next_jump = 0;
    for (time, grid) in times {
        let y_left = pos.clone();
        while next_jump < jumps.len() && jumps[next_jump] <= time + tol {
            let s = path.steps[next_jump];
            pos[(s / 2) as usize] += if s % 2 == 0 { 1 } else { -1 };
            next_jump += 1;
        }
        nodes.push(Node { time, grid, y: pos.clone(), y_left });
    }
    nodes
}

/// `p_s` rows of the one-dimensional factor walk, cached by lag.
struct KernelCache {
    d: usize,
    rho: f64,
    radius: usize,
    grid_rows: Vec<Vec<f64>>,
    grid_returns: Vec<f64>,
    other: HashMap<u64, (Vec<f64>, f64)>,
}

impl KernelCache {
    fn new(d: usize, rho: f64, radius: usize, dt: f64, m: usize) -> Self {
        let df = d as f64;
        let grid_rows = (0..=m).map(|k| scaled_bessel_row(k as f64 * dt / df, radius)).collect();
        let grid_returns = (0..=m).map(|k| scaled_bessel_row((1.0 + rho) * k as f64 * dt / df, 0)[0].powi(d as i32)).collect();
        Self { d, rho, radius, grid_rows, grid_returns, other: HashMap::new() }
    }

    /// `(row of p^{(1)}_{lag/d}, p_{(1+rho) lag}(0))`.
    fn lag(&mut self, a: &Node, b: &Node) -> (&[f64], f64) {
        if let (Some(i), Some(j)) = (a.grid, b.grid) {
            return (&self.grid_rows[i - j], self.grid_returns[i - j]);
        }
        let lag = (a.time - b.time).max(0.0);
        let (d, rho, radius) = (self.d, self.rho, self.radius);
        let entry = self.other.entry(lag.to_bits()).or_insert_with(|| {
            let df = d as f64;
            (scaled_bessel_row(lag / df, radius), scaled_bessel_row((1.0 + rho) * lag / df, 0)[0].powi(d as i32))
        });
        (&entry.0, entry.1)
    }
}

fn point_prob(row: &[f64], target: &[i32], from: &[i32]) -> f64 {
    target.iter().zip(from).map(|(a, b)| row[(a - b).unsigned_abs() as usize]).product()
}

/// Solve all five equations on the grid with `m` uniform steps.
pub fn volterra_solve(params: &ModelParams, path: &DisorderPath, t: f64, m: usize) -> Result<VolterraSolution> {
    if params.mode != Mode::Continuous || path.mode != Mode::Continuous || path.d != params.d {
        return Err(invalid("volterra_solve needs continuous parameters and a matching continuous path"));
    }
    if !(t > 0.0 && t <= path.horizon) || m == 0 {
        return Err(invalid(format!("need 0 < t <= horizon and m >= 1 (t={t}, m={m})")));
    }
    let g = ct_green(params.d, params.rho)?;
    let beta = params.beta;
    let nodes = build_nodes(path, t, m);
    let reach = nodes.iter().flat_map(|n| n.y.iter().map(|v| v.unsigned_abs())).max().unwrap_or(0) as usize;
    let mut cache = KernelCache::new(params.d, params.rho, 2 * reach, t / m as f64, m);
    let n = nodes.len();
    // (value at the node, left limit) for pin1 and zpin.
    let mut p1 = vec![(0.0, 0.0); n];
    let mut zp = vec![(0.0, 0.0); n];
    let mut pin2 = vec![0.0; n];
    let mut z1 = vec![1.0; n];
    let mut z = vec![1.0; n];
    p1[0] = (1.0 / g, 1.0 / g);
    zp[0] = (1.0, 1.0);
    pin2[0] = 1.0 / g;
    let width = |j: usize| nodes[j + 1].time - nodes[j].time;
    for k in 1..n {
        let node = &nodes[k];
        let jump = node.y != node.y_left;
        // Sums over completed panels [j, j+1] with j + 1 < k, and the left end of the last panel.
        let (mut s1r, mut s1l, mut szr, mut szl, mut s2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in 0..k {
            let (row, ret) = cache.lag(node, &nodes[j]);
            let k_lag = ret / g;
            let h_right = width(j) / 2.0;
            // Node j as left end of panel j.
            let (a1, az) = (p1[j].0, zp[j].0);
            let pl = point_prob(row, &node.y_left, &nodes[j].y);
            s1l += h_right * a1 * beta * pl;
            szl += h_right * az * beta * pl;
            if jump {
                let pr = point_prob(row, &node.y, &nodes[j].y);
                s1r += h_right * a1 * beta * pr;
                szr += h_right * az * beta * pr;
            }
            s2 += h_right * a1 * k_lag;
            // Node j as right end of panel j - 1, where Y sits at the previous node's value.
            if j >= 1 {
                let h_left = width(j - 1) / 2.0;
                let (b1, bz) = (p1[j].1, zp[j].1);
                let prev = &nodes[j - 1].y;
                let pl = point_prob(row, &node.y_left, prev);
                s1l += h_left * b1 * beta * pl;
                szl += h_left * bz * beta * pl;
                if jump {
                    let pr = point_prob(row, &node.y, prev);
                    s1r += h_left * b1 * beta * pr;
                    szr += h_left * bz * beta * pr;
                }
                s2 += h_left * b1 * k_lag;
            }
        }
        let (row, ret) = cache.lag(node, &nodes[0]);
        let forcing_k = ret / g;
        let forcing_l = point_prob(row, &node.y_left, &nodes[0].y);
        let forcing_r = point_prob(row, &node.y, &nodes[0].y);
        let h = width(k - 1) / 2.0;
        // The implicit term of the last panel: kappa(0, 0) = beta.
        let implicit = 1.0 - beta * h;
        let p1_left = (forcing_k + s1l) / implicit;
        let zp_left = (forcing_l + szl) / implicit;
        let (p1_val, zp_val) = if jump { (forcing_k + s1r, forcing_r + szr) } else { (p1_left, zp_left) };
        p1[k] = (p1_val, p1_left);
        zp[k] = (zp_val, zp_left);
        pin2[k] = forcing_k + s2 + h * p1_left / g;
        z1[k] = z1[k - 1] + h * (p1[k - 1].0 + p1_left);
        z[k] = z[k - 1] + beta * h * (zp[k - 1].0 + zp_left);
    }
    if !p1.iter().chain(&zp).all(|v| v.0.is_finite() && v.1.is_finite()) || beta * t / m as f64 >= 2.0 {
        return Err(PinError::Numerical("Volterra grid too coarse for the coupling".into()));
    }
    let mut out = VolterraSolution {
        times: Vec::with_capacity(m + 1),
        z1: Vec::with_capacity(m + 1),
        pin1: Vec::with_capacity(m + 1),
        pin2: Vec::with_capacity(m + 1),
        z: Vec::with_capacity(m + 1),
        zpin: Vec::with_capacity(m + 1),
    };
    for (k, node) in nodes.iter().enumerate() {
        if node.grid.is_some() {
            out.times.push(node.time);
            out.z1.push(z1[k]);
            out.pin1.push(p1[k].0);
            out.pin2.push(pin2[k]);
            out.z.push(z[k]);
            out.zpin.push(zp[k].0);
        }
    }
    Ok(out)
}

/// Final-time values of the modified partition functions and the plain ones, at step `dt / 2`
/// with the `dt` run as the refinement check.
#[derive(Debug, Clone, Serialize)]
pub struct ModifiedPartitions {
    pub z1: PartitionValue,
    pub pin1: PartitionValue,
    pub pin2: PartitionValue,
    pub free: PartitionValue,
    pub pin: PartitionValue,
    /// `sup_{s <= t} beta_bar p_s(0) / p_{(1+rho)s}(0)`.
    pub c_bound: f64,
    /// Observed `|v(dt) - v(dt/2)|` relative to `v(dt/2)`, per variant in the order above.
    pub refinement: [f64; 5],
}

/// Relative change between the `dt` and `dt/2` grids above which refinement is declared failed.
pub const REFINEMENT_LIMIT: f64 = 0.05;

pub fn ct_modified_partitions(params: &ModelParams, path: &DisorderPath, t: f64, dt: f64) -> Result<ModifiedPartitions> {
    if !(dt > 0.0 && dt <= t) {
        return Err(invalid(format!("need 0 < dt <= t (dt={dt}, t={t})")));
    }
    let m = (t / dt).ceil() as usize;
    let coarse = volterra_solve(params, path, t, m)?;
    let fine = volterra_solve(params, path, t, 2 * m)?;
    let pick = |s: &VolterraSolution| [*s.z1.last().unwrap(), *s.pin1.last().unwrap(), *s.pin2.last().unwrap(), *s.z.last().unwrap(), *s.zpin.last().unwrap()];
    let (a, b) = (pick(&coarse), pick(&fine));
    let mut refinement = [0.0; 5];
    for i in 0..5 {
        refinement[i] = (a[i] - b[i]).abs() / b[i].abs();
        if !(refinement[i] <= REFINEMENT_LIMIT) {
            return Err(PinError::Tolerance { what: "Volterra grid refinement".into(), achieved: refinement[i], requested: REFINEMENT_LIMIT });
        }
    }
    let variants = [Variant::Z1, Variant::Pin1, Variant::Pin2, Variant::Free, Variant::Pin];
    // Richardson estimate for a second-order rule.
    let pv = |i: usize| PartitionValue { log_value: b[i].ln(), variant: variants[i], window: (0.0, t), params: *params, error_bound: refinement[i] / 3.0 };
    let beta_bar = params.beta * ct_green(params.d, params.rho)?;
    let df = params.d as f64;
    let c_sup = fine
        .times
        .iter()
        .map(|&s| {
            let num = scaled_bessel_row(s / df, 0)[0];
            let den = scaled_bessel_row((1.0 + params.rho) * s / df, 0)[0];
            (num / den).powi(params.d as i32)
        })
        .fold(0.0, f64::max);
    Ok(ModifiedPartitions { z1: pv(0), pin1: pv(1), pin2: pv(2), free: pv(3), pin: pv(4), c_bound: beta_bar * c_sup, refinement })
}
