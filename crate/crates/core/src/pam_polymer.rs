//! Parabolic Anderson model with one moving catalyst, and directed polymers in a random
//! environment checked by exhaustive enumeration.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::disorder::{sample_ct_with, DisorderPath};
use crate::error::{invalid, PinError};
use crate::quenched::ct::{box_radius, catalyst_pieces, evolve, log_add, log_poisson_tail, reach_until, LatticeBox, ScaledField};
use crate::rng::{stream, Module};
use crate::{McEstimate, Mode, Result};

/// `u(t, .)` on the box `[-radius, radius]^d`; the represented values are `e^{log_scale} values`.
#[derive(Debug, Clone, Serialize)]
pub struct Field {
    pub d: usize,
    pub radius: usize,
    pub values: Vec<f64>,
    pub log_scale: f64,
    pub t: f64,
    /// Certified relative error at sites within `reach` of the origin.
    pub truncation: f64,
    pub reach: u32,
    #[serde(skip)]
    bx: Option<LatticeBox>,
}

impl Field {
    pub fn log_value_at(&self, x: &[i32]) -> Result<f64> {
        if x.iter().any(|v| v.unsigned_abs() > self.reach) {
            return Err(invalid(format!("site {x:?} lies outside the certified region (reach {})", self.reach)));
        }
        let bx = self.bx.as_ref().expect("solved field carries its box");
        Ok(self.values[bx.index(x).unwrap()].ln() + self.log_scale)
    }

    pub fn value_at(&self, x: &[i32]) -> Result<f64> {
        Ok(self.log_value_at(x)?.exp())
    }
}

/// `du/dt = Delta u + beta delta_{Y_t}(x) u`, `u(0, .) = 1`, with `Delta` the generator of the
/// rate-one walk.
///
/// Reflecting walls keep constants invariant; a walk started within `reach` of the origin
/// (the catalyst's range) meets a wall before time `t` with probability below the Poisson
/// tail used to size the box.
pub fn pam_solve(d: usize, beta: f64, rho: f64, t: f64, path: &DisorderPath, eps: f64) -> Result<Field> {
    if path.mode != Mode::Continuous || path.d != d || d == 0 {
        return Err(invalid("pam_solve needs a continuous path of matching dimension"));
    }
    if !(rho >= 0.0) || !(t > 0.0 && t <= path.horizon) || !(eps > 0.0 && eps < 1.0) || !beta.is_finite() {
        return Err(invalid(format!("need rho >= 0, 0 < t <= horizon, 0 < eps < 1 (rho={rho}, t={t}, eps={eps})")));
    }
    let reach = reach_until(path, t);
    let spread = beta.abs() * t;
    let log_budget = (eps / 4.0).ln();
    let r = box_radius(t, 0.0, log_budget - spread, 0) + reach as usize + 1;
    let bx = LatticeBox::new(d, r)?;
    let mut field = ScaledField { v: vec![1.0; bx.len], log_scale: 0.0 };
    let truncation = if beta == 0.0 {
        0.0
    } else {
        let pieces = catalyst_pieces(&bx, path, t)?;
        let log_series = evolve(&bx, &mut field, &pieces, beta, log_budget - spread);
        let log_wall = (2.0f64).ln() + spread + log_poisson_tail((r - reach as usize - 1) as u64, t);
        log_add(log_wall, log_series + spread).exp()
    };
    if !(truncation <= eps) {
        return Err(PinError::Tolerance { what: "pam_solve".into(), achieved: truncation, requested: eps });
    }
    if field.v.iter().any(|v| !(*v >= 0.0)) {
        return Err(PinError::Numerical("PAM field lost positivity".into()));
    }
    Ok(Field { d, radius: r, values: field.v, log_scale: field.log_scale, t, truncation, reach, bx: Some(bx) })
}

/// Mean and standard error of `(1/t) log u(t, 0)` over catalyst paths of rate `rho`.
pub fn lyapunov_estimate(d: usize, beta: f64, rho: f64, t: f64, replicas: usize, seed: u64) -> Result<McEstimate> {
    if replicas == 0 {
        return Err(invalid("need at least one replica"));
    }
    let origin = vec![0; d];
    let samples: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let y = sample_ct_with(&mut stream(seed, Module::Pam, r), d, rho, t)?;
            Ok(pam_solve(d, beta, rho, t, &y, 1e-8)?.log_value_at(&origin)? / t)
        })
        .collect::<Result<_>>()?;
    Ok(McEstimate::from_samples(&samples, seed))
}

/// Finite-support law of a single environment variable.
#[derive(Debug, Clone, Serialize)]
pub struct DisorderLaw {
    pub values: Vec<f64>,
    pub probs: Vec<f64>,
}

impl DisorderLaw {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() || probs.iter().any(|p| !(*p > 0.0)) {
            return Err(invalid("law needs matching nonempty values and positive probabilities"));
        }
        let total: f64 = probs.iter().sum();
        let mean: f64 = values.iter().zip(&probs).map(|(v, p)| v * p).sum();
        if (total - 1.0).abs() > 1e-12 || mean.abs() > 1e-12 {
            return Err(invalid(format!("law must have total mass 1 and mean 0 (mass {total}, mean {mean})")));
        }
        Ok(Self { values, probs })
    }

    /// `+-1` with probability 1/2 each.
    pub fn rademacher() -> Self {
        Self { values: vec![1.0, -1.0], probs: vec![0.5, 0.5] }
    }

    pub fn log_mgf(&self, lambda: f64) -> f64 {
        self.values.iter().zip(&self.probs).map(|(v, p)| p * (lambda * v).exp()).sum::<f64>().ln()
    }

    /// `P(w = v) e^{lambda v - M(lambda)}`.
    pub fn tilted(&self, lambda: f64) -> Vec<f64> {
        let m = self.log_mgf(lambda);
        self.values.iter().zip(&self.probs).map(|(v, p)| p * (lambda * v - m).exp()).collect()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (v, p) in self.values.iter().zip(&self.probs) {
            acc += p;
            if u < acc {
                return *v;
            }
        }
        *self.values.last().unwrap()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PolymerSpec {
    pub lambda: f64,
    pub law: DisorderLaw,
}

impl PolymerSpec {
    pub fn new(lambda: f64, law: DisorderLaw) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(invalid(format!("lambda must be >= 0 (lambda={lambda})")));
        }
        Ok(Self { lambda, law })
    }

    pub fn log_mgf(&self, lambda: f64) -> f64 {
        self.law.log_mgf(lambda)
    }

    pub fn beta_hat(&self) -> f64 {
        beta_hat(self.lambda, |l| self.law.log_mgf(l))
    }
}

/// `M(2 lambda) - 2 M(lambda)`.
pub fn beta_hat(lambda: f64, log_mgf: impl Fn(f64) -> f64) -> f64 {
    log_mgf(2.0 * lambda) - 2.0 * log_mgf(lambda)
}

/// Smallest `lambda` with `beta_hat(lambda) = target` on `[0, lambda_max]`, assuming `beta_hat`
/// increases there; `None` when it stays below the target.
pub fn lambda_threshold(target: f64, lambda_max: f64, log_mgf: impl Fn(f64) -> f64) -> Option<f64> {
    let f = |l: f64| beta_hat(l, &log_mgf) - target;
    if f(lambda_max) < 0.0 {
        return None;
    }
    let (mut lo, mut hi) = (0.0, lambda_max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Environment values on the sites a walk can reach at times `1..=n`.
#[derive(Debug, Clone)]
pub struct OmegaField {
    pub d: usize,
    pub n: usize,
    /// `(time, site)` in lexicographic order.
    pub sites: Vec<(usize, Vec<i32>)>,
    index: HashMap<(usize, Vec<i32>), usize>,
    pub values: Vec<f64>,
}

fn reachable(d: usize, i: usize) -> Vec<Vec<i32>> {
    let r = i as i32;
    let mut out = Vec::new();
    let mut x = vec![-r; d];
    loop {
        let l1: i32 = x.iter().map(|v| v.abs()).sum();
        if l1 <= r && (l1 - r) % 2 == 0 {
            out.push(x.clone());
        }
        let mut a = 0;
        loop {
            if a == d {
                return out;
            }
            if x[a] < r {
                x[a] += 1;
                break;
            }
            x[a] = -r;
            a += 1;
        }
    }
}

impl OmegaField {
    pub fn zeros(d: usize, n: usize) -> Result<Self> {
        if d == 0 {
            return Err(invalid("d must be >= 1"));
        }
        let sites: Vec<(usize, Vec<i32>)> = (1..=n).flat_map(|i| reachable(d, i).into_iter().map(move |x| (i, x))).collect();
        let index = sites.iter().cloned().enumerate().map(|(k, s)| (s, k)).collect();
        let values = vec![0.0; sites.len()];
        Ok(Self { d, n, sites, index, values })
    }

    pub fn sample(d: usize, n: usize, law: &DisorderLaw, seed: u64, replica: u64) -> Result<Self> {
        let mut f = Self::zeros(d, n)?;
        let mut rng = stream(seed, Module::Polymer, replica);
        for v in f.values.iter_mut() {
            *v = law.sample(&mut rng);
        }
        Ok(f)
    }

    pub fn get(&self, i: usize, x: &[i32]) -> f64 {
        self.values[self.index[&(i, x.to_vec())]]
    }

    pub fn site_index(&self, i: usize, x: &[i32]) -> Option<usize> {
        self.index.get(&(i, x.to_vec())).copied()
    }
}

/// Largest number of paths the exact route enumerates.
pub const PATH_LIMIT: f64 = 1e7;

/// Visit every nearest-neighbour path of length `n` from the origin with its positions.
fn for_each_path(d: usize, n: usize, mut visit: impl FnMut(&[Vec<i32>])) {
    let mut pos = vec![vec![0i32; d]; n + 1];
    let mut choice = vec![0usize; n];
    let k = 2 * d;
    if n == 0 {
        visit(&pos);
        return;
    }
    loop {
        for i in 0..n {
            pos[i + 1] = pos[i].clone();
            let c = choice[i];
            pos[i + 1][c / 2] += if c % 2 == 0 { 1 } else { -1 };
        }
        visit(&pos);
        let mut i = n;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            choice[i] += 1;
            if choice[i] < k {
                break;
            }
            choice[i] = 0;
        }
    }
}

fn partition_with(spec: &PolymerSpec, d: usize, n: usize, omega: impl Fn(usize, &[i32]) -> f64) -> f64 {
    let m = spec.log_mgf(spec.lambda);
    let mut acc = 0.0;
    let mut count = 0.0;
    for_each_path(d, n, |p| {
        let e: f64 = (1..=n).map(|i| spec.lambda * omega(i, &p[i]) - m).sum();
        acc += e.exp();
        count += 1.0;
    });
    acc / count
}

/// `E^X[exp(sum_{i <= n} (lambda w(i, X_i) - M(lambda)))]` by enumerating all paths.
pub fn polymer_partition_exact(spec: &PolymerSpec, n: usize, omega: &OmegaField) -> Result<f64> {
    check_levels(n, omega)?;
    if (2.0 * omega.d as f64).powi(n as i32) > PATH_LIMIT {
        return Err(PinError::TooLarge(format!("(2d)^N paths exceed {PATH_LIMIT:e} (d={}, N={n})", omega.d)));
    }
    Ok(partition_with(spec, omega.d, n, |i, x| omega.get(i, x)))
}

/// The same quantity by the transfer recursion over sites.
pub fn polymer_partition_dp(spec: &PolymerSpec, n: usize, omega: &OmegaField) -> Result<f64> {
    check_levels(n, omega)?;
    let d = omega.d;
    let m = spec.log_mgf(spec.lambda);
    let inv = 1.0 / (2 * d) as f64;
    let mut w: HashMap<Vec<i32>, f64> = HashMap::from([(vec![0; d], 1.0)]);
    for i in 1..=n {
        let mut next: HashMap<Vec<i32>, f64> = HashMap::new();
        for (x, v) in &w {
            for c in 0..2 * d {
                let mut y = x.clone();
                y[c / 2] += if c % 2 == 0 { 1 } else { -1 };
                *next.entry(y).or_insert(0.0) += v * inv;
            }
        }
        for (y, v) in next.iter_mut() {
            *v *= (spec.lambda * omega.get(i, y) - m).exp();
        }
        w = next;
    }
    let mut vals: Vec<f64> = w.into_values().collect();
    vals.sort_by(f64::total_cmp);
    Ok(vals.iter().sum())
}

pub fn polymer_partition(spec: &PolymerSpec, n: usize, omega: &OmegaField) -> Result<f64> {
    if (2.0 * omega.d as f64).powi(n as i32) <= PATH_LIMIT {
        polymer_partition_exact(spec, n, omega)
    } else {
        polymer_partition_dp(spec, n, omega)
    }
}

fn check_levels(n: usize, omega: &OmegaField) -> Result<()> {
    if n > omega.n {
        return Err(invalid(format!("environment covers {} levels, {n} requested", omega.n)));
    }
    Ok(())
}

/// Largest enumeration the exhaustive identities attempt.
pub const ENUMERATION_BUDGET: f64 = 1e8;

/// Every assignment of support points to `k` slots, with its probability under `probs`.
fn for_each_assignment(k: usize, probs: &[f64], mut visit: impl FnMut(&[usize], f64)) {
    let s = probs.len();
    let mut idx = vec![0usize; k];
    loop {
        let p: f64 = idx.iter().map(|&j| probs[j]).product();
        visit(&idx, p);
        let mut a = 0;
        loop {
            if a == k {
                return;
            }
            idx[a] += 1;
            if idx[a] < s {
                break;
            }
            idx[a] = 0;
            a += 1;
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct SizeBiasResult {
    /// `E[f(tilde Z)]` with `tilde Z` built from `(w, tilde w, Y)`.
    pub lhs: f64,
    /// `E[Z f(Z)]`.
    pub rhs: f64,
    pub diff: f64,
}

/// Exhaustive check of `E[f(tilde Z)] = E[Z f(Z)]`.
///
/// `tilde Z` uses the environment `w` off the path of an independent walk `Y` and, on it,
/// independent variables `tilde w(i)` with law `P(tilde w = v) ∝ e^{lambda v} P(w = v)`.
pub fn size_bias_check(spec: &PolymerSpec, n: usize, d: usize, f: &dyn Fn(f64) -> f64) -> Result<SizeBiasResult> {
    let field = OmegaField::zeros(d, n)?;
    let s = spec.law.values.len() as f64;
    let walks = (2.0 * d as f64).powi(n as i32);
    let cost = s.powi(field.sites.len() as i32) * walks * walks * s.powi(n as i32);
    if cost > ENUMERATION_BUDGET {
        return Err(PinError::TooLarge(format!("size-bias enumeration needs {cost:e} evaluations")));
    }
    let vals = &spec.law.values;
    let tilted = spec.law.tilted(spec.lambda);
    let mut ys: Vec<Vec<Vec<i32>>> = Vec::new();
    for_each_path(d, n, |p| ys.push(p.to_vec()));
    let y_weight = 1.0 / ys.len() as f64;
    let (mut lhs, mut rhs) = (0.0, 0.0);
    let mut w = field.clone();
    for_each_assignment(field.sites.len(), &spec.law.probs, |idx, p| {
        for (v, &j) in w.values.iter_mut().zip(idx) {
            *v = vals[j];
        }
        let z = partition_with(spec, d, n, |i, x| w.get(i, x));
        rhs += p * z * f(z);
        for y in &ys {
            let on_path: Vec<usize> = (1..=n).map(|i| w.site_index(i, &y[i]).unwrap()).collect();
            for_each_assignment(n, &tilted, |tidx, q| {
                let zt = partition_with(spec, d, n, |i, x| {
                    let k = w.site_index(i, x).unwrap();
                    if k == on_path[i - 1] {
                        vals[tidx[i - 1]]
                    } else {
                        w.values[k]
                    }
                });
                lhs += p * y_weight * q * f(zt);
            });
        }
    });
    Ok(SizeBiasResult { lhs, rhs, diff: (lhs - rhs).abs() })
}

/// `E_w[Z_n]` by exhaustive enumeration of the environment.
pub fn polymer_mean(spec: &PolymerSpec, n: usize, d: usize) -> Result<f64> {
    let field = OmegaField::zeros(d, n)?;
    let s = spec.law.values.len() as f64;
    if s.powi(field.sites.len() as i32) * (2.0 * d as f64).powi(n as i32) > ENUMERATION_BUDGET {
        return Err(PinError::TooLarge(format!("normalisation enumeration at d={d}, N={n}")));
    }
    let mut w = field.clone();
    let mut acc = 0.0;
    for_each_assignment(field.sites.len(), &spec.law.probs, |idx, p| {
        for (v, &j) in w.values.iter_mut().zip(idx) {
            *v = spec.law.values[j];
        }
        acc += p * partition_with(spec, d, n, |i, x| w.get(i, x));
    });
    Ok(acc)
}

/// `(Z_n, E[Z_{n+1} | w up to n])` for the given environment, averaging level `n + 1` exhaustively.
pub fn martingale_step(spec: &PolymerSpec, n: usize, omega: &OmegaField) -> Result<(f64, f64)> {
    if omega.n < n + 1 {
        return Err(invalid("environment must cover level n + 1"));
    }
    let z = polymer_partition(spec, n, omega)?;
    let top: Vec<usize> = (0..omega.sites.len()).filter(|&k| omega.sites[k].0 == n + 1).collect();
    if (spec.law.values.len() as f64).powi(top.len() as i32) > ENUMERATION_BUDGET {
        return Err(PinError::TooLarge(format!("level {} has {} sites", n + 1, top.len())));
    }
    let mut w = omega.clone();
    let mut acc = 0.0;
    let mut err = None;
    for_each_assignment(top.len(), &spec.law.probs, |idx, p| {
        for (&k, &j) in top.iter().zip(idx) {
            w.values[k] = spec.law.values[j];
        }
        match polymer_partition(spec, n + 1, &w) {
            Ok(v) => acc += p * v,
            Err(e) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok((z, acc)),
    }
}

/// `E[Z_n^2]` by enumerating pairs of paths: each shared site contributes `e^{beta_hat}`.
pub fn second_moment_pairs(spec: &PolymerSpec, n: usize, d: usize) -> Result<f64> {
    let walks = (2.0 * d as f64).powi(n as i32);
    if walks * walks > ENUMERATION_BUDGET {
        return Err(PinError::TooLarge(format!("pair enumeration at d={d}, N={n}")));
    }
    let bh = spec.beta_hat();
    let mut paths: Vec<Vec<Vec<i32>>> = Vec::new();
    for_each_path(d, n, |p| paths.push(p.to_vec()));
    let mut acc = 0.0;
    for a in &paths {
        for b in &paths {
            let shared = (1..=n).filter(|&i| a[i] == b[i]).count();
            acc += (bh * shared as f64).exp();
        }
    }
    Ok(acc / (walks * walks))
}

#[cfg(test)]
mod tests;
