//! Continuous-time evolution `v' = (Delta + beta delta_{Y_s}) v` on a finite box by uniformization.
//!
//! With `B = Delta + beta delta_y + c I`, `c = 1 + max(0, -beta)`, every entry of `B` is
//! nonnegative and `e^{tau A} v = e^{-c tau} sum_k tau^k / k! B^k v` is a sum of
//! nonnegative vectors. The series is cut where the Poisson tail certifies the remainder.

use super::{ModelParams, PartitionValue, Variant};
use crate::disorder::DisorderPath;
use crate::error::{invalid, PinError};
use crate::kernels::continuous::log_ct_1d;
use crate::special::{ln_poisson_pmf, poisson_radius_log};
use crate::{Mode, Result};

/// Largest number of sites a box may hold.
pub(crate) const BOX_BUDGET: usize = 20_000_000;

/// Dense hypercube `[-r, r]^d`.
#[derive(Debug, Clone)]
pub(crate) struct LatticeBox {
    pub d: usize,
    pub r: i32,
    pub side: usize,
    pub strides: Vec<usize>,
    pub len: usize,
}

impl LatticeBox {
    pub fn new(d: usize, r: usize) -> Result<Self> {
        let side = 2 * r + 1;
        let len = (side as f64).powi(d as i32);
        if len > BOX_BUDGET as f64 {
            return Err(PinError::BudgetExceeded { d, n_max: r, entries: len as usize, limit: BOX_BUDGET });
        }
        let strides = (0..d).map(|a| side.pow(a as u32)).collect();
        Ok(Self { d, r: r as i32, side, strides, len: len as usize })
    }

    pub fn index(&self, x: &[i32]) -> Option<usize> {
        let mut idx = 0;
        for (a, &v) in x.iter().enumerate() {
            if v.abs() > self.r {
                return None;
            }
            idx += (v + self.r) as usize * self.strides[a];
        }
        Some(idx)
    }

    /// `out = sum over the 2d neighbours of v`, with walls either reflecting (the move is
    /// replaced by staying put) or absorbing (mass leaving the box is dropped).
    pub fn neighbour_sum(&self, v: &[f64], out: &mut [f64], reflect: bool) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for &stride in &self.strides {
            let block = stride * self.side;
            for base in (0..self.len).step_by(block) {
                for x in 0..self.side {
                    let row = base + x * stride;
                    let lo = x > 0;
                    let hi = x + 1 < self.side;
                    for i in row..row + stride {
                        let mut acc = 0.0;
                        if lo {
                            acc += v[i - stride];
                        } else if reflect {
                            acc += v[i];
                        }
                        if hi {
                            acc += v[i + stride];
                        } else if reflect {
                            acc += v[i];
                        }
                        out[i] += acc;
                    }
                }
            }
        }
    }
}

/// Field together with its accumulated log scale: the represented vector is `e^{log_scale} v`.
#[derive(Debug, Clone)]
pub(crate) struct ScaledField {
    pub v: Vec<f64>,
    pub log_scale: f64,
}

impl ScaledField {
    pub fn renormalise(&mut self) {
        let m = self.v.iter().fold(0.0f64, |a, &b| a.max(b));
        if m > 0.0 && m.is_finite() {
            self.v.iter_mut().for_each(|x| *x /= m);
            self.log_scale += m.ln();
        }
    }
}

/// Piecewise-constant catalyst: `(duration, site index)` pieces.
pub(crate) fn catalyst_pieces(bx: &LatticeBox, path: &DisorderPath, t: f64) -> Result<Vec<(f64, usize)>> {
    let mut pieces = Vec::with_capacity(path.jump_count() + 1);
    let mut pos = vec![0i32; path.d];
    let mut last = 0.0;
    let outside = || PinError::Numerical("catalyst path leaves the box".into());
    for (&s, &step) in path.times.iter().zip(&path.steps) {
        if s > t {
            break;
        }
        if s > last {
            pieces.push((s - last, bx.index(&pos).ok_or_else(outside)?));
        }
        pos[(step / 2) as usize] += if step % 2 == 0 { 1 } else { -1 };
        last = s;
    }
    if t > last {
        pieces.push((t - last, bx.index(&pos).ok_or_else(outside)?));
    }
    Ok(pieces)
}

/// `ln` of the bound `pmf(k+1) / (1 - mu/(k+2))` on `P(Pois(mu) > k)`, valid for `k + 2 > mu`.
pub(crate) fn log_poisson_tail(k: u64, mu: f64) -> f64 {
    if mu == 0.0 {
        return f64::NEG_INFINITY;
    }
    ln_poisson_pmf(k + 1, mu) - (1.0 - mu / (k + 2) as f64).ln()
}

pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn chunk_count(b: f64, dur: f64) -> usize {
    (b * dur / 50.0).ceil().max(1.0) as usize
}

/// Evolve `field` through the pieces.
///
/// Each chunk drops a nonnegative series remainder whose sup norm is at most
/// `e^{(b-c) tau} P(Pois(b tau) > K)` times the sup norm of the field entering the chunk.
/// The sum of these factors is kept below `e^{log_tol}`; its log is returned.
pub(crate) fn evolve(bx: &LatticeBox, field: &mut ScaledField, pieces: &[(f64, usize)], beta: f64, log_tol: f64) -> f64 {
    let c = 1.0 + (-beta).max(0.0);
    let b = c + beta.max(0.0);
    let inv = 1.0 / (2 * bx.d) as f64;
    let n_chunks: usize = pieces.iter().map(|p| chunk_count(b, p.0)).sum();
    let per_chunk = log_tol - (n_chunks.max(1) as f64).ln();
    let mut log_bound = f64::NEG_INFINITY;
    let mut term = vec![0.0; bx.len];
    let mut next = vec![0.0; bx.len];
    let mut acc = vec![0.0; bx.len];
    for &(dur, y) in pieces {
        let chunks = chunk_count(b, dur);
        let tau = dur / chunks as f64;
        let mu = b * tau;
        let k_max = poisson_radius_log(mu, per_chunk - (b - c) * tau);
        let log_tail = (b - c) * tau + log_poisson_tail(k_max, mu);
        let damp = (-c * tau).exp();
        for _ in 0..chunks {
            term.copy_from_slice(&field.v);
            acc.copy_from_slice(&field.v);
            for k in 1..=k_max {
                bx.neighbour_sum(&term, &mut next, true);
                let f = tau / k as f64;
                for i in 0..bx.len {
                    next[i] = f * (next[i] * inv + (c - 1.0) * term[i]);
                }
                next[y] += f * beta * term[y];
                std::mem::swap(&mut term, &mut next);
                for i in 0..bx.len {
                    acc[i] += term[i];
                }
            }
            for (v, a) in field.v.iter_mut().zip(&acc) {
                *v = a * damp;
            }
            field.renormalise();
            log_bound = log_add(log_bound, log_tail);
        }
    }
    log_bound
}

/// Radius of the box that keeps `e^{beta+ t} P(Pois(t) > R)` below `e^{log_budget}`, enlarged to hold the catalyst.
pub(crate) fn box_radius(t: f64, beta: f64, log_budget: f64, path_reach: u32) -> usize {
    let r = poisson_radius_log(t, log_budget - beta.max(0.0) * t) as usize;
    r.max(path_reach as usize).max(1)
}

/// Largest `|Y_s|_inf` for `s <= t`.
pub(crate) fn reach_until(path: &DisorderPath, t: f64) -> u32 {
    let k = path.times.partition_point(|&u| u <= t);
    let mut pos = vec![0i32; path.d];
    let mut m = 0;
    for &st in &path.steps[..k] {
        pos[(st / 2) as usize] += if st % 2 == 0 { 1 } else { -1 };
        m = m.max(pos.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0));
    }
    m
}

/// `Z^beta_{t,Y}` (free) or `Z^{beta,pin}_{t,Y}` (constrained) with relative error at most `eps`.
pub fn ct_partition(params: &ModelParams, path: &DisorderPath, t: f64, eps: f64, constrained: bool) -> Result<PartitionValue> {
    if params.mode != Mode::Continuous || path.mode != Mode::Continuous || path.d != params.d {
        return Err(invalid("ct_partition needs continuous parameters and a continuous path of matching dimension"));
    }
    if !(t >= 0.0 && t <= path.horizon) || !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(format!("need 0 <= t <= horizon and 0 < eps < 1 (t={t}, eps={eps})")));
    }
    let variant = if constrained { Variant::Pin } else { Variant::Free };
    let value = |log_value, error_bound| PartitionValue { log_value, variant, window: (0.0, t), params: *params, error_bound };
    if t == 0.0 {
        return Ok(value(0.0, 0.0));
    }
    let d = params.d;
    let beta = params.beta;
    let y_t = path.position_at(t);
    let mut log_lower = beta.min(0.0) * t;
    if constrained {
        log_lower += y_t.iter().map(|v| log_ct_1d(t / d as f64, v.unsigned_abs() as u64)).sum::<f64>();
    }
    let log_budget = (eps / 2.0).ln() + log_lower;
    let r = box_radius(t, beta, log_budget, reach_until(path, t));
    let bx = LatticeBox::new(d, r)?;
    let pieces = catalyst_pieces(&bx, path, t)?;
    let mut field = ScaledField { v: vec![0.0; bx.len], log_scale: 0.0 };
    field.v[bx.index(&vec![0; d]).expect("origin lies in the box")] = 1.0;
    let log_series = evolve(&bx, &mut field, &pieces, beta, log_budget - beta.max(0.0) * t);
    let log_box = beta.max(0.0) * t + log_poisson_tail(r as u64, t);
    let achieved = (log_add(log_box, log_series + beta.max(0.0) * t) - log_lower).exp();
    if !(achieved <= eps) {
        return Err(PinError::Tolerance { what: "ct_partition".into(), achieved, requested: eps });
    }
    let raw = if constrained {
        field.v[bx.index(&y_t).expect("catalyst lies in the box")]
    } else {
        crate::stats::pairwise_sum(&field.v)
    };
    if !(raw > 0.0) {
        return Err(PinError::Numerical("partition value underflowed".into()));
    }
    Ok(value(raw.ln() + field.log_scale, achieved))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbour_sum_reflecting_preserves_mass() {
        let bx = LatticeBox::new(2, 3).unwrap();
        let v: Vec<f64> = (0..bx.len).map(|i| (i % 7) as f64 + 0.5).collect();
        let mut out = vec![0.0; bx.len];
        bx.neighbour_sum(&v, &mut out, true);
        let a: f64 = v.iter().sum();
        let b: f64 = out.iter().sum();
        assert!((b - 4.0 * a).abs() < 1e-9);
        let i = bx.index(&[1, -2]).unwrap();
        let want = v[bx.index(&[2, -2]).unwrap()]
            + v[bx.index(&[0, -2]).unwrap()]
            + v[bx.index(&[1, -1]).unwrap()]
            + v[bx.index(&[1, -3]).unwrap()];
        assert!((out[i] - want).abs() < 1e-12);
    }

    #[test]
    fn zero_coupling_keeps_constants() {
        let bx = LatticeBox::new(1, 5).unwrap();
        let mut f = ScaledField { v: vec![1.0; bx.len], log_scale: 0.0 };
        let bound = evolve(&bx, &mut f, &[(3.0, 5)], 0.0, -30.0);
        assert!(f.v.iter().all(|x| (x - 1.0).abs() < 1e-12));
        assert!(f.log_scale.abs() < 1e-12);
        assert!(bound <= -30.0);
    }
}
