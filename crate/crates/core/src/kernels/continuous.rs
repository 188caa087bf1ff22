//! Continuous-time kernels `p_t(x)` of the rate-one walk on `Z^d`.

use serde::Serialize;

use super::walk::walk_prob_all_n;
use crate::error::invalid;
use crate::special::{chernoff_radius_1d, poisson_pmf, poisson_radius, scaled_bessel_row, stirlerr};
use crate::Result;

/// `p_t(x)` from the Poisson series over step counts, with its truncation bound.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CtRow {
    pub value: f64,
    pub truncation: f64,
    pub terms: usize,
}

/// Poissonised kernel `sum_n e^{-t} t^n / n! P_n(x)`, cut where the Poisson tail drops below `eps`.
pub fn ct_kernel_point(d: usize, t: f64, x: &[i32], eps: f64) -> Result<CtRow> {
    if x.len() != d || d == 0 {
        return Err(invalid("point length must equal d >= 1"));
    }
    if !(t >= 0.0 && t.is_finite()) || !(eps > 0.0) {
        return Err(invalid(format!("need t >= 0 and eps > 0 (t={t}, eps={eps})")));
    }
    let r = poisson_radius(t, eps) as usize;
    let probs = walk_prob_all_n(d, r, x);
    let mut value = 0.0;
    for (n, p) in probs.iter().enumerate() {
        if *p != 0.0 {
            value += poisson_pmf(n as u64, t) * p;
        }
    }
    let truncation = crate::special::poisson_sf(r as u64, t);
    Ok(CtRow { value, truncation, terms: r + 1 })
}

/// One-dimensional `p_s(k)` for `k = 0..=radius`.
pub(crate) fn ct_row_1d(s: f64, radius: usize) -> Vec<f64> {
    scaled_bessel_row(s, radius)
}

/// Product form `prod_i p^{(1)}_{t/d}(x_i)`.
pub fn ct_kernel_product(d: usize, t: f64, x: &[i32]) -> f64 {
    assert_eq!(x.len(), d);
    let s = t / d as f64;
    let m = x.iter().map(|v| v.unsigned_abs() as usize).max().unwrap_or(0);
    let row = ct_row_1d(s, m);
    x.iter().map(|v| row[v.unsigned_abs() as usize]).product()
}

fn ln_factorial(k: u64) -> f64 {
    if k < 2 {
        return 0.0;
    }
    let x = k as f64;
    x * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI * x).ln() + stirlerr(x)
}

/// `log p^{(1)}_t(x)` that survives underflow of the kernel itself.
pub(crate) fn log_ct_1d(t: f64, x: u64) -> f64 {
    if t == 0.0 {
        return if x == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let direct = ct_row_1d(t, x as usize)[x as usize];
    if direct > 1e-280 {
        return direct.ln();
    }
    // e^{-t} (t/2)^x / x! * sum_j (t^2/4)^j / (j! (x+1)...(x+j))
    let q = t * t / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut j = 0u64;
    loop {
        term *= q / ((j + 1) as f64 * (x + j + 1) as f64);
        sum += term;
        j += 1;
        if term < 1e-17 * sum || j > 100_000 {
            break;
        }
    }
    -t + x as f64 * (t / 2.0).ln() - ln_factorial(x) + sum.ln()
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EntropySum {
    pub value: f64,
    pub truncation: f64,
    pub radius: usize,
}

/// `sum_x p_{rho t}(x) log p_t(x)` over `Z^d`.
///
/// Both kernels factor over coordinates and each factor sums to one, so the sum is
/// `d` times its one-dimensional version at times `rho t / d` and `t / d`.
pub fn entropy_sum(d: usize, rho: f64, t: f64) -> Result<EntropySum> {
    if d == 0 || !(t > 0.0) || !(rho >= 0.0) {
        return Err(invalid(format!("entropy_sum needs d >= 1, t > 0, rho >= 0 (t={t}, rho={rho})")));
    }
    let df = d as f64;
    let sq = rho * t / df;
    let sr = t / df;
    let radius = (chernoff_radius_1d(sq, 1e-18) as usize).max(1);
    let q = ct_row_1d(sq, radius + 1);
    let r = ct_row_1d(sr, radius + 1);
    let mut acc = q[0] * r[0].ln();
    for k in 1..=radius {
        if q[k] > 0.0 {
            let lr = if r[k] > 1e-280 { r[k].ln() } else { log_ct_1d(sr, k as u64) };
            acc += 2.0 * q[k] * lr;
        }
    }
    // Bessel ratios I_{k+1}/I_k decrease in k, so q beyond the radius is dominated by a
    // geometric sequence; |log r(k)| <= sr + k log(2k/sr) from the leading series term.
    let mut truncation = 0.0;
    if sq > 0.0 && q[radius] > 0.0 {
        let ratio = (q[radius + 1] / q[radius]).min(1.0 - 1e-12);
        let mut mass = q[radius];
        let mut k = radius;
        loop {
            k += 1;
            mass *= ratio;
            let kf = k as f64;
            let lr = sr + kf * (2.0 * kf / sr).ln().max(0.0) + kf.ln() + 1.0;
            let term = 2.0 * mass * lr;
            truncation += term;
            if term < 1e-30 * (1.0 + truncation) || k > radius + 1_000_000 {
                break;
            }
        }
    }
    Ok(EntropySum { value: df * acc, truncation: df * truncation, radius })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundRegime {
    /// `|x| <= eps t`: Gaussian shape `C1 t^{-1/2} e^{-C2 x^2 / t}`.
    Diffusive,
    /// `eps t < |x| < A t`: `e^{-C3 t}`.
    Intermediate,
    /// `|x| >= A t`: `e^{-2|x| log|x|}`.
    Far,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundRow {
    pub t: f64,
    pub x: u64,
    pub regime: BoundRegime,
    pub log_p: f64,
    pub log_bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct KernelBoundReport {
    pub eps: f64,
    pub a: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub rows: Vec<BoundRow>,
}

/// Lower-bound shapes of the one-dimensional kernel, with constants fitted from the grid.
///
/// `C1` is half the smallest `sqrt(t) p_t(0)` on the grid, `C2` the smallest value that
/// makes every diffusive row hold, `C3` the largest `-log p_t(x) / t` over intermediate rows.
/// The far-regime bound has no free constant and is checked as stated. Rows with `t = 0`
/// are dropped.
pub fn kernel_bound_report(t_grid: &[f64], x_grid: &[u64], eps: f64, a: f64) -> Result<KernelBoundReport> {
    if !(eps > 0.0 && eps < a) {
        return Err(invalid(format!("need 0 < eps < A (eps={eps}, A={a})")));
    }
    let ts: Vec<f64> = t_grid.iter().copied().filter(|t| *t > 0.0).collect();
    let mut raw = Vec::new();
    for &t in &ts {
        for &x in x_grid {
            let xf = x as f64;
            let regime = if xf <= eps * t {
                BoundRegime::Diffusive
            } else if xf < a * t {
                BoundRegime::Intermediate
            } else {
                BoundRegime::Far
            };
            raw.push((t, x, regime, log_ct_1d(t, x)));
        }
    }
    let c1 = 0.5
        * ts.iter()
            .map(|&t| t.sqrt() * log_ct_1d(t, 0).exp())
            .fold(f64::INFINITY, f64::min);
    let mut c2: f64 = 0.0;
    let mut c3: f64 = 0.0;
    for &(t, x, regime, lp) in &raw {
        match regime {
            BoundRegime::Diffusive if x > 0 => {
                let need = t * (c1.ln() - 0.5 * t.ln() - lp) / (x as f64 * x as f64);
                c2 = c2.max(need);
            }
            BoundRegime::Intermediate => c3 = c3.max(-lp / t),
            _ => {}
        }
    }
    let rows = raw
        .into_iter()
        .map(|(t, x, regime, log_p)| {
            let xf = x as f64;
            let log_bound = match regime {
                BoundRegime::Diffusive => c1.ln() - 0.5 * t.ln() - c2 * xf * xf / t,
                BoundRegime::Intermediate => -c3 * t,
                BoundRegime::Far => {
                    if x <= 1 {
                        0.0
                    } else {
                        -2.0 * xf * xf.ln()
                    }
                }
            };
            BoundRow { t, x, regime, log_p, log_bound, holds: log_p >= log_bound - 1e-12 * log_bound.abs() }
        })
        .collect();
    Ok(KernelBoundReport { eps, a, c1, c2, c3, rows })
}
