//! Green functions of the pair walk and of the continuous-time walk, by two routes each.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use serde::Serialize;

use super::fourier::torus_average;
use super::walk::return_probabilities;
use crate::error::{invalid, PinError};
use crate::special::{gauss_legendre_on, hurwitz_zeta, least_squares, scaled_bessel_row};
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Green {
    Finite(f64),
    Divergent,
}

impl Green {
    pub fn value(&self) -> Option<f64> {
        match self {
            Green::Finite(v) => Some(*v),
            Green::Divergent => None,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Green::Finite(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GreenMethod {
    /// Exact return probabilities summed to `n0` plus a fitted power-law tail.
    Series,
    /// Fourier inversion on the torus.
    Quadrature,
    /// Time integral of the continuous-time return probability.
    TimeIntegral,
}

#[derive(Debug, Clone, Serialize)]
pub struct RouteValue {
    pub quantity: &'static str,
    pub method: GreenMethod,
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GreenValues {
    pub d: usize,
    pub g_pair: Option<Green>,
    pub g_ct: Option<Green>,
    pub g_even: Option<f64>,
    pub g_odd: Option<f64>,
    pub gap: Option<f64>,
    pub routes: Vec<RouteValue>,
}

impl GreenValues {
    fn empty(d: usize) -> Self {
        Self { d, g_pair: None, g_ct: None, g_even: None, g_odd: None, gap: None, routes: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GreenOptions {
    pub eps: f64,
    /// Last pair step summed exactly by the series route.
    pub n0: usize,
    /// Starting Gauss-Legendre order per axis.
    pub order: usize,
}

impl Default for GreenOptions {
    fn default() -> Self {
        Self { eps: 1e-6, n0: 200, order: 10 }
    }
}

/// Raise the quadrature order until the order-doubling estimate drops below `target`.
fn adaptive<F: Fn(f64, f64) -> f64 + Copy>(d: usize, start: usize, target: f64, f: F) -> (f64, f64) {
    let mut m = start;
    loop {
        let (v, e) = torus_average(d, m, f);
        if e <= target * v.abs().max(1e-300) || m >= 48 {
            return (v, e);
        }
        m = (3 * m).div_ceil(2);
    }
}

/// `sum_{n>=1} P(X_n = Y_n)`: exact to `n0`, then `n^{-d/2}(C + a/n + b/n^2)` fitted on
/// `[n0/2, n0]` and summed with Hurwitz zeta values.
fn pair_series(d: usize, n0: usize) -> (f64, f64) {
    let r = return_probabilities(d, 2 * n0);
    let head: f64 = (1..=n0).map(|n| r[2 * n]).sum();
    let e = d as f64 / 2.0;
    let fit = |lo: usize, terms: usize| {
        let rows: Vec<Vec<f64>> = (lo..=n0)
            .map(|n| (0..terms).map(|j| (n as f64).powf(-e - j as f64)).collect())
            .collect();
        let y: Vec<f64> = (lo..=n0).map(|n| r[2 * n]).collect();
        let c = least_squares(&rows, &y);
        c.iter().enumerate().map(|(j, cj)| cj * hurwitz_zeta(e + j as f64, (n0 + 1) as f64)).sum::<f64>()
    };
    let tail = fit(n0 / 2, 3);
    let alt = fit(n0 / 2, 2);
    (head + tail, (tail - alt).abs())
}

fn pair_integrand(phi: f64, _s2: f64) -> f64 {
    let p2 = phi * phi;
    p2 / (1.0 - p2)
}

/// `G^{X-Y}` by both routes, failing when they disagree by more than `opts.eps` relative.
pub fn green_pair_with(d: usize, opts: &GreenOptions) -> Result<GreenValues> {
    if d == 0 {
        return Err(invalid("d must be >= 1"));
    }
    let mut out = GreenValues::empty(d);
    if d <= 2 {
        out.g_pair = Some(Green::Divergent);
        return Ok(out);
    }
    let (s, se) = pair_series(d, opts.n0);
    let (q, qe) = adaptive(d, opts.order, opts.eps * 0.01, pair_integrand);
    out.routes.push(RouteValue { quantity: "g_pair", method: GreenMethod::Series, value: s, error: se });
    out.routes.push(RouteValue { quantity: "g_pair", method: GreenMethod::Quadrature, value: q, error: qe });
    let rel = (s - q).abs() / q;
    if rel > opts.eps {
        return Err(PinError::Numerical(format!(
            "G^(X-Y) routes disagree in d={d}: series {s:.12e} vs quadrature {q:.12e} (rel {rel:.2e} > eps {:.1e})",
            opts.eps
        )));
    }
    out.g_pair = Some(Green::Finite(q));
    Ok(out)
}

pub fn green_pair(d: usize, eps: f64) -> Result<GreenValues> {
    green_pair_with(d, &GreenOptions { eps, ..GreenOptions::default() })
}

/// Cached `G^{X-Y}` for `d >= 3`, verified by both routes at `1e-7`.
pub fn pair_green_value(d: usize) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<usize, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&d) {
        return Ok(*v);
    }
    if d <= 2 {
        return Err(PinError::Recurrent(d));
    }
    let g = green_pair(d, 1e-7)?.g_pair.and_then(|g| g.value()).ok_or(PinError::Recurrent(d))?;
    cache.lock().unwrap().insert(d, g);
    Ok(g)
}

/// `d int_0^inf (e^{-x} I_0(x))^d dx`, the rate-one Green function at the origin.
fn ct_time_integral(d: usize) -> (f64, f64) {
    let df = d as f64;
    let cut = 256.0;
    let mut edges: Vec<f64> = vec![0.0, 0.5, 1.0];
    while *edges.last().unwrap() < cut {
        let last = *edges.last().unwrap();
        edges.push((2.0 * last).min(cut));
    }
    let integrate = |m: usize| {
        let mut acc = 0.0;
        for w in edges.windows(2) {
            let (x, wt) = gauss_legendre_on(m, w[0], w[1]);
            for (xi, wi) in x.iter().zip(&wt) {
                acc += wi * scaled_bessel_row(*xi, 0)[0].powi(d as i32);
            }
        }
        acc
    };
    let head = integrate(40);
    let head_check = integrate(30);
    // (2 pi x)^{-1/2} sum_k a_k x^{-k} raised to the d-th power, integrated over [cut, inf).
    let a = [1.0, 1.0 / 8.0, 9.0 / 128.0, 75.0 / 1024.0, 11025.0 / 98304.0];
    let mut poly = vec![1.0];
    for _ in 0..d {
        let mut next = vec![0.0; (poly.len() + a.len() - 1).min(a.len())];
        for (i, p) in poly.iter().enumerate() {
            for (j, aj) in a.iter().enumerate() {
                if i + j < next.len() {
                    next[i + j] += p * aj;
                }
            }
        }
        poly = next;
    }
    let pre = (2.0 * std::f64::consts::PI).powf(-df / 2.0);
    let mut tail = 0.0;
    let mut last = 0.0;
    for (k, c) in poly.iter().enumerate() {
        let p = df / 2.0 + k as f64;
        last = pre * c * cut.powf(1.0 - p) / (p - 1.0);
        tail += last;
    }
    (df * (head + tail), df * ((head - head_check).abs() + last.abs()))
}

/// `G_{1+rho} = int_0^inf p_{(1+rho)s}(0) ds = G_1 / (1 + rho)`.
pub fn green_ct(d: usize, rho: f64, eps: f64) -> Result<GreenValues> {
    if d == 0 || !(rho >= 0.0) {
        return Err(invalid(format!("green_ct needs d >= 1 and rho >= 0 (rho={rho})")));
    }
    let mut out = GreenValues::empty(d);
    if d <= 2 {
        out.g_ct = Some(Green::Divergent);
        return Ok(out);
    }
    let g1 = green_ct_unit(d, eps)?;
    for r in &g1.1 {
        out.routes.push(r.clone());
    }
    out.g_ct = Some(Green::Finite(g1.0 / (1.0 + rho)));
    Ok(out)
}

fn green_ct_unit(d: usize, eps: f64) -> Result<(f64, Vec<RouteValue>)> {
    static CACHE: OnceLock<Mutex<HashMap<usize, (f64, Vec<RouteValue>)>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let hit = cache.lock().unwrap().get(&d).cloned();
    let (q, routes) = match hit {
        Some(v) => v,
        None => {
            let (q, qe) = adaptive(d, 10, 1e-10, |phi, _| 1.0 / (1.0 - phi));
            let (t, te) = ct_time_integral(d);
            let routes = vec![
                RouteValue { quantity: "g_ct_unit", method: GreenMethod::Quadrature, value: q, error: qe },
                RouteValue { quantity: "g_ct_unit", method: GreenMethod::TimeIntegral, value: t, error: te },
            ];
            cache.lock().unwrap().insert(d, (q, routes.clone()));
            (q, routes)
        }
    };
    let t = routes[1].value;
    let rel = (q - t).abs() / q;
    if rel > eps {
        return Err(PinError::Numerical(format!(
            "G_1 routes disagree in d={d}: quadrature {q:.12e} vs time integral {t:.12e} (rel {rel:.2e} > eps {eps:.1e})"
        )));
    }
    Ok((q, routes))
}

/// Parity Green functions of the two-step tilted medium and their gap to `G^{X-Y}`.
///
/// The gap is computed twice: as `G^{X-Y} - G_odd` and from its own integrand, which is
/// proportional to `h`; the two must agree within `eps` relative to `G^{X-Y}`.
pub fn tilted_greens(d: usize, h: f64, eps: f64) -> Result<GreenValues> {
    if d < 4 {
        return Err(invalid(format!("tilted Green functions need d >= 4 (d={d})")));
    }
    if !(0.0..1.0).contains(&h) {
        return Err(invalid(format!("tilt h={h} outside [0, 1)")));
    }
    let df = d as f64;
    let psi = move |phi: f64, s2: f64| phi * phi - h / (df * df) * s2;
    let target = (eps * 0.01).min(1e-9);
    let (pair, pe) = adaptive(d, 10, target, pair_integrand);
    let (even, ee) = adaptive(d, 10, target, move |phi, s2| {
        let p2 = phi * phi;
        let ps = psi(phi, s2);
        p2 * (1.0 + ps) / (1.0 - p2 * ps)
    });
    let (odd, oe) = adaptive(d, 10, target, move |phi, s2| {
        let p2 = phi * phi;
        p2 * (1.0 + p2) / (1.0 - p2 * psi(phi, s2))
    });
    let (gap, ge) = if h == 0.0 {
        (0.0, 0.0)
    } else {
        adaptive(d, 10, target, move |phi, s2| {
            let p2 = phi * phi;
            h / (df * df) * p2 * p2 * s2 / ((1.0 - p2) * (1.0 - p2 * psi(phi, s2)))
        })
    };
    let diff = pair - odd;
    if (diff - gap).abs() > eps * pair {
        return Err(PinError::Numerical(format!(
            "tilted gap mismatch in d={d}, h={h}: difference {diff:.12e} vs gap integral {gap:.12e}"
        )));
    }
    let mut out = GreenValues::empty(d);
    out.g_pair = Some(Green::Finite(pair));
    out.g_even = Some(even);
    out.g_odd = Some(odd);
    out.gap = Some(gap);
    out.routes = vec![
        RouteValue { quantity: "g_pair", method: GreenMethod::Quadrature, value: pair, error: pe },
        RouteValue { quantity: "g_even", method: GreenMethod::Quadrature, value: even, error: ee },
        RouteValue { quantity: "g_odd", method: GreenMethod::Quadrature, value: odd, error: oe },
        RouteValue { quantity: "gap", method: GreenMethod::Quadrature, value: gap, error: ge },
    ];
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_dimensions_diverge() {
        for d in [1, 2] {
            assert_eq!(green_pair(d, 1e-6).unwrap().g_pair, Some(Green::Divergent));
            assert_eq!(green_ct(d, 0.5, 1e-6).unwrap().g_ct, Some(Green::Divergent));
        }
        assert!(matches!(pair_green_value(1), Err(PinError::Recurrent(1))));
    }

    #[test]
    fn three_dimensional_pair_green_is_watson_minus_one() {
        let (q, _) = adaptive(3, 10, 1e-10, pair_integrand);
        assert!((q - 0.516_386_059_151_978).abs() < 1e-9);
    }

    #[test]
    fn pair_routes_agree_in_four_and_five_dimensions() {
        for d in [4, 5] {
            let g = green_pair(d, 1e-6).unwrap();
            let s = g.routes[0].value;
            let q = g.routes[1].value;
            assert!((s - q).abs() / q < 1e-6, "d={d}: {s} vs {q}");
        }
    }

    #[test]
    fn continuous_green_routes_and_scaling() {
        let g = green_ct(3, 0.0, 1e-6).unwrap();
        let q = g.routes[0].value;
        let t = g.routes[1].value;
        assert!((q - t).abs() / q < 1e-6, "{q} vs {t}");
        let g0 = g.g_ct.unwrap().value().unwrap();
        let mut prev = g0;
        for rho in [0.5, 1.0, 3.0, 10.0, 100.0] {
            let v = green_ct(3, rho, 1e-6).unwrap().g_ct.unwrap().value().unwrap();
            assert_eq!(v * (1.0 + rho), g0);
            assert!(v < prev);
            prev = v;
        }
        // Continuous-time Green function counts the time-zero visit as well.
        let pair = pair_green_value(3).unwrap();
        assert!((g0 - pair - 1.0).abs() < 1e-8);
    }

    #[test]
    fn untilted_parity_greens_collapse() {
        let g = tilted_greens(4, 0.0, 1e-8).unwrap();
        let pair = g.g_pair.unwrap().value().unwrap();
        assert!((g.g_even.unwrap() - pair).abs() < 1e-10);
        assert!((g.g_odd.unwrap() - pair).abs() < 1e-10);
        assert_eq!(g.gap, Some(0.0));
        assert!((pair - pair_green_value(4).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn tilt_orders_parity_greens_and_gap_is_linear() {
        let g = tilted_greens(4, 0.05, 1e-8).unwrap();
        assert!(g.g_even.unwrap() < g.g_odd.unwrap());
        assert!(g.gap.unwrap() > 0.0);
        let slopes: Vec<f64> = [0.01, 0.02, 0.04]
            .iter()
            .map(|&h| tilted_greens(4, h, 1e-8).unwrap().gap.unwrap() / h)
            .collect();
        for s in &slopes {
            assert!((s / slopes[0] - 1.0).abs() < 0.05);
        }
    }
}
