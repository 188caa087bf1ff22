//! Averages over the Brillouin zone of functions of `phi(k)` and `sum_i sin^2 k_i`.
//!
//! The integrands used here are even in every coordinate and symmetric under coordinate
//! permutations, and may blow up like `|k|^{-2}` at `k = 0` and at `k = (pi, ..., pi)`.
//! The zone is reduced to `[0, pi]^d`, each axis is split at `pi/2`, and a subcube with
//! `j` upper halves is evaluated once and weighted by `C(d, j)`. The two subcubes touching
//! a singular corner use a Duffy map (one pyramid per axis, all equal by symmetry), whose
//! Jacobian `r^{d-1}` cancels the singularity for `d >= 3`.

use std::f64::consts::PI;

use crate::special::gauss_legendre_on;

struct AxisNodes {
    cos: Vec<f64>,
    sin2: Vec<f64>,
    w: Vec<f64>,
}

impl AxisNodes {
    fn on(m: usize, a: f64, b: f64) -> Self {
        let (x, w) = gauss_legendre_on(m, a, b);
        Self {
            cos: x.iter().map(|v| v.cos()).collect(),
            sin2: x.iter().map(|v| v.sin().powi(2)).collect(),
            w,
        }
    }
}

/// Tensor sum over `axes` of `f(sign * (c0 + sum cos)/d, s0 + sum sin^2)` times weights.
fn tensor<F: Fn(f64, f64) -> f64>(axes: &[&AxisNodes], d: f64, sign: f64, c0: f64, s0: f64, f: &F) -> f64 {
    match axes.split_first() {
        None => f(sign * c0 / d, s0),
        Some((ax, rest)) => {
            let mut acc = 0.0;
            for i in 0..ax.w.len() {
                acc += ax.w[i] * tensor(rest, d, sign, c0 + ax.cos[i], s0 + ax.sin2[i], f);
            }
            acc
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Integral over `[0, pi/2]^d` of `f(sign * phi, s2)` via `d` identical Duffy pyramids.
fn duffy_corner<F: Fn(f64, f64) -> f64>(d: usize, m: usize, sign: f64, f: &F) -> f64 {
    let a = PI / 2.0;
    let (rs, rw) = gauss_legendre_on(m, 0.0, a);
    let (us, uw) = gauss_legendre_on(m, 0.0, 1.0);
    let df = d as f64;
    let mut total = 0.0;
    for (r, wr) in rs.iter().zip(&rw) {
        let ax = AxisNodes {
            cos: us.iter().map(|u| (r * u).cos()).collect(),
            sin2: us.iter().map(|u| (r * u).sin().powi(2)).collect(),
            w: uw.clone(),
        };
        let axes: Vec<&AxisNodes> = (1..d).map(|_| &ax).collect();
        let jac = r.powi(d as i32 - 1);
        total += wr * jac * tensor(&axes, df, sign, r.cos(), r.sin().powi(2), f);
    }
    df * total
}

fn average_at_order<F: Fn(f64, f64) -> f64>(d: usize, m: usize, f: &F) -> f64 {
    let low = AxisNodes::on(m, 0.0, PI / 2.0);
    let high = AxisNodes::on(m, PI / 2.0, PI);
    let df = d as f64;
    let mut total = duffy_corner(d, m, 1.0, f) + duffy_corner(d, m, -1.0, f);
    for j in 1..d {
        let mut axes: Vec<&AxisNodes> = Vec::with_capacity(d);
        axes.extend((0..d - j).map(|_| &low));
        axes.extend((0..j).map(|_| &high));
        total += binomial(d, j) * tensor(&axes, df, 1.0, 0.0, 0.0, f);
    }
    total / PI.powi(d as i32)
}

/// `(2 pi)^{-d} int_{[-pi, pi]^d} f(phi(k), sum_i sin^2 k_i) dk` with Gauss-Legendre order `m`
/// per axis; returns the value at order `ceil(1.5 m)` and its difference from order `m`.
pub fn torus_average<F: Fn(f64, f64) -> f64>(d: usize, m: usize, f: F) -> (f64, f64) {
    assert!(d >= 1 && m >= 2);
    let coarse = average_at_order(d, m, &f);
    let fine = average_at_order(d, (3 * m).div_ceil(2), &f);
    (fine, (fine - coarse).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_moments() {
        // E[phi^2] = 1/(2d) is the two-step return probability.
        for d in 1..=4 {
            let (v, e) = torus_average(d, 8, |phi, _| phi * phi);
            assert!((v - 0.5 / d as f64).abs() < 1e-13, "d={d}");
            assert!(e < 1e-12);
        }
        // E[sum sin^2] = d/2.
        let (v, _) = torus_average(3, 8, |_, s2| s2);
        assert!((v - 1.5).abs() < 1e-13);
    }

    #[test]
    fn watson_integral_in_three_dimensions() {
        // Expected return count of the simple walk on Z^3.
        let (v, e) = torus_average(3, 16, |phi, _| 1.0 / (1.0 - phi));
        assert!((v - 1.516_386_059_151_978).abs() < 1e-9, "{v}");
        assert!(e < 1e-8);
    }
}
