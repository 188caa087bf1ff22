//! Homogeneous pinning over the renewal laws of the pair walk.
//!
//! Averaging the renewal expansion over the medium replaces every collision weight by the
//! inter-arrival law `K(n) = P(X_n = Y_n) / G^{X-Y}` (discrete) or the density
//! `K(s) = p_{(1+rho)s}(0) / G_{1+rho}` (continuous), and the coupling by `z`.

use serde::Serialize;

use crate::error::{invalid, PinError};
use crate::kernels::{green_ct, pair_green_value, return_probabilities};
use crate::special::{gauss_legendre_on, hurwitz_zeta, least_squares, scaled_bessel_row};
use crate::{Mode, Result};

/// Exact masses kept by `renewal_law_discrete` unless asked otherwise.
pub const DEFAULT_LAW_N_MAX: usize = 4096;

/// `sum_j coeffs[j] x^{-(exponent + j)}`, used beyond the last stored mass.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerTail {
    pub exponent: f64,
    pub coeffs: Vec<f64>,
    /// Coefficients of `(-1)^n sum_j a_j n^{-(exponent + j)}`, for laws that differ between
    /// even and odd `n`. Integrals over the tail ignore this part.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alternating: Vec<f64>,
}

/// `sum_{n >= a} (-1)^n n^{-q}` for integer `a >= 1`.
fn alternating_zeta(q: f64, a: f64) -> f64 {
    let scale = 2f64.powf(-q);
    let even = scale * hurwitz_zeta(q, (a / 2.0).ceil());
    let odd = scale * hurwitz_zeta(q, ((a - 1.0) / 2.0).ceil() + 0.5);
    even - odd
}

impl PowerTail {
    pub fn value(&self, x: f64) -> f64 {
        let smooth: f64 = self.coeffs.iter().enumerate().map(|(j, c)| c * x.powf(-self.exponent - j as f64)).sum();
        if self.alternating.is_empty() {
            return smooth;
        }
        let sign = if x.round() as i64 % 2 == 0 { 1.0 } else { -1.0 };
        smooth + sign * self.alternating.iter().enumerate().map(|(j, c)| c * x.powf(-self.exponent - j as f64)).sum::<f64>()
    }

    pub fn scaled(&self, f: f64) -> Self {
        Self {
            exponent: self.exponent,
            coeffs: self.coeffs.iter().map(|c| c * f).collect(),
            alternating: self.alternating.iter().map(|c| c * f).collect(),
        }
    }

    /// Fit on samples `(x, y)` with `terms` coefficients.
    pub(crate) fn fit(exponent: f64, xs: &[f64], ys: &[f64], terms: usize) -> Self {
        let rows: Vec<Vec<f64>> = xs.iter().map(|x| (0..terms).map(|j| x.powf(-exponent - j as f64)).collect()).collect();
        Self { exponent, coeffs: least_squares(&rows, ys), alternating: Vec::new() }
    }

    /// Three smooth and three alternating terms fitted to `values[n]` for `n` in `lo..values.len()`.
    pub(crate) fn fit_parity(exponent: f64, lo: usize, values: &[f64]) -> Self {
        let rows: Vec<Vec<f64>> = (lo..values.len())
            .map(|n| {
                let x = n as f64;
                let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                (0..3).map(|j| x.powf(-exponent - j as f64)).chain((0..3).map(|j| sign * x.powf(-exponent - j as f64))).collect()
            })
            .collect();
        let c = least_squares(&rows, &values[lo..]);
        Self { exponent, coeffs: c[..3].to_vec(), alternating: c[3..].to_vec() }
    }

    /// `sum_{n >= a} value(n)` for integer `a >= 1`.
    pub(crate) fn sum_from(&self, a: f64) -> f64 {
        let smooth: f64 = self.coeffs.iter().enumerate().map(|(j, c)| c * hurwitz_zeta(self.exponent + j as f64, a)).sum();
        smooth + self.alternating.iter().enumerate().map(|(j, c)| c * alternating_zeta(self.exponent + j as f64, a)).sum::<f64>()
    }

    /// `sum_{n >= a} n value(n)`, finite when `exponent > 2`.
    pub(crate) fn first_moment_from(&self, a: f64) -> Option<f64> {
        (self.exponent > 2.0).then(|| {
            let smooth: f64 = self.coeffs.iter().enumerate().map(|(j, c)| c * hurwitz_zeta(self.exponent - 1.0 + j as f64, a)).sum();
            let alt: f64 =
                self.alternating.iter().enumerate().map(|(j, c)| c * alternating_zeta(self.exponent - 1.0 + j as f64, a)).sum();
            smooth + alt
        })
    }

    /// `int_a^inf value(x) e^{-f x} dx` for `f >= 0`.
    fn discounted_integral(&self, a: f64, f: f64) -> f64 {
        if f == 0.0 {
            return self
                .coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| {
                    let p = self.exponent + j as f64;
                    c * a.powf(1.0 - p) / (p - 1.0)
                })
                .sum();
        }
        let mut acc = 0.0;
        let mut lo = a;
        for _ in 0..64 {
            let hi = 2.0 * lo;
            let (xs, ws) = gauss_legendre_on(24, lo, hi);
            acc += xs.iter().zip(&ws).map(|(x, w)| w * self.value(*x) * (-f * x).exp()).sum::<f64>();
            lo = hi;
            if f * lo > 60.0 {
                break;
            }
        }
        acc + (-f * lo).exp() * self.discounted_integral(lo, 0.0)
    }
}

/// Inter-arrival law of a renewal process, possibly with a fitted power tail.
#[derive(Debug, Clone, Serialize)]
pub struct RenewalLaw {
    pub mode: Mode,
    /// Grid spacing of `masses` (1 in discrete time).
    pub step: f64,
    /// Discrete: `masses[n] = K(n)`, `masses[0] = 0`. Continuous: density at `n * step`.
    pub masses: Vec<f64>,
    pub tail: Option<PowerTail>,
    /// `alpha` with `K ~ C n^{-(1+alpha)}`.
    pub tail_index: Option<f64>,
    pub tail_constant: Option<f64>,
    /// First moment; `None` when infinite.
    pub mean: Option<f64>,
    /// `1 - total mass`.
    pub defect: f64,
}

impl RenewalLaw {
    /// Discrete law from explicit masses (`masses[0]` must be 0) and an optional tail beyond them.
    pub fn from_masses(masses: Vec<f64>, tail: Option<PowerTail>) -> Result<Self> {
        if masses.is_empty() || masses[0] != 0.0 || masses.iter().any(|m| !(*m >= 0.0)) {
            return Err(invalid("masses must be nonnegative with masses[0] = 0"));
        }
        let mut law = Self {
            mode: Mode::Discrete,
            step: 1.0,
            masses,
            tail_index: tail.as_ref().map(|t| t.exponent - 1.0),
            tail_constant: tail.as_ref().map(|t| t.coeffs[0]),
            tail,
            mean: None,
            defect: 0.0,
        };
        law.defect = 1.0 - law.total();
        let n_max = law.n_max() as f64;
        let head: f64 = law.masses.iter().enumerate().map(|(n, m)| n as f64 * m).sum();
        law.mean = match &law.tail {
            None => Some(head),
            Some(t) => t.first_moment_from(n_max + 1.0).map(|m| head + m),
        };
        Ok(law)
    }

    /// Largest stored index.
    pub fn n_max(&self) -> usize {
        self.masses.len() - 1
    }

    /// `K(n)`, from the tail model beyond the stored range.
    pub fn mass(&self, n: usize) -> f64 {
        if n < self.masses.len() {
            self.masses[n]
        } else {
            self.tail.as_ref().map_or(0.0, |t| t.value(n as f64))
        }
    }

    /// Total mass (discrete sum or continuous integral), tail included.
    pub fn total(&self) -> f64 {
        self.laplace(0.0)
    }

    /// `sum_{k > n} K(k)` (discrete).
    pub fn tail_sum(&self, n: usize) -> f64 {
        let stored: f64 = self.masses.iter().skip(n + 1).sum();
        let beyond = self.tail.as_ref().map_or(0.0, |t| t.sum_from((self.n_max().max(n) + 1) as f64));
        if n >= self.n_max() {
            return beyond;
        }
        stored + beyond
    }

    /// `sum_n K(n) e^{-f n}` or `int K(s) e^{-f s} ds`.
    pub fn laplace(&self, f: f64) -> f64 {
        let top = self.n_max() as f64 * self.step;
        match self.mode {
            Mode::Discrete => {
                let head: f64 = self.masses.iter().enumerate().map(|(n, m)| m * (-f * n as f64).exp()).sum();
                let tail = match &self.tail {
                    None => 0.0,
                    Some(t) if f == 0.0 => t.sum_from(top + 1.0),
                    // Midpoint rule: sum_{n > top} g(n) = int_{top + 1/2}^inf g + O(g'').
                    Some(t) => t.discounted_integral(top + 0.5, f),
                };
                head + tail
            }
            Mode::Continuous => {
                let n = self.n_max();
                let mut head = 0.0;
                for (k, m) in self.masses.iter().enumerate() {
                    let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                    head += w * m * (-f * k as f64 * self.step).exp();
                }
                head * self.step + self.tail.as_ref().map_or(0.0, |t| t.discounted_integral(top, f))
            }
        }
    }

    /// Least-squares slope of `log K(n)` against `log n` over `[lo, hi]`.
    pub fn fit_tail_exponent(&self, lo: usize, hi: usize) -> f64 {
        let pts: Vec<(f64, f64)> = (lo..=hi.min(self.n_max()))
            .filter(|&n| self.masses[n] > 0.0)
            .map(|n| ((n as f64 * self.step).ln(), self.masses[n].ln()))
            .collect();
        let k = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (mx, my) = (sx / k, sy / k);
        let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        num / den
    }

    /// `sum_{n <= m} n K(n)`, the truncated first moment.
    pub fn partial_mean(&self, m: usize) -> f64 {
        (1..=m).map(|n| n as f64 * self.mass(n)).sum()
    }
}

fn check_tail_range(n_max: usize) -> Result<()> {
    if n_max < 32 {
        return Err(invalid(format!("need n_max >= 32 for the tail fit (n_max={n_max})")));
    }
    Ok(())
}

/// `K(n) = P(X_n = Y_n) / G^{X-Y}` for `n <= n_max`, with a three-term power tail fitted on
/// `[n_max/2, n_max]`.
pub fn renewal_law_discrete(d: usize, n_max: usize) -> Result<RenewalLaw> {
    if d <= 2 {
        return Err(PinError::Recurrent(d));
    }
    check_tail_range(n_max)?;
    let g = pair_green_value(d)?;
    let r = return_probabilities(d, 2 * n_max);
    let mut masses = vec![0.0; n_max + 1];
    for n in 1..=n_max {
        masses[n] = r[2 * n] / g;
    }
    let xs: Vec<f64> = (n_max / 2..=n_max).map(|n| n as f64).collect();
    let ys: Vec<f64> = (n_max / 2..=n_max).map(|n| masses[n]).collect();
    let tail = PowerTail::fit(d as f64 / 2.0, &xs, &ys, 3);
    RenewalLaw::from_masses(masses, Some(tail))
}

/// Density `K_{1+rho}(s)` on the grid `k * step`, `k * step <= s_max`, with a fitted power tail.
pub fn renewal_law_continuous(d: usize, rho: f64, step: f64, s_max: f64) -> Result<RenewalLaw> {
    if d <= 2 {
        return Err(PinError::Recurrent(d));
    }
    if !(step > 0.0 && s_max >= 32.0 * step) {
        return Err(invalid(format!("need step > 0 and s_max >= 32 step (step={step}, s_max={s_max})")));
    }
    let g = green_ct(d, rho, 1e-7)?.g_ct.and_then(|v| v.value()).ok_or(PinError::Recurrent(d))?;
    let n = (s_max / step).round() as usize;
    let df = d as f64;
    let density = |s: f64| scaled_bessel_row((1.0 + rho) * s / df, 0)[0].powi(d as i32) / g;
    let masses: Vec<f64> = (0..=n).map(|k| density(k as f64 * step)).collect();
    let xs: Vec<f64> = (n / 2..=n).map(|k| k as f64 * step).collect();
    let ys: Vec<f64> = (n / 2..=n).map(|k| masses[k]).collect();
    let tail = PowerTail::fit(df / 2.0, &xs, &ys, 3);
    let top = n as f64 * step;
    let mut law = RenewalLaw {
        mode: Mode::Continuous,
        step,
        masses,
        tail_index: Some(df / 2.0 - 1.0),
        tail_constant: Some(tail.coeffs[0]),
        tail: Some(tail),
        mean: None,
        defect: 0.0,
    };
    law.defect = 1.0 - law.total();
    if d >= 5 {
        let head: f64 = law.masses.iter().enumerate().map(|(k, m)| {
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            w * k as f64 * step * m
        }).sum::<f64>() * step;
        let t = law.tail.as_ref().unwrap();
        let rest: f64 = t.coeffs.iter().enumerate().map(|(j, c)| {
            let p = t.exponent + j as f64 - 1.0;
            c * top.powf(1.0 - p) / (p - 1.0)
        }).sum();
        law.mean = Some(head + rest);
    }
    Ok(law)
}

/// Rescaled sequence `c_0 = 1`, `c_N = sum_{n=1}^{N} z K(n) c_{N-n}`; returns `log c_N` for all `N <= n`.
pub fn annealed_sequence(z: f64, law: &RenewalLaw, n: usize) -> Result<Vec<f64>> {
    if law.mode != Mode::Discrete {
        return Err(invalid("annealed_sequence needs a discrete law"));
    }
    if !(z >= 0.0) {
        return Err(invalid(format!("z must be >= 0 (z={z})")));
    }
    // c_j = scaled[j] * e^{log_scale[j]}; rescale every block so the sums never overflow.
    let mut scaled = vec![0.0; n + 1];
    let mut logs = vec![f64::NEG_INFINITY; n + 1];
    scaled[0] = 1.0;
    logs[0] = 0.0;
    let mut scale = 0.0;
    for j in 1..=n {
        let mut acc = 0.0;
        for k in 1..=j {
            acc += law.mass(k) * scaled[j - k];
        }
        scaled[j] = z * acc;
        logs[j] = if scaled[j] > 0.0 { scaled[j].ln() + scale } else { f64::NEG_INFINITY };
        if scaled[j] > 1e200 {
            scaled[..=j].iter_mut().for_each(|v| *v *= 1e-200);
            scale += 200.0 * std::f64::consts::LN_10;
        }
    }
    Ok(logs)
}

/// `log E^Y[Z^{pin}_N]` (constrained) or `log sum_{j <= N} c_j` (free end).
pub fn annealed_partition(z: f64, law: &RenewalLaw, n: usize, constrained: bool) -> Result<f64> {
    let logs = annealed_sequence(z, law, n)?;
    if constrained {
        return Ok(logs[n]);
    }
    let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln())
}

/// Root `F` of `z sum_n K(n) e^{-F n} = 1` for `z > 1`, else 0.
pub fn annealed_free_energy(z: f64, law: &RenewalLaw, tol: f64) -> Result<f64> {
    if !(z > 0.0) || !(tol > 0.0) {
        return Err(invalid(format!("need z > 0 and tol > 0 (z={z}, tol={tol})")));
    }
    let phi = |f: f64| z * law.laplace(f) - 1.0;
    // The root at z = 1 is F = 0 for a proper law; a defect of order 1e-10 must not move it.
    if z <= 1.0 || phi(0.0) <= 0.0 {
        return Ok(0.0);
    }
    let mut hi = match law.mode {
        Mode::Discrete => z.ln(),
        Mode::Continuous => z * law.masses[0],
    };
    if phi(hi) > 0.0 {
        hi *= 2.0;
        if phi(hi) > 0.0 {
            return Err(PinError::Numerical(format!("bisection bracket failed at z={z}")));
        }
    }
    let mut lo = 0.0;
    while hi - lo > tol * hi.max(1e-300) && hi - lo > 1e-300 {
        let mid = 0.5 * (lo + hi);
        if phi(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `F_ann` along a grid of couplings, with the slope of `F ~ C (z - 1)` fitted through the origin.
#[derive(Debug, Clone, Serialize)]
pub struct AnnealedCurve {
    pub points: Vec<(f64, f64)>,
    pub slope_fit: f64,
}

pub fn annealed_curve(law: &RenewalLaw, zs: &[f64], tol: f64) -> Result<AnnealedCurve> {
    let points: Vec<(f64, f64)> = zs.iter().map(|&z| annealed_free_energy(z, law, tol).map(|f| (z, f))).collect::<Result<_>>()?;
    let (num, den) = points
        .iter()
        .filter(|p| p.0 > 1.0)
        .fold((0.0, 0.0), |a, p| (a.0 + (p.0 - 1.0) * p.1, a.1 + (p.0 - 1.0).powi(2)));
    Ok(AnnealedCurve { points, slope_fit: if den > 0.0 { num / den } else { 0.0 } })
}

/// Annealed critical coupling: `log(1 + 1/G^{X-Y})` in discrete time, `1/G_{1+rho}` in
/// continuous time, and 0 when the pair walk is recurrent.
pub fn critical_point(mode: Mode, d: usize, rho: f64) -> Result<f64> {
    if d == 0 {
        return Err(invalid("d must be >= 1"));
    }
    if d <= 2 {
        return Ok(0.0);
    }
    match mode {
        Mode::Discrete => Ok((1.0 / pair_green_value(d)?).ln_1p()),
        Mode::Continuous => {
            let g = green_ct(d, rho, 1e-7)?.g_ct.and_then(|v| v.value()).ok_or(PinError::Recurrent(d))?;
            Ok(1.0 / g)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationLength {
    pub length: u64,
    /// `1 / (z - 1)` before rounding.
    pub exact: f64,
}

/// `L = floor(1/(z-1))`, where values within `1e-9` relative of an integer count as that integer.
pub fn correlation_length(z: f64) -> Result<CorrelationLength> {
    if !(z > 1.0) || !z.is_finite() {
        return Err(invalid(format!("correlation length needs z > 1 (z={z})")));
    }
    let exact = 1.0 / (z - 1.0);
    let near = exact.round();
    let length = if (exact - near).abs() <= 1e-9 * exact { near } else { exact.floor() };
    Ok(CorrelationLength { length: length as u64, exact })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alternating_tail_sums_directly() {
        let t = PowerTail { exponent: 2.5, coeffs: vec![0.3, -0.1], alternating: vec![0.05, 0.02] };
        for a in [7usize, 8] {
            let direct: f64 = (a..2_000_000).map(|n| t.value(n as f64)).sum();
            // Remainder of the smooth part beyond the cut, about 0.3 * x^{-1.5} / 1.5.
            let rest = 0.2 * 2e6f64.powf(-1.5);
            assert!((t.sum_from(a as f64) - direct - rest).abs() < 1e-12, "a={a}");
        }
        assert!((t.scaled(2.0).value(9.0) - 2.0 * t.value(9.0)).abs() < 1e-15);
    }

    #[test]
    fn pair_law_is_normalised() {
        for d in [3, 4, 5, 6] {
            let law = renewal_law_discrete(d, 1024).unwrap();
            assert!(law.defect.abs() < 1e-9, "d={d} defect={}", law.defect);
        }
    }

    #[test]
    fn tail_exponent_in_four_dimensions() {
        let law = renewal_law_discrete(4, 2048).unwrap();
        let slope = law.fit_tail_exponent(256, 2048);
        assert!((slope + 2.0).abs() < 0.05, "{slope}");
        assert_eq!(law.tail_index, Some(1.0));
    }

    #[test]
    fn mean_finite_only_above_four_dimensions() {
        let five = renewal_law_discrete(5, 1024).unwrap();
        let m = five.mean.unwrap();
        assert!(m.is_finite() && m > 1.0);
        assert!((five.partial_mean(1024) - m).abs() < 0.05 * m);
        let four = renewal_law_discrete(4, 4096).unwrap();
        assert!(four.mean.is_none());
        let (a, b, c) = (four.partial_mean(256), four.partial_mean(1024), four.partial_mean(4096));
        // Logarithmic growth: equal increments per factor of four.
        assert!(b - a > 0.0 && c - b > 0.0 && ((c - b) / (b - a) - 1.0).abs() < 0.1);
    }

    #[test]
    fn recurrent_dimensions_have_no_law() {
        assert!(matches!(renewal_law_discrete(2, 64), Err(PinError::Recurrent(2))));
    }

    #[test]
    fn zero_coupling_kills_the_pinned_partition() {
        let law = renewal_law_discrete(3, 64).unwrap();
        assert_eq!(annealed_partition(0.0, &law, 5, true).unwrap(), f64::NEG_INFINITY);
        assert_eq!(annealed_partition(0.0, &law, 5, false).unwrap(), 0.0);
    }

    #[test]
    fn recursion_matches_convolution_by_hand() {
        let law = RenewalLaw::from_masses(vec![0.0, 0.5, 0.3, 0.2], None).unwrap();
        let z = 1.5;
        let logs = annealed_sequence(z, &law, 3).unwrap();
        let c1 = z * 0.5;
        let c2 = z * (0.5 * c1 + 0.3);
        let c3 = z * (0.5 * c2 + 0.3 * c1 + 0.2);
        assert!((logs[3].exp() - c3).abs() < 1e-14);
        assert!((logs[2].exp() - c2).abs() < 1e-14);
    }

    #[test]
    fn growth_rate_matches_root() {
        let law = renewal_law_discrete(5, 4096).unwrap();
        for z in [1.05, 1.1, 1.2] {
            let f = annealed_free_energy(z, &law, 1e-12).unwrap();
            let errs: Vec<f64> = [512usize, 1024, 2048]
                .iter()
                .map(|&n| (annealed_partition(z, &law, n, true).unwrap() / n as f64 - f).abs())
                .collect();
            assert!(errs[1] < errs[0] && errs[2] < errs[1], "z={z}: {errs:?}");
            assert!(errs[2] < 2e-3);
        }
    }

    #[test]
    fn free_energy_vanishes_at_and_below_one() {
        let law = renewal_law_discrete(5, 512).unwrap();
        for z in [0.2, 0.9, 1.0] {
            assert_eq!(annealed_free_energy(z, &law, 1e-12).unwrap(), 0.0);
        }
        let mut last = 0.0;
        for k in 1..10 {
            let f = annealed_free_energy(1.0 + 0.01 * k as f64, &law, 1e-12).unwrap();
            assert!(f > last);
            last = f;
        }
    }

    #[test]
    fn linear_slope_in_five_dimensions() {
        let law = renewal_law_discrete(5, DEFAULT_LAW_N_MAX).unwrap();
        let curve = annealed_curve(&law, &[1.02, 1.01, 1.005], 1e-12).unwrap();
        let ratios: Vec<f64> = curve.points.iter().map(|(z, f)| f / (z - 1.0)).collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, 0.0f64), |a, r| (a.0.min(*r), a.1.max(*r)));
        assert!(hi / lo - 1.0 < 0.1, "{ratios:?}");
        // Close to 1 / mean.
        assert!((ratios[2] * law.mean.unwrap() - 1.0).abs() < 0.2);
    }

    #[test]
    fn slope_degenerates_in_four_dimensions() {
        let law = renewal_law_discrete(4, DEFAULT_LAW_N_MAX).unwrap();
        let curve = annealed_curve(&law, &[1.08, 1.04, 1.02], 1e-12).unwrap();
        let r: Vec<f64> = curve.points.iter().map(|(z, f)| f / (z - 1.0)).collect();
        assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
    }

    #[test]
    fn critical_points() {
        assert_eq!(critical_point(Mode::Discrete, 1, 1.0).unwrap(), 0.0);
        assert_eq!(critical_point(Mode::Continuous, 2, 0.5).unwrap(), 0.0);
        let g = pair_green_value(4).unwrap();
        assert!((critical_point(Mode::Discrete, 4, 1.0).unwrap() - (1.0 + 1.0 / g).ln()).abs() < 1e-15);
        let g1 = green_ct(3, 0.0, 1e-7).unwrap().g_ct.unwrap().value().unwrap();
        for rho in [0.0, 0.3, 1.0, 2.5] {
            let b = critical_point(Mode::Continuous, 3, rho).unwrap();
            assert!((b * g1 / (1.0 + rho) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn correlation_lengths() {
        assert_eq!(correlation_length(1.01).unwrap().length, 100);
        assert_eq!(correlation_length(2.0).unwrap().length, 1);
        assert_eq!(correlation_length(1.0 + 1.0 / 64.0).unwrap().length, 64);
        assert_eq!(correlation_length(1.3).unwrap().length, 3);
        assert!(correlation_length(1.0).is_err());
    }

    #[test]
    fn continuous_law_and_free_energy() {
        let law = renewal_law_continuous(5, 0.5, 0.01, 40.0).unwrap();
        assert!(law.defect.abs() < 1e-4, "{}", law.defect);
        assert_eq!(annealed_free_energy(0.99, &law, 1e-10).unwrap(), 0.0);
        let f = annealed_free_energy(1.1, &law, 1e-12).unwrap();
        assert!(f > 0.0 && (1.1 * law.laplace(f) - 1.0).abs() < 1e-9);
    }
}
