//! Renewal processes on `N_0`: sampling, the exact counting generating function, the
//! parity-dependent laws of the tilted medium, and stochastic domination.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::annealed::{PowerTail, RenewalLaw};
use crate::disorder::reverse_step;
use crate::error::{invalid, PinError};
use crate::kernels::tilted_greens;
use crate::rng::{stream, Module};
use crate::stats::McEstimate;
use crate::{Mode, Result};

/// Renewal times `0 = points[0] < points[1] < ...`, all `<= horizon`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RenewalPath {
    pub points: Vec<u64>,
    pub horizon: u64,
}

impl RenewalPath {
    /// `|points ∩ [0, n]|`, the origin included.
    pub fn count_until(&self, n: u64) -> usize {
        self.points.partition_point(|&p| p <= n)
    }
}

fn check_discrete(law: &RenewalLaw) -> Result<()> {
    if law.mode != Mode::Discrete {
        return Err(invalid("renewal operations need a discrete law"));
    }
    Ok(())
}

/// Inverse-CDF sampler over gaps up to a fixed horizon.
#[derive(Debug, Clone)]
pub struct RenewalSampler {
    cdf: Vec<f64>,
}

impl RenewalSampler {
    pub fn new(law: &RenewalLaw, horizon: u64) -> Result<Self> {
        check_discrete(law)?;
        if law.defect.abs() > 1e-8 {
            return Err(invalid(format!("law is not normalised (defect {:e})", law.defect)));
        }
        let mut cdf = Vec::with_capacity(horizon as usize + 1);
        let mut acc = 0.0;
        cdf.push(0.0);
        for n in 1..=horizon as usize {
            acc += law.mass(n);
            cdf.push(acc);
        }
        Ok(Self { cdf })
    }

    pub fn horizon(&self) -> u64 {
        (self.cdf.len() - 1) as u64
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> RenewalPath {
        let horizon = self.horizon();
        let mut points = vec![0u64];
        let mut at = 0u64;
        loop {
            let u: f64 = rng.random();
            // Gaps with u beyond the stored CDF are longer than the horizon.
            let gap = self.cdf.partition_point(|&c| c < u) as u64;
            if gap > horizon || at + gap > horizon {
                break;
            }
            at += gap.max(1);
            points.push(at);
        }
        RenewalPath { points, horizon }
    }
}

pub fn sample_renewal(law: &RenewalLaw, horizon: u64, seed: u64) -> Result<RenewalPath> {
    Ok(RenewalSampler::new(law, horizon)?.sample(&mut stream(seed, Module::Renewal, 0)))
}

/// `E[s^{|iota ∩ (0, N]|}]` by the backward recursion
/// `g(j) = s sum_{n <= N-j} K(n) g(j+n) + sum_{n > N-j} K(n)`.
pub fn exact_gf_dp(law: &RenewalLaw, n: usize, s: f64) -> Result<f64> {
    check_discrete(law)?;
    if !(s > 0.0 && s <= 1.0) {
        return Err(invalid(format!("s={s} outside (0, 1]")));
    }
    let k: Vec<f64> = (0..=n).map(|m| law.mass(m)).collect();
    // tails[m] = sum_{i > m} K(i)
    let mut tails = vec![0.0; n + 1];
    tails[n] = law.tail_sum(n);
    for m in (0..n).rev() {
        tails[m] = tails[m + 1] + k[m + 1];
    }
    let mut g = vec![0.0; n + 1];
    for j in (0..=n).rev() {
        let mut acc = 0.0;
        for step in 1..=n - j {
            acc += k[step] * g[j + step];
        }
        g[j] = s * acc + tails[n - j];
    }
    Ok(g[0])
}

/// Parameters of the damped renewal count `N^{1-delta2} E[exp(-c N^{-delta1} |iota ∩ [0,N]|)]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DampedCountParams {
    pub c: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub n_grid: Vec<usize>,
    /// Stable index of the comparison subordinator; recorded, not used.
    pub alpha: f64,
}

impl Default for DampedCountParams {
    fn default() -> Self {
        Self { c: 1.0, delta1: 0.55, delta2: 0.9, n_grid: (8..=12).map(|k| 1 << k).collect(), alpha: 1.0 }
    }
}

impl DampedCountParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) {
            return Err(invalid(format!("c={} must be positive", self.c)));
        }
        if !(0.0 <= self.delta1 && self.delta1 < self.delta2 && self.delta2 < 1.0) {
            return Err(invalid(format!("need 0 <= delta1 < delta2 < 1 (got {}, {})", self.delta1, self.delta2)));
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("N grid must be positive and strictly increasing"));
        }
        Ok(())
    }

    pub fn damping(&self, n: usize) -> f64 {
        (-self.c * (n as f64).powf(-self.delta1)).exp()
    }

    pub fn prefactor(&self, n: usize) -> f64 {
        (n as f64).powf(1.0 - self.delta2)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DampedCountRow {
    pub n: usize,
    /// `E[s^{|iota ∩ [0,N]|}]`, the renewal at the origin counted.
    pub value: f64,
    pub prefactored_value: f64,
    /// Monte Carlo estimate of `prefactored_value`.
    pub mc: Option<McEstimate>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DampedCountScan {
    pub params: DampedCountParams,
    pub rows: Vec<DampedCountRow>,
    /// `prefactored(N_{k+1}) / prefactored(N_k)`.
    pub ratios: Vec<f64>,
    /// The same ratios as rates per tenfold increase of `N`: `ratio^{1 / log10(N_{k+1} / N_k)}`.
    pub decade_ratios: Vec<f64>,
    pub decreasing: bool,
    /// Every decade at least halves the value.
    pub decays: bool,
}

/// Exact scan over `params.n_grid`; with `mc = Some((replicas, seed))` each row also gets a
/// sampled estimate.
pub fn damped_count_scan(params: &DampedCountParams, law: &RenewalLaw, mc: Option<(usize, u64)>) -> Result<DampedCountScan> {
    params.validate()?;
    let mut rows = Vec::with_capacity(params.n_grid.len());
    for (k, &n) in params.n_grid.iter().enumerate() {
        let s = params.damping(n);
        let value = s * exact_gf_dp(law, n, s)?;
        let pre = params.prefactor(n);
        let mc = match mc {
            None => None,
            Some((replicas, seed)) => {
                let sampler = RenewalSampler::new(law, n as u64)?;
                let samples: Vec<f64> = (0..replicas as u64)
                    .into_par_iter()
                    .map(|r| {
                        let path = sampler.sample(&mut stream(seed, Module::Renewal, ((k as u64) << 32) | r));
                        pre * s.powi(path.count_until(n as u64) as i32)
                    })
                    .collect();
                Some(McEstimate::from_samples(&samples, seed))
            }
        };
        rows.push(DampedCountRow { n, value, prefactored_value: pre * value, mc });
    }
    let ratios: Vec<f64> = rows.windows(2).map(|w| w[1].prefactored_value / w[0].prefactored_value).collect();
    let decade_ratios: Vec<f64> = rows
        .windows(2)
        .zip(&ratios)
        .map(|(w, r)| r.powf(1.0 / (w[1].n as f64 / w[0].n as f64).log10()))
        .collect();
    Ok(DampedCountScan {
        params: params.clone(),
        decreasing: ratios.iter().all(|&r| r < 1.0),
        decays: decade_ratios.iter().all(|&r| r <= 0.5),
        ratios,
        decade_ratios,
        rows,
    })
}

/// Parity-dependent inter-arrival laws of the pair walk when the medium is the two-step tilted walk.
#[derive(Debug, Clone, Serialize)]
pub struct ParityLaw {
    pub d: usize,
    pub h: f64,
    /// Law of the next gap after a renewal at an even time.
    pub even: RenewalLaw,
    /// Law of the next gap after a renewal at an odd time.
    pub odd: RenewalLaw,
    pub g_even: f64,
    pub g_odd: f64,
    /// Unnormalised `E[p_n(Y_n)]`, index `n`.
    pub weight_even: Vec<f64>,
    /// Unnormalised `E[p_n(Y_{n+1} - Y_1) | Y_1 = e_1]`.
    pub weight_odd: Vec<f64>,
    /// Largest relative disagreement between the direct and Fourier routes on small `n`.
    pub route_gap: f64,
    /// `|1 - sum K|` for each law, tail included.
    pub normalisation_error: (f64, f64),
}

/// Nodes of the exact grid rule; the parity weights cost one pass per node.
const PARITY_NODE_BUDGET: f64 = 3e7;

/// Both parity weight sequences for `n <= n_max` from the torus integrals
/// `E[phi^n psi^{floor(n/2)} phi^{n mod 2}]` and the odd-start analogue.
///
/// Every integrand is a trigonometric polynomial of degree at most `2 n_max` in each
/// coordinate, so the uniform grid with `2 n_max + 1` points per axis integrates it exactly.
/// Only cosines enter, which folds each axis onto `n_max + 1` nodes, and the integrand is
/// symmetric, so nodes are visited as sorted tuples with multinomial weights.
fn parity_weights_fourier(d: usize, h: f64, n_max: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let half = n_max + 1;
    let nodes = binomial_f(half + d - 1, d);
    if nodes > PARITY_NODE_BUDGET {
        return Err(PinError::TooLarge(format!("parity grid with {nodes:.3e} nodes in d={d}, n_max={n_max}")));
    }
    let m_pts = (2 * n_max + 1) as f64;
    let cosines: Vec<f64> = (0..half).map(|l| (2.0 * std::f64::consts::PI * l as f64 / m_pts).cos()).collect();
    let df = d as f64;
    let m_top = n_max / 2;
    let mut s0 = vec![0.0; m_top + 1];
    let mut s2 = vec![0.0; m_top + 1];
    let mut s4 = vec![0.0; m_top + 1];
    // Nodes are summed in blocks before joining the totals to keep rounding small.
    let mut b0 = vec![0.0; m_top + 1];
    let mut b2 = vec![0.0; m_top + 1];
    let mut b4 = vec![0.0; m_top + 1];
    let mut in_block = 0usize;
    let flush = |b: &mut Vec<f64>, s: &mut Vec<f64>| {
        for (x, y) in s.iter_mut().zip(b.iter_mut()) {
            *x += *y;
            *y = 0.0;
        }
    };
    let mut fact = vec![1.0f64; d + 1];
    for i in 1..=d {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut idx = vec![0usize; d];
    loop {
        // Multiplicity: permutations of the sorted tuple times the folded-axis weights.
        let mut weight = fact[d];
        let mut run = 1;
        for a in 0..d {
            if idx[a] != 0 {
                weight *= 2.0;
            }
            if a > 0 && idx[a] == idx[a - 1] {
                run += 1;
                weight /= run as f64;
            } else {
                run = 1;
            }
        }
        let mut phi = 0.0;
        let mut sin2 = 0.0;
        for &l in &idx {
            let c = cosines[l];
            phi += c;
            sin2 += 1.0 - c * c;
        }
        phi /= df;
        let p2 = phi * phi;
        let psi = p2 - h / (df * df) * sin2;
        let u = p2 * psi;
        let mut pw = weight;
        for m in 0..=m_top {
            b0[m] += pw;
            b2[m] += pw * p2;
            b4[m] += pw * p2 * p2;
            pw *= u;
        }
        in_block += 1;
        if in_block == 512 {
            flush(&mut b0, &mut s0);
            flush(&mut b2, &mut s2);
            flush(&mut b4, &mut s4);
            in_block = 0;
        }
        // Next sorted tuple.
        let mut a = d;
        loop {
            if a == 0 {
                flush(&mut b0, &mut s0);
                flush(&mut b2, &mut s2);
                flush(&mut b4, &mut s4);
                let norm = m_pts.powi(d as i32);
                let mut even = vec![0.0; n_max + 1];
                let mut odd = vec![0.0; n_max + 1];
                for n in 1..=n_max {
                    let m = n / 2;
                    if n % 2 == 0 {
                        even[n] = s0[m] / norm;
                        odd[n] = s4[m - 1] / norm;
                    } else {
                        even[n] = s2[m] / norm;
                        odd[n] = s2[m] / norm;
                    }
                }
                return Ok((even, odd));
            }
            a -= 1;
            if idx[a] + 1 < half {
                idx[a] += 1;
                let v = idx[a];
                idx[a + 1..].iter_mut().for_each(|x| *x = v);
                break;
            }
        }
    }
}

fn binomial_f(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// The same weights by propagating the law of `X - Y` in real space, tracking the last medium
/// step while a pair is open. Cost grows like `n^d`; meant for small `n`.
fn parity_weights_direct(d: usize, h: f64, n_max: usize) -> (Vec<f64>, Vec<f64>) {
    const NONE: u8 = u8::MAX;
    let k = 2 * d;
    let kf = k as f64;
    let shift = |v: &[i32], s: u8, sign: i32| {
        let mut w = v.to_vec();
        w[(s / 2) as usize] += if s % 2 == 0 { sign } else { -sign };
        w
    };
    // One time step of both walks; `open` holds the first step of an unfinished medium pair.
    let advance = |state: &BTreeMap<(Vec<i32>, u8), f64>| {
        let mut next: BTreeMap<(Vec<i32>, u8), f64> = BTreeMap::new();
        for ((x, open), &p) in state {
            for sy in 0..k as u8 {
                let (py, new_open) = if *open == NONE {
                    (1.0 / kf, sy)
                } else if sy == *open {
                    ((1.0 + h) / kf, NONE)
                } else if sy == reverse_step(*open) {
                    ((1.0 - h) / kf, NONE)
                } else {
                    (1.0 / kf, NONE)
                };
                let after_y = shift(x, sy, -1);
                for sx in 0..k as u8 {
                    *next.entry((shift(&after_y, sx, 1), new_open)).or_insert(0.0) += p * py / kf;
                }
            }
        }
        next
    };
    let at_origin = |state: &BTreeMap<(Vec<i32>, u8), f64>| {
        state.iter().filter(|((x, _), _)| x.iter().all(|&v| v == 0)).map(|(_, p)| p).sum::<f64>()
    };
    let run = |open: u8| {
        let mut out = vec![0.0; n_max + 1];
        let mut state = BTreeMap::new();
        state.insert((vec![0; d], open), 1.0);
        for n in 1..=n_max {
            state = advance(&state);
            out[n] = at_origin(&state);
        }
        out
    };
    (run(NONE), run(0))
}

/// Masses up to `n_max` are routed through the exact Fourier grid; the first few are
/// recomputed in real space and must agree to `1e-12` relative. Normalisation uses the parity
/// Green functions, and a three-term power tail per parity class of `n` completes the laws.
pub fn parity_law(d: usize, h: f64, n_max: usize) -> Result<ParityLaw> {
    if d < 4 {
        return Err(invalid(format!("parity laws need d >= 4 (d={d})")));
    }
    if !(0.0..1.0).contains(&h) {
        return Err(invalid(format!("tilt h={h} outside [0, 1)")));
    }
    if n_max < 32 {
        return Err(invalid(format!("need n_max >= 32 for the tail fit (n_max={n_max})")));
    }
    let (weight_even, weight_odd) = parity_weights_fourier(d, h, n_max)?;
    let direct_n = if d <= 4 { 6 } else { 4 };
    let (de, dodd) = parity_weights_direct(d, h, direct_n);
    let mut route_gap = 0.0f64;
    for n in 1..=direct_n {
        route_gap = route_gap.max((de[n] - weight_even[n]).abs() / de[n]);
        route_gap = route_gap.max((dodd[n] - weight_odd[n]).abs() / dodd[n]);
    }
    if route_gap > 1e-12 {
        return Err(PinError::Numerical(format!("parity weights: direct and Fourier routes differ by {route_gap:e}")));
    }
    let greens = tilted_greens(d, h, 1e-8)?;
    let g_even = greens.g_even.expect("tilted greens carry g_even");
    let g_odd = greens.g_odd.expect("tilted greens carry g_odd");
    let build = |w: &[f64], g: f64| -> Result<RenewalLaw> {
        let masses: Vec<f64> = w.iter().map(|v| v / g).collect();
        let tail = parity_tail(d, &masses);
        RenewalLaw::from_masses(masses, Some(tail))
    };
    let even = build(&weight_even, g_even)?;
    let odd = build(&weight_odd, g_odd)?;
    let normalisation_error = (even.defect.abs(), odd.defect.abs());
    Ok(ParityLaw { d, h, even, odd, g_even, g_odd, weight_even, weight_odd, route_gap, normalisation_error })
}

/// Smooth tail `n^{-d/2}(a_0 + a_1/n + a_2/n^2)` plus an alternating part of the same shape,
/// fitted on `[n_max/2, n_max]`.
fn parity_tail(d: usize, masses: &[f64]) -> PowerTail {
    let n_max = masses.len() - 1;
    PowerTail::fit_parity(d as f64 / 2.0, n_max / 2, masses)
}

/// A law whose tails dominate every input, with the margins that certify it.
#[derive(Debug, Clone, Serialize)]
pub struct Domination {
    pub law: RenewalLaw,
    /// Per input law: `min_{1 <= n <= n_max+1} (T_*(n) - T_i(n))` with `T(n) = sum_{k >= n} K(k)`.
    pub margins: Vec<f64>,
}

/// `K_*` from the pointwise maximum of the tail functions, renormalised and re-checked.
///
/// Beyond `n_max` the law continues with the tail model of the input whose remaining mass
/// at `n_max + 1` is largest.
pub fn dominating_law(laws: &[&RenewalLaw], n_max: usize) -> Result<Domination> {
    if laws.is_empty() {
        return Err(invalid("dominating_law needs at least one law"));
    }
    for law in laws {
        check_discrete(law)?;
    }
    // tails[i][n] = T_i(n) / T_i(1) for 1 <= n <= n_max + 1; inputs with fitted tails carry
    // defects of order 1e-10 that would otherwise decide the comparison.
    let tails: Vec<Vec<f64>> = laws
        .iter()
        .map(|law| {
            let mut t = vec![0.0; n_max + 2];
            t[n_max + 1] = law.tail_sum(n_max);
            for n in (1..=n_max).rev() {
                t[n] = t[n + 1] + law.mass(n);
            }
            let total = t[1];
            t.iter_mut().skip(1).for_each(|v| *v /= total);
            t
        })
        .collect();
    let top: Vec<f64> = (0..n_max + 2).map(|n| tails.iter().map(|t| t[n]).fold(0.0, f64::max)).collect();
    let total = top[1];
    if !(total.is_finite() && total > 0.0) {
        return Err(PinError::Numerical(format!("dominating law has total mass {total}")));
    }
    let mut masses = vec![0.0; n_max + 1];
    for n in 1..=n_max {
        masses[n] = (top[n] - top[n + 1]) / total;
    }
    let lead = (0..laws.len()).max_by(|&a, &b| tails[a][n_max + 1].total_cmp(&tails[b][n_max + 1])).unwrap();
    let lead_total = laws[lead].tail_sum(0);
    let tail = laws[lead].tail.as_ref().map(|t| t.scaled(1.0 / (total * lead_total)));
    let law = RenewalLaw::from_masses(masses, tail)?;
    let mut star = vec![0.0; n_max + 2];
    star[n_max + 1] = law.tail_sum(n_max);
    for n in (1..=n_max).rev() {
        star[n] = star[n + 1] + law.masses[n];
    }
    let margins: Vec<f64> =
        tails.iter().map(|t| (1..=n_max + 1).map(|n| star[n] - t[n]).fold(f64::INFINITY, f64::min)).collect();
    if let Some(m) = margins.iter().find(|&&m| m < -1e-12) {
        return Err(PinError::Numerical(format!("normalised K_* fails domination by {:e}", -m)));
    }
    Ok(Domination { law, margins })
}
