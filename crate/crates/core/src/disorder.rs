//! Samplers for the medium `Y` and Radon-Nikodym densities of its tilted versions.
//!
//! A step is stored as an index `s` in `0..2d`: axis `s / 2`, positive when `s` is even.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use crate::error::invalid;
use crate::rng::{stream, Module};
use crate::{Mode, Result};

/// Signed unit vector of a step index.
#[inline]
pub fn step_vector(d: usize, s: u8) -> Vec<i32> {
    let mut v = vec![0; d];
    v[(s / 2) as usize] = if s % 2 == 0 { 1 } else { -1 };
    v
}

#[inline]
pub fn reverse_step(s: u8) -> u8 {
    s ^ 1
}

/// A realisation of the medium.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisorderPath {
    pub mode: Mode,
    pub d: usize,
    pub steps: Vec<u8>,
    /// Jump times (continuous mode only), strictly increasing.
    pub times: Vec<f64>,
    /// Number of steps `N`, or the time horizon `t`.
    pub horizon: f64,
    pub tilt: f64,
}

impl DisorderPath {
    pub fn discrete(d: usize, steps: Vec<u8>) -> Self {
        let n = steps.len() as f64;
        Self { mode: Mode::Discrete, d, steps, times: Vec::new(), horizon: n, tilt: 0.0 }
    }

    pub fn continuous(d: usize, times: Vec<f64>, steps: Vec<u8>, horizon: f64) -> Result<Self> {
        if times.len() != steps.len() {
            return Err(invalid("jump times and steps differ in length"));
        }
        if times.windows(2).any(|w| w[0] >= w[1]) || times.iter().any(|&s| !(s > 0.0 && s <= horizon)) {
            return Err(invalid("jump times must be strictly increasing in (0, horizon]"));
        }
        Ok(Self { mode: Mode::Continuous, d, steps, times, horizon, tilt: 0.0 })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn jump_count(&self) -> usize {
        self.steps.len()
    }

    /// Positions `Y_0 = 0, Y_1, ..., Y_len` after each step.
    pub fn positions(&self) -> Vec<Vec<i32>> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut cur = vec![0i32; self.d];
        out.push(cur.clone());
        for &s in &self.steps {
            cur[(s / 2) as usize] += if s % 2 == 0 { 1 } else { -1 };
            out.push(cur.clone());
        }
        out
    }

    /// Position at time `s` of a continuous path (right-continuous).
    pub fn position_at(&self, s: f64) -> Vec<i32> {
        let k = self.times.partition_point(|&u| u <= s);
        let mut cur = vec![0i32; self.d];
        for &st in &self.steps[..k] {
            cur[(st / 2) as usize] += if st % 2 == 0 { 1 } else { -1 };
        }
        cur
    }

    /// Largest `|Y|_inf` along the path.
    pub fn max_abs(&self) -> u32 {
        self.positions().iter().flat_map(|p| p.iter().map(|v| v.unsigned_abs())).max().unwrap_or(0)
    }

    /// Continuous path with time reversed: `s -> Y_{t-s} - Y_t`.
    pub fn time_reversed(&self) -> Result<Self> {
        if self.mode != Mode::Continuous {
            return Err(invalid("time reversal needs a continuous path"));
        }
        let t = self.horizon;
        let times: Vec<f64> = self.times.iter().rev().map(|&u| t - u).collect();
        let steps: Vec<u8> = self.steps.iter().rev().map(|&s| reverse_step(s)).collect();
        if times.first() == Some(&0.0) {
            return Err(invalid("time reversal of a path with a jump at the horizon"));
        }
        let mut p = Self::continuous(self.d, times, steps, t)?;
        p.tilt = self.tilt;
        Ok(p)
    }

    /// Debug export: `index,time,dx1..dxd`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["index".to_string(), "time".to_string()];
        header.extend((1..=self.d).map(|i| format!("dx{i}")));
        w.write_record(&header)?;
        for (i, &s) in self.steps.iter().enumerate() {
            let time = self.times.get(i).copied().unwrap_or((i + 1) as f64);
            let mut rec = vec![(i + 1).to_string(), format!("{time}")];
            rec.extend(step_vector(self.d, s).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TiltParams {
    pub h: f64,
    pub gamma: f64,
    pub rho: f64,
}

impl TiltParams {
    pub fn validate(&self, mode: Mode) -> Result<()> {
        if !(self.h >= 0.0) {
            return Err(invalid(format!("tilt h={} must be >= 0", self.h)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid(format!("gamma={} outside (0, 1)", self.gamma)));
        }
        match mode {
            Mode::Discrete if self.h >= 1.0 => Err(invalid(format!("discrete tilt h={} must be < 1", self.h))),
            Mode::Continuous if self.h > 0.0 && !(self.rho > 0.0) => {
                Err(invalid(format!("continuous tilt needs rho > 0 (rho={})", self.rho)))
            }
            _ => Ok(()),
        }
    }

    /// Exponent `gamma / (1 - gamma)` of the density in the Holder split.
    pub fn holder_exponent(&self) -> f64 {
        self.gamma / (1.0 - self.gamma)
    }
}

pub fn sample_discrete_with<R: Rng>(rng: &mut R, d: usize, n: usize) -> DisorderPath {
    let k = (2 * d) as u8;
    let steps = (0..n).map(|_| rng.random_range(0..k)).collect();
    DisorderPath::discrete(d, steps)
}

/// Uniform steps from the replica's disorder stream.
pub fn sample_discrete(d: usize, n: usize, seed: u64, replica: u64) -> DisorderPath {
    sample_discrete_with(&mut stream(seed, Module::Disorder, replica), d, n)
}

/// Two-step tilted medium: odd-numbered steps are uniform; each even-numbered step repeats
/// the previous one with probability `(1+h)/(2d)`, reverses it with `(1-h)/(2d)`, and takes
/// each of the other directions with `1/(2d)`. An unpaired final step is uniform.
pub fn sample_tilted_with<R: Rng>(rng: &mut R, d: usize, n: usize, h: f64) -> Result<DisorderPath> {
    if !(0.0..1.0).contains(&h) {
        return Err(invalid(format!("tilt h={h} outside [0, 1)")));
    }
    let k = 2 * d;
    let kf = k as f64;
    let mut steps = Vec::with_capacity(n);
    while steps.len() < n {
        let first = rng.random_range(0..k) as u8;
        steps.push(first);
        if steps.len() == n {
            break;
        }
        let u: f64 = rng.random::<f64>() * kf;
        let second = if u < 1.0 + h {
            first
        } else if u < 2.0 {
            reverse_step(first)
        } else {
            // Remaining mass 2d - 2 spread uniformly over the other directions.
            let j = (((u - 2.0) as usize).min(k - 3)) as u8;
            let lo = first & !1;
            if j < lo { j } else { j + 2 }
        };
        steps.push(second);
    }
    let mut p = DisorderPath::discrete(d, steps);
    p.tilt = h;
    Ok(p)
}

pub fn sample_tilted(d: usize, n: usize, h: f64, seed: u64, replica: u64) -> Result<DisorderPath> {
    sample_tilted_with(&mut stream(seed, Module::Disorder, replica), d, n, h)
}

/// `dP(Y^h)/dP(Y)` on the first `N` steps: `(1+h)` per repeated pair, `(1-h)` per reversed pair.
pub fn rn_density_discrete(path: &DisorderPath, h: f64) -> f64 {
    let mut f = 1.0;
    for pair in path.steps.chunks_exact(2) {
        if pair[1] == pair[0] {
            f *= 1.0 + h;
        } else if pair[1] == reverse_step(pair[0]) {
            f *= 1.0 - h;
        }
    }
    f
}

/// `E^Y[f(N, Y)^{-q}]` under the plain medium, `q = gamma/(1-gamma)`.
pub fn density_moment_discrete(d: usize, h: f64, gamma: f64, n: usize) -> f64 {
    let q = gamma / (1.0 - gamma);
    let df = d as f64;
    let pair = 1.0 - 1.0 / df + ((1.0 + h).powf(-q) + (1.0 - h).powf(-q)) / (2.0 * df);
    pair.powi((n / 2) as i32)
}

/// Bound `exp(gamma h^2 N / (2 d (1-gamma)^2))` on the discrete density moment for small `h`.
pub fn density_moment_discrete_bound(d: usize, h: f64, gamma: f64, n: usize) -> f64 {
    (gamma * h * h * n as f64 / (2.0 * d as f64 * (1.0 - gamma).powi(2))).exp()
}

/// Continuous medium with jump rate `rho` on `[0, t]`.
pub fn sample_ct_with<R: Rng>(rng: &mut R, d: usize, rho: f64, t: f64) -> Result<DisorderPath> {
    if !(rho >= 0.0) || !(t >= 0.0) {
        return Err(invalid(format!("need rho >= 0 and t >= 0 (rho={rho}, t={t})")));
    }
    let mean = rho * t;
    let count = if mean > 0.0 {
        Poisson::new(mean).map_err(|e| invalid(e.to_string()))?.sample(rng) as usize
    } else {
        0
    };
    let mut times: Vec<f64> = (0..count).map(|_| t * (1.0 - rng.random::<f64>())).collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();
    let k = (2 * d) as u8;
    let steps = (0..times.len()).map(|_| rng.random_range(0..k)).collect();
    DisorderPath::continuous(d, times, steps, t)
}

pub fn sample_ct(d: usize, rho: f64, t: f64, seed: u64, replica: u64) -> Result<DisorderPath> {
    sample_ct_with(&mut stream(seed, Module::Disorder, replica), d, rho, t)
}

/// Rate-tilted continuous medium: jump rate `rho + h`, tagged with `h`.
pub fn sample_ct_tilted(d: usize, rho: f64, h: f64, t: f64, seed: u64, replica: u64) -> Result<DisorderPath> {
    let mut p = sample_ct(d, rho + h, t, seed, replica)?;
    p.tilt = h;
    Ok(p)
}

/// `e^{-h t} (1 + h/rho)^{N_t}`, the density of rate `rho + h` against rate `rho`.
pub fn rn_density_ct(path: &DisorderPath, rho: f64, h: f64, t: f64) -> f64 {
    if h == 0.0 {
        return 1.0;
    }
    (-h * t + path.jump_count() as f64 * (h / rho).ln_1p()).exp()
}

/// `E^Y[f^{-q}] = exp{(rho (1 + h/rho)^{-q} - rho + q h) t}` under rate `rho`.
pub fn density_moment_ct(rho: f64, h: f64, gamma: f64, t: f64) -> f64 {
    let q = gamma / (1.0 - gamma);
    ((rho * (1.0 + h / rho).powf(-q) - rho + q * h) * t).exp()
}

/// `exp{gamma h^2 t / (2 rho (1-gamma)^2)}`, the second-order bound on [`density_moment_ct`].
pub fn density_moment_ct_bound(rho: f64, h: f64, gamma: f64, t: f64) -> f64 {
    (gamma * h * h * t / (2.0 * rho * (1.0 - gamma).powi(2))).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Module;

    #[test]
    fn empty_and_deterministic() {
        assert!(sample_discrete(3, 0, 1, 0).is_empty());
        assert_eq!(sample_discrete(2, 50, 9, 4), sample_discrete(2, 50, 9, 4));
        assert_ne!(sample_discrete(2, 50, 9, 4), sample_discrete(2, 50, 9, 5));
        assert_eq!(sample_ct(2, 1.5, 10.0, 3, 1).unwrap(), sample_ct(2, 1.5, 10.0, 3, 1).unwrap());
    }

    #[test]
    fn one_dimensional_mean_increment() {
        let n = 100_000;
        let p = sample_discrete(1, n, 11, 0);
        let end = p.positions()[n][0] as f64 / n as f64;
        assert!(end.abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn tilted_two_step_law_is_exact() {
        // Exhaustive two-step law, compared with the sampler's transition rule.
        for d in 1..=3 {
            let h = 0.2;
            let k = 2 * d;
            let df = d as f64;
            for first in 0..k as u8 {
                for second in 0..k as u8 {
                    let want = if second == first {
                        (1.0 + h) / (2.0 * df)
                    } else if second == reverse_step(first) {
                        (1.0 - h) / (2.0 * df)
                    } else {
                        1.0 / (2.0 * df)
                    };
                    let pair = DisorderPath::discrete(d, vec![first, second]);
                    assert!((rn_density_discrete(&pair, h) / (2.0 * df) - want).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn tilted_sampler_marginals() {
        let (d, h, reps) = (2usize, 0.2, 200_000u64);
        let mut rng = stream(5, Module::Test, 0);
        let (mut back, mut twice) = (0u64, 0u64);
        for _ in 0..reps {
            let p = sample_tilted_with(&mut rng, d, 2, h).unwrap();
            let y = &p.positions()[2];
            if y == &vec![0, 0] {
                back += 1;
            }
            if y == &vec![2, 0] {
                twice += 1;
            }
        }
        let check = |count: u64, p: f64| {
            let f = count as f64 / reps as f64;
            (f - p).abs() < 3.0 * (p * (1.0 - p) / reps as f64).sqrt()
        };
        assert!(check(back, 1.0 / (2.0 * 2.0) - h / 4.0));
        assert!(check(twice, 1.0 / 16.0 + h / 16.0));
    }

    #[test]
    fn untilted_sampler_matches_plain_two_step_law() {
        let reps = 64_000u64;
        let mut rng = stream(8, Module::Test, 1);
        let mut counts = [0u64; 16];
        for _ in 0..reps {
            let p = sample_tilted_with(&mut rng, 2, 2, 0.0).unwrap();
            counts[(p.steps[0] * 4 + p.steps[1]) as usize] += 1;
        }
        let e = reps as f64 / 16.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 15 degrees of freedom: mean 15, sd sqrt(30).
        assert!(chi2 < 15.0 + 3.0 * 30f64.sqrt(), "chi2={chi2}");
    }

    #[test]
    fn discrete_density_moment_closed_form() {
        let v = density_moment_discrete(4, 0.1, 0.5, 2);
        assert!((v - 1.002_525_252_525_252_5).abs() < 1e-15);
        // Exhaustive enumeration over two plain steps.
        let (d, h, gamma) = (4usize, 0.1, 0.5);
        let q = gamma / (1.0 - gamma);
        let mut acc = 0.0;
        let mut mean = 0.0;
        for a in 0..8u8 {
            for b in 0..8u8 {
                let f = rn_density_discrete(&DisorderPath::discrete(d, vec![a, b]), h);
                acc += f.powf(-q) / 64.0;
                mean += f / 64.0;
            }
        }
        assert!((acc - v).abs() < 1e-15);
        assert!((mean - 1.0).abs() < 1e-15);
        assert_eq!(density_moment_discrete(3, 0.1, 0.5, 7), density_moment_discrete(3, 0.1, 0.5, 6));
        assert!(density_moment_discrete(4, 0.05, 0.9, 64) <= density_moment_discrete_bound(4, 0.05, 0.9, 64));
    }

    #[test]
    fn discrete_density_has_unit_mean_by_monte_carlo() {
        let reps = 20_000;
        let samples: Vec<f64> = (0..reps).map(|r| rn_density_discrete(&sample_discrete(3, 10, 2, r), 0.3)).collect();
        let e = crate::McEstimate::from_samples(&samples, 2);
        assert!(e.agrees_with(1.0, 3.0, 0.0), "{e:?}");
        assert_eq!(rn_density_discrete(&sample_discrete(3, 10, 2, 0), 0.0), 1.0);
    }

    #[test]
    fn continuous_samples() {
        let p = sample_ct(3, 0.0, 5.0, 1, 0).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.position_at(4.0), vec![0, 0, 0]);
        let (rho, t) = (1.3, 7.0);
        let counts: Vec<f64> = (0..4000).map(|r| sample_ct(2, rho, t, 4, r).unwrap().jump_count() as f64).collect();
        let e = crate::McEstimate::from_samples(&counts, 4);
        assert!(e.agrees_with(rho * t, 3.0, 0.0), "{e:?}");
        let p = sample_ct(2, rho, t, 4, 0).unwrap();
        assert!(p.times.windows(2).all(|w| w[0] < w[1]));
        assert!(p.times.iter().all(|&s| s > 0.0 && s <= t));
    }

    #[test]
    fn continuous_density_moment() {
        let (rho, h, gamma, t) = (1.0, 0.4, 0.5, 3.0);
        let q = gamma / (1.0 - gamma);
        let reps = 40_000;
        let samples: Vec<f64> =
            (0..reps).map(|r| rn_density_ct(&sample_ct(1, rho, t, 6, r).unwrap(), rho, h, t).powf(-q)).collect();
        let e = crate::McEstimate::from_samples(&samples, 6);
        assert!(e.agrees_with(density_moment_ct(rho, h, gamma, t), 3.0, 0.0), "{e:?}");
        let ones: Vec<f64> = (0..reps).map(|r| rn_density_ct(&sample_ct(1, rho, t, 7, r).unwrap(), rho, h, t)).collect();
        assert!(crate::McEstimate::from_samples(&ones, 7).agrees_with(1.0, 3.0, 0.0));
        for &rho in &[0.1, 0.5, 1.0] {
            for &h in &[0.01, 0.05, 0.1, 0.3] {
                for &gamma in &[0.3, 0.5, 0.9] {
                    assert!(density_moment_ct(rho, h, gamma, 10.0) <= density_moment_ct_bound(rho, h, gamma, 10.0));
                }
            }
        }
    }

    #[test]
    fn time_reversal_round_trip() {
        let p = sample_ct(2, 2.0, 5.0, 3, 3).unwrap();
        let r = p.time_reversed().unwrap();
        let t = p.horizon;
        let yt = p.position_at(t);
        for s in [0.3, 1.7, 2.2, 4.9] {
            let a = r.position_at(s);
            let b: Vec<i32> = p.position_at(t - s).iter().zip(&yt).map(|(x, y)| x - y).collect();
            // Equal except exactly at jump times.
            assert_eq!(a, b, "s={s}");
        }
        let back = r.time_reversed().unwrap();
        assert_eq!(back.steps, p.steps);
        assert!(back.times.iter().zip(&p.times).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}
