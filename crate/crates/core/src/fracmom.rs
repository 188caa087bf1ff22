//! Fractional moments of the pinned partition function and the quantities that bound them.
//!
//! `A_N = E^Y[(Z_N)^gamma]` is estimated by Monte Carlo, the iteration coefficient `rho_hat`
//! combines a table of such estimates with exact kernel maxima, and the Hölder split bounds
//! `A_N` through a tilted medium whose annealed partition function is computed exactly.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::Serialize;

use crate::annealed::{correlation_length, PowerTail};
use crate::disorder::{density_moment_ct, density_moment_discrete, sample_ct_with, sample_discrete_with, sample_tilted_with};
use crate::error::{invalid, PinError};
use crate::kernels::{pair_green_value, return_probabilities, tilted_greens, KernelTable};
use crate::quenched::volterra::REFINEMENT_LIMIT;
use crate::quenched::{ct_green, renewal_weights, volterra_solve, ModelParams, Variant};
use crate::renewal::{parity_law, ParityLaw};
use crate::rng::{stream, Module};
use crate::special::{least_squares, scaled_bessel_row};
use crate::{McEstimate, Mode, Result};

#[derive(Debug, Clone, Serialize)]
pub struct FracMomConfig {
    pub mode: Mode,
    pub d: usize,
    pub gamma: f64,
    /// `z` in discrete time, `beta_bar` in continuous time.
    pub coupling: f64,
    pub l: usize,
    pub r: usize,
    pub epsilon: f64,
    pub h: f64,
    /// Set when `h` was given explicitly rather than derived from the coupling.
    pub h_override: bool,
    pub rho: f64,
    pub replicas: usize,
    pub seed: u64,
    /// Volterra steps per unit time (continuous mode).
    pub steps_per_unit: usize,
}

impl FracMomConfig {
    pub fn discrete(d: usize, z: f64) -> Result<Self> {
        Self::new(Mode::Discrete, d, z, 0.0)
    }

    pub fn continuous(d: usize, rho: f64, beta_bar: f64) -> Result<Self> {
        Self::new(Mode::Continuous, d, beta_bar, rho)
    }

    fn new(mode: Mode, d: usize, coupling: f64, rho: f64) -> Result<Self> {
        let (gamma, epsilon) = if d == 4 { (0.96, 0.1) } else { (0.9, 0.1) };
        let mut c = Self {
            mode,
            d,
            gamma,
            coupling,
            l: 0,
            r: 8,
            epsilon,
            h: 0.0,
            h_override: false,
            rho,
            replicas: 1000,
            seed: 1,
            steps_per_unit: 16,
        };
        c.refresh()?;
        c.validate()?;
        Ok(c)
    }

    /// Recompute `L` and, unless overridden, `h` from the coupling.
    fn refresh(&mut self) -> Result<()> {
        self.l = correlation_length(self.coupling)?.length as usize;
        if !self.h_override {
            self.h = self.default_h();
        }
        Ok(())
    }

    pub fn default_h(&self) -> f64 {
        match self.mode {
            Mode::Discrete => (self.coupling - 1.0).max(0.0).sqrt(),
            Mode::Continuous => (self.rho * (self.coupling - 1.0)).max(0.0).sqrt(),
        }
    }

    pub fn with_coupling(&self, coupling: f64) -> Result<Self> {
        let mut c = self.clone();
        c.coupling = coupling;
        c.refresh()?;
        c.validate()?;
        Ok(c)
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        let mut c = self.clone();
        c.gamma = gamma;
        c.validate()?;
        Ok(c)
    }

    pub fn with_h(&self, h: f64) -> Result<Self> {
        let mut c = self.clone();
        c.h = h;
        c.h_override = true;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let df = self.d as f64;
        if self.d < 4 {
            return Err(invalid(format!("fractional-moment pipeline needs d >= 4 (d={})", self.d)));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid(format!("gamma={} outside (0, 1]", self.gamma)));
        }
        if self.d >= 5 && !(df * self.gamma / 2.0 > 2.0) {
            return Err(invalid(format!("d={} needs d gamma / 2 > 2 (gamma={})", self.d, self.gamma)));
        }
        if self.d == 4 && !(2.0 * self.gamma - 1.0 > 1.0 - self.epsilon) {
            return Err(invalid(format!("d=4 needs 2 gamma - 1 > 1 - epsilon (gamma={}, epsilon={})", self.gamma, self.epsilon)));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(invalid(format!("epsilon={} outside (0, 1)", self.epsilon)));
        }
        if !(self.coupling > 1.0) {
            return Err(invalid(format!("coupling must exceed 1 (got {})", self.coupling)));
        }
        if !(0.0..1.0).contains(&self.h) {
            return Err(invalid(format!("tilt h={} outside [0, 1)", self.h)));
        }
        if !self.h_override && (self.h - self.default_h()).abs() > 1e-15 {
            return Err(invalid("h differs from the default rule without an override"));
        }
        if self.mode == Mode::Continuous && !(self.rho > 0.0) {
            return Err(invalid(format!("continuous mode needs rho > 0 (rho={})", self.rho)));
        }
        if self.replicas < 2 || self.r == 0 || self.steps_per_unit == 0 {
            return Err(invalid("need replicas >= 2, R >= 1 and steps_per_unit >= 1"));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<ModelParams> {
        match self.mode {
            Mode::Discrete => ModelParams::from_z(self.d, self.coupling),
            Mode::Continuous => ModelParams::from_beta_bar(self.d, self.rho, self.coupling),
        }
    }

    /// Indices `[lo, hi]` over which `A` is maximised.
    pub fn window(&self) -> (usize, usize) {
        (self.window_start().max(1), self.l)
    }

    /// First index of the window block in `rho_hat`.
    fn window_start(&self) -> usize {
        if self.d == 4 {
            (self.l as f64).powf(1.0 - self.epsilon).ceil() as usize
        } else {
            self.l.saturating_sub(self.r)
        }
    }

    /// `L^{2 - 2 gamma}` in `d = 4`, 1 otherwise.
    pub fn prefactor(&self) -> f64 {
        if self.d == 4 {
            (self.l as f64).powf(2.0 - 2.0 * self.gamma)
        } else {
            1.0
        }
    }

    /// The variant the criterion is stated for: pinned (discrete) or `pin2` (continuous).
    pub fn criterion_variant(&self) -> Variant {
        match self.mode {
            Mode::Discrete => Variant::Pin,
            Mode::Continuous => Variant::Pin2,
        }
    }
}

fn table_cache() -> &'static Mutex<HashMap<usize, Arc<KernelTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<KernelTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Make a prebuilt table available to later estimates in this process.
pub fn install_table(table: KernelTable) {
    let d = table.d();
    let mut guard = table_cache().lock().unwrap();
    if guard.get(&d).is_none_or(|t| t.n_max() < table.n_max()) {
        guard.insert(d, Arc::new(table));
    }
}

pub(crate) fn shared_table(d: usize, n: usize) -> Result<Arc<KernelTable>> {
    if let Some(t) = table_cache().lock().unwrap().get(&d) {
        if t.n_max() >= n {
            return Ok(t.clone());
        }
    }
    let t = Arc::new(KernelTable::build(d, n)?);
    table_cache().lock().unwrap().insert(d, t.clone());
    Ok(t)
}

/// Per-replica values of the chosen partition function at `N = 0..=n_max`, with value 1 at `N = 0`.
fn replica_values(config: &FracMomConfig, n_max: usize, variant: Variant, tilted: bool, table: Option<&KernelTable>, replica: u64) -> Result<Vec<f64>> {
    let mut rng = stream(config.seed, Module::FracMom, replica);
    let h = if tilted { config.h } else { 0.0 };
    match config.mode {
        Mode::Discrete => {
            let path = if h > 0.0 { sample_tilted_with(&mut rng, config.d, n_max, h)? } else { sample_discrete_with(&mut rng, config.d, n_max) };
            let params = config.params()?;
            let (q, log_scale) = renewal_weights(params.z_prime(), &path, n_max, table.expect("discrete mode carries a table"))?;
            let scale = log_scale.exp();
            let mut out = Vec::with_capacity(n_max + 1);
            let mut acc = 0.0;
            for &v in &q {
                acc += v;
                out.push(match variant {
                    Variant::Pin => v * scale,
                    _ => acc * scale,
                });
            }
            out[0] = 1.0;
            Ok(out)
        }
        Mode::Continuous => {
            let t = n_max as f64;
            let mut path = sample_ct_with(&mut rng, config.d, config.rho + h, t)?;
            path.tilt = h;
            let params = config.params()?;
            let m = n_max * config.steps_per_unit;
            let sol = volterra_solve(&params, &path, t, m)?;
            let pick = |s: &crate::quenched::VolterraSolution, k: usize| match variant {
                Variant::Pin => params.beta * s.zpin[k],
                Variant::Free => s.z[k],
                Variant::Pin2 => s.pin2[k],
                Variant::Z1 => s.z1[k],
                _ => unreachable!(),
            };
            if replica == 0 {
                let fine = volterra_solve(&params, &path, t, 2 * m)?;
                let (a, b) = (pick(&sol, m), pick(&fine, 2 * m));
                let rel = (a - b).abs() / b.abs();
                if !(rel <= REFINEMENT_LIMIT) {
                    return Err(PinError::Tolerance { what: "Volterra grid refinement".into(), achieved: rel, requested: REFINEMENT_LIMIT });
                }
            }
            let mut out: Vec<f64> = (0..=n_max).map(|n| pick(&sol, n * config.steps_per_unit)).collect();
            out[0] = 1.0;
            Ok(out)
        }
    }
}

/// `A_N` for every `N <= n_max` from one set of replicas. `A_0 = 1` by convention.
pub fn frac_moment_table(config: &FracMomConfig, n_max: usize, variant: Variant, tilted: bool) -> Result<Vec<McEstimate>> {
    config.validate()?;
    let allowed = match config.mode {
        Mode::Discrete => matches!(variant, Variant::Pin | Variant::Free),
        Mode::Continuous => matches!(variant, Variant::Pin | Variant::Free | Variant::Pin2 | Variant::Z1),
    };
    if !allowed {
        return Err(invalid(format!("variant {} is not available in {} mode", variant.as_str(), config.mode.as_str())));
    }
    if n_max == 0 {
        return Ok(vec![McEstimate::from_samples(&vec![1.0; config.replicas], config.seed)]);
    }
    let table = match config.mode {
        Mode::Discrete => Some(shared_table(config.d, n_max)?),
        Mode::Continuous => None,
    };
    let rows: Vec<Vec<f64>> = (0..config.replicas as u64)
        .into_par_iter()
        .map(|r| replica_values(config, n_max, variant, tilted, table.as_deref(), r))
        .collect::<Result<_>>()?;
    Ok((0..=n_max)
        .map(|n| {
            let samples: Vec<f64> = rows.iter().map(|row| row[n].powf(config.gamma)).collect();
            McEstimate::from_samples(&samples, config.seed)
        })
        .collect())
}

pub fn frac_moment_mc(config: &FracMomConfig, n: usize, variant: Variant, tilted: bool) -> Result<McEstimate> {
    Ok(frac_moment_table(config, n, variant, tilted)?.pop().unwrap())
}

/// Gap coefficients `b(n) = (c max_x p_n(x))^gamma` and their tail sums.
///
/// Discrete: `c = z / G^{X-Y}` and `p` is the step law of `X`. Continuous: `c = beta_bar / G_{1+rho}`
/// and `max_x p_s(x) = p_s(0)`, evaluated at integer gaps.
#[derive(Debug, Clone, Serialize)]
pub struct GapCoefficients {
    pub gamma: f64,
    pub scale: f64,
    /// `b(n)` for `n <= n_exact`, `b(0) = 0`.
    pub exact: Vec<f64>,
    pub tail: PowerTail,
    /// `suffix[m] = sum_{m <= n <= n_exact} b(n)`.
    suffix: Vec<f64>,
}

const GAP_EXACT: usize = 2048;

impl GapCoefficients {
    pub fn new(config: &FracMomConfig) -> Result<Self> {
        let d = config.d;
        let (scale, probs): (f64, Vec<f64>) = match config.mode {
            Mode::Discrete => {
                let r = return_probabilities(d, GAP_EXACT + 1);
                let p = (0..=GAP_EXACT).map(|n| if n % 2 == 0 { r[n] } else { r[n + 1] }).collect();
                (config.coupling / pair_green_value(d)?, p)
            }
            Mode::Continuous => {
                let df = d as f64;
                let p = (0..=GAP_EXACT).map(|n| scaled_bessel_row(n as f64 / df, 0)[0].powi(d as i32)).collect();
                (config.coupling / ct_green(d, config.rho)?, p)
            }
        };
        let mut exact: Vec<f64> = probs.iter().map(|p| (scale * p).powf(config.gamma)).collect();
        exact[0] = 0.0;
        let tail = PowerTail::fit_parity(d as f64 * config.gamma / 2.0, GAP_EXACT / 2, &exact);
        let mut suffix = vec![0.0; GAP_EXACT + 2];
        for n in (1..=GAP_EXACT).rev() {
            suffix[n] = suffix[n + 1] + exact[n];
        }
        Ok(Self { gamma: config.gamma, scale, exact, tail, suffix })
    }

    pub fn b(&self, n: usize) -> f64 {
        if n <= GAP_EXACT {
            self.exact[n]
        } else {
            self.tail.value(n as f64)
        }
    }

    /// `B(m) = sum_{n >= m} b(n)` for `m >= 1`.
    pub fn gap_sum(&self, m: usize) -> f64 {
        let m = m.max(1);
        if m <= GAP_EXACT {
            self.suffix[m] + self.tail.sum_from((GAP_EXACT + 1) as f64)
        } else {
            self.tail.sum_from(m as f64)
        }
    }

    /// `sum_{m >= r} B(m) = sum_{n >= r} (n - r + 1) b(n)`; `None` when it diverges.
    pub fn head_sum(&self, r: usize) -> Option<f64> {
        let r = r.max(1);
        let cut = (GAP_EXACT + 1).max(r);
        let head: f64 = (r..cut.min(GAP_EXACT + 1)).map(|n| (n - r + 1) as f64 * self.exact[n]).sum();
        let first = self.tail.first_moment_from(cut as f64)?;
        Some(head + first - (r as f64 - 1.0) * self.tail.sum_from(cut as f64))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RhoTerm {
    pub i: usize,
    pub a: f64,
    pub gap_sum: f64,
    pub contribution: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RhoHat {
    pub value: f64,
    /// Contribution of `i` below the window start.
    pub head: f64,
    /// Contribution of `i` from the window start up to `L - 1`.
    pub window: f64,
    pub window_start: usize,
    pub terms: Vec<RhoTerm>,
}

/// `rho_hat = sum_{i < L} A_i B(L - i)`, split at `L - R` (d >= 5) or `L^{1 - epsilon}` (d = 4).
pub fn rho_hat(config: &FracMomConfig, a_pin: &[f64]) -> Result<RhoHat> {
    rho_hat_with(config, &GapCoefficients::new(config)?, a_pin)
}

pub fn rho_hat_with(config: &FracMomConfig, coeffs: &GapCoefficients, a_pin: &[f64]) -> Result<RhoHat> {
    let l = config.l;
    if a_pin.len() < l {
        return Err(invalid(format!("rho_hat needs A_i for i < L = {l}, got {} values", a_pin.len())));
    }
    if a_pin[..l].iter().any(|a| !(*a >= 0.0)) {
        return Err(invalid("A values must be finite and nonnegative"));
    }
    let start = config.window_start();
    let terms: Vec<RhoTerm> = (0..l)
        .map(|i| {
            let gap_sum = coeffs.gap_sum(l - i);
            RhoTerm { i, a: a_pin[i], gap_sum, contribution: a_pin[i] * gap_sum }
        })
        .collect();
    let head: f64 = terms.iter().filter(|t| t.i < start).map(|t| t.contribution).sum();
    let window: f64 = terms.iter().filter(|t| t.i >= start).map(|t| t.contribution).sum();
    // an empty block sums to -0.0
    let (head, window) = (head + 0.0, window + 0.0);
    Ok(RhoHat { value: head + window, head, window, window_start: start, terms })
}

/// Exact tilted annealed partition functions in discrete time, from the parity renewal.
#[derive(Debug, Clone)]
pub struct TiltedDiscrete {
    pub z: f64,
    pub law: ParityLaw,
    pub g: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct TiltedAnnealed {
    pub n: usize,
    /// `E^{Y^h}[Z^{pin}_N]`.
    pub value: f64,
    /// `E^{K_h}[s^{|iota cap [1, N]|}]` with `s` the shrink factor.
    pub bound: f64,
    pub shrink: f64,
    pub g_even: f64,
    pub g_odd: f64,
}

impl TiltedDiscrete {
    pub fn new(d: usize, z: f64, h: f64, n_max: usize) -> Result<Self> {
        if !(z >= 0.0) {
            return Err(invalid(format!("z must be >= 0 (z={z})")));
        }
        let law = parity_law(d, h, n_max.max(32))?;
        Ok(Self { z, law, g: pair_green_value(d)? })
    }

    fn kernel(&self, parity: usize) -> &crate::annealed::RenewalLaw {
        if parity == 0 {
            &self.law.even
        } else {
            &self.law.odd
        }
    }

    pub fn shrink(&self) -> f64 {
        self.z * self.law.g_even.max(self.law.g_odd) / self.g
    }

    /// `Q(0) = 1`, `Q(j) = sum_{i < j} Q(i) z G_{par(i)} / G K_{par(i)}(j - i)`.
    pub fn values(&self, n: usize) -> Vec<f64> {
        let factor = [self.z * self.law.g_even / self.g, self.z * self.law.g_odd / self.g];
        let mut q = vec![0.0; n + 1];
        q[0] = 1.0;
        for j in 1..=n {
            q[j] = (0..j).map(|i| q[i] * factor[i % 2] * self.kernel(i % 2).mass(j - i)).sum();
        }
        q
    }

    pub fn bound(&self, n: usize) -> f64 {
        let s = self.shrink();
        let mut g = vec![1.0; n + 1];
        for j in (0..n).rev() {
            let k = self.kernel(j % 2);
            let hit: f64 = (1..=n - j).map(|m| k.mass(m) * s * g[j + m]).sum();
            g[j] = hit + k.tail_sum(n - j);
        }
        g[0]
    }

    pub fn at(&self, n: usize) -> TiltedAnnealed {
        TiltedAnnealed {
            n,
            value: self.values(n)[n],
            bound: self.bound(n),
            shrink: self.shrink(),
            g_even: self.law.g_even,
            g_odd: self.law.g_odd,
        }
    }
}

pub fn tilted_annealed_discrete(z: f64, h: f64, n: usize, d: usize) -> Result<TiltedAnnealed> {
    Ok(TiltedDiscrete::new(d, z, h, n)?.at(n))
}

/// `z (G_{h,even} v G_{h,odd}) / G^{X-Y}` at `h = sqrt(z - 1)`.
pub fn shrink_factor(d: usize, z: f64) -> Result<f64> {
    if !(z >= 1.0) {
        return Err(invalid(format!("shrink factor needs z >= 1 (z={z})")));
    }
    if z == 1.0 {
        return Ok(1.0);
    }
    let g = tilted_greens(d, (z - 1.0).sqrt(), 1e-8)?;
    let (even, odd, pair) = (g.g_even.unwrap(), g.g_odd.unwrap(), pair_green_value(d)?);
    Ok(z * even.max(odd) / pair)
}

#[derive(Debug, Clone, Serialize)]
pub struct ShrinkScan {
    pub d: usize,
    pub zs: Vec<f64>,
    pub values: Vec<f64>,
    /// `-a_1` from regressing `s - 1` on `(h, h^2)`.
    pub fitted_c: f64,
    /// `(d gap / dh)(0) / G^{X-Y}`.
    pub predicted_c: f64,
    pub relative_error: f64,
    pub all_below_one: bool,
}

pub fn shrink_scan(d: usize, zs: &[f64]) -> Result<ShrinkScan> {
    if zs.len() < 2 || zs.iter().any(|z| !(*z > 1.0)) {
        return Err(invalid("shrink scan needs at least two couplings above 1"));
    }
    let values: Vec<f64> = zs.iter().map(|&z| shrink_factor(d, z)).collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = zs.iter().map(|z| {
        let h = (z - 1.0).sqrt();
        vec![h, h * h]
    }).collect();
    let ys: Vec<f64> = values.iter().map(|s| s - 1.0).collect();
    let fitted_c = -least_squares(&rows, &ys)[0];
    let h0 = 1e-5;
    let predicted_c = tilted_greens(d, h0, 1e-8)?.gap.unwrap() / h0 / pair_green_value(d)?;
    Ok(ShrinkScan {
        d,
        zs: zs.to_vec(),
        all_below_one: values.iter().all(|s| *s < 1.0),
        values,
        fitted_c,
        predicted_c,
        relative_error: (fitted_c - predicted_c).abs() / predicted_c.abs(),
    })
}

/// Continuous-time tilted annealed quantities on the grid `k dt`, `dt = t / m`.
#[derive(Debug, Clone, Serialize)]
pub struct TiltedAnnealedCt {
    pub beta_bar_prime: f64,
    /// `sup_u K'(u) / K'(u + 1)` over grid points `u <= t`.
    pub c_bound: f64,
    pub dt: f64,
    /// `E^{Y^{rho+h}}[bar Z^{pin}_s]`.
    pub pin: Vec<f64>,
    /// `E^{Y^{rho+h}}[bar Z^{pin2}_s]`.
    pub pin2: Vec<f64>,
    /// `E^{K'}[beta_bar'^{1 + N(s)}]`, `N(s)` the renewals in `(0, s]`.
    pub renewal_mean: Vec<f64>,
    /// `c_bound * renewal_mean`.
    pub bound: Vec<f64>,
    /// Relative change of the final values between `2 dt` and `dt`.
    pub refinement: f64,
}

impl TiltedAnnealedCt {
    fn index(&self, s: f64) -> usize {
        ((s / self.dt).round() as usize).min(self.pin.len() - 1)
    }

    pub fn pin_at(&self, s: f64) -> f64 {
        self.pin[self.index(s)]
    }

    pub fn pin2_at(&self, s: f64) -> f64 {
        self.pin2[self.index(s)]
    }

    pub fn bound_at(&self, s: f64) -> f64 {
        self.bound[self.index(s)]
    }
}

/// `f_k = g_k + c int_0^{t_k} kern(t_k - s) f(s) ds` by the trapezoid rule.
fn trapezoid_renewal(g: &[f64], kern: &[f64], c: f64, dt: f64) -> Vec<f64> {
    let mut f = vec![0.0; g.len()];
    f[0] = g[0];
    let diag = 1.0 - c * dt * kern[0] / 2.0;
    for k in 1..g.len() {
        let mut acc = 0.5 * kern[k] * f[0];
        for j in 1..k {
            acc += kern[k - j] * f[j];
        }
        f[k] = (g[k] + c * dt * acc) / diag;
    }
    f
}

fn return_density(d: usize, rate: f64, s: f64, green: f64) -> f64 {
    scaled_bessel_row(rate * s / d as f64, 0)[0].powi(d as i32) / green
}

fn tilted_ct_grid(d: usize, beta_bar: f64, rho: f64, h: f64, t: f64, m: usize) -> Result<TiltedAnnealedCt> {
    let dt = t / m as f64;
    let bp = (1.0 + rho) * beta_bar / (1.0 + rho + h);
    let g_base = ct_green(d, rho)?;
    let g_tilt = ct_green(d, rho + h)?;
    let base: Vec<f64> = (0..=m).map(|k| return_density(d, 1.0 + rho, k as f64 * dt, g_base)).collect();
    let tilt: Vec<f64> = (0..=m).map(|k| return_density(d, 1.0 + rho + h, k as f64 * dt, g_tilt)).collect();
    let pin = trapezoid_renewal(&tilt.iter().map(|k| bp * k).collect::<Vec<_>>(), &tilt, bp, dt);
    let mut survival = vec![1.0; m + 1];
    for k in 1..=m {
        survival[k] = survival[k - 1] - 0.5 * dt * (tilt[k - 1] + tilt[k]);
    }
    let free = trapezoid_renewal(&survival, &tilt, bp, dt);
    let renewal_mean: Vec<f64> = free.iter().map(|f| bp * f).collect();
    let first = trapezoid_renewal(&base, &tilt, bp, dt);
    let pin2: Vec<f64> = (0..=m)
        .map(|k| {
            if k == 0 {
                return base[0];
            }
            let mut acc = 0.5 * (first[0] * base[k] + first[k] * base[0]);
            for j in 1..k {
                acc += first[j] * base[k - j];
            }
            base[k] + dt * acc
        })
        .collect();
    let one = ((1.0 / dt).round() as usize).max(1);
    let c_bound = (0..=m).map(|k| {
        let next = if k + one <= m { tilt[k + one] } else { return_density(d, 1.0 + rho + h, (k + one) as f64 * dt, g_tilt) };
        tilt[k] / next
    }).fold(0.0, f64::max);
    let bound = renewal_mean.iter().map(|r| c_bound * r).collect();
    Ok(TiltedAnnealedCt { beta_bar_prime: bp, c_bound, dt, pin, pin2, renewal_mean, bound, refinement: 0.0 })
}

/// Tilted annealed quantities with the medium's jump rate raised from `rho` to `rho + h`.
pub fn tilted_annealed_ct(d: usize, beta_bar: f64, rho: f64, h: f64, t: f64, dt: f64) -> Result<TiltedAnnealedCt> {
    if !(dt > 0.0 && dt <= t) || !(rho >= 0.0) || !(h >= 0.0) || !(beta_bar >= 0.0) {
        return Err(invalid(format!("need 0 < dt <= t, rho, h, beta_bar >= 0 (dt={dt}, t={t}, rho={rho}, h={h})")));
    }
    let m = (t / dt).round().max(1.0) as usize;
    let coarse = tilted_ct_grid(d, beta_bar, rho, h, t, m)?;
    let mut fine = tilted_ct_grid(d, beta_bar, rho, h, t, 2 * m)?;
    let rel = |a: &[f64], b: &[f64]| (a.last().unwrap() - b.last().unwrap()).abs() / b.last().unwrap().abs();
    let refinement = rel(&coarse.pin, &fine.pin).max(rel(&coarse.pin2, &fine.pin2)).max(rel(&coarse.renewal_mean, &fine.renewal_mean));
    if !(refinement <= REFINEMENT_LIMIT) {
        return Err(PinError::Tolerance { what: "tilted Volterra grid refinement".into(), achieved: refinement, requested: REFINEMENT_LIMIT });
    }
    fine.refinement = refinement;
    Ok(fine)
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HolderSplit {
    pub n: usize,
    /// `E^Y[f^{-gamma/(1-gamma)}]^{1-gamma}` for the tilt density `f`.
    pub holder_factor: f64,
    /// Annealed partition function under the tilted medium.
    pub tilted_value: f64,
    /// `tilted_value^gamma`.
    pub tilted_bound: f64,
    pub product: f64,
}

fn holder_from(config: &FracMomConfig, n: usize, tilted_value: f64) -> HolderSplit {
    let g = config.gamma;
    let moment = match config.mode {
        Mode::Discrete => density_moment_discrete(config.d, config.h, g, n),
        Mode::Continuous => density_moment_ct(config.rho, config.h, g, n as f64),
    };
    let holder_factor = if g < 1.0 { moment.powf(1.0 - g) } else { 1.0 };
    let tilted_bound = tilted_value.powf(g);
    HolderSplit { n, holder_factor, tilted_value, tilted_bound, product: holder_factor * tilted_bound }
}

/// Hölder bounds at each `n` in `ns`, sharing one tilted annealed computation.
pub fn holder_splits(config: &FracMomConfig, ns: &[usize]) -> Result<Vec<HolderSplit>> {
    config.validate()?;
    let n_max = ns.iter().copied().max().unwrap_or(0);
    match config.mode {
        Mode::Discrete => {
            let t = TiltedDiscrete::new(config.d, config.coupling, config.h, n_max)?;
            let q = t.values(n_max);
            Ok(ns.iter().map(|&n| holder_from(config, n, q[n])).collect())
        }
        Mode::Continuous => {
            if n_max == 0 {
                return Ok(ns.iter().map(|&n| holder_from(config, n, 1.0)).collect());
            }
            let dt = 1.0 / config.steps_per_unit as f64;
            let t = tilted_annealed_ct(config.d, config.coupling, config.rho, config.h, n_max as f64, dt)?;
            Ok(ns.iter().map(|&n| holder_from(config, n, t.pin2_at(n as f64))).collect())
        }
    }
}

pub fn holder_split(config: &FracMomConfig, n: usize) -> Result<HolderSplit> {
    Ok(holder_splits(config, &[n])?[0])
}

#[derive(Debug, Clone, Serialize)]
pub struct GapScanRow {
    pub coupling: f64,
    pub l: usize,
    pub h: f64,
    pub window: (usize, usize),
    /// `A_N` for `N = 0..=L` (variant per mode), `A_0 = 1`.
    pub a_values: Vec<McEstimate>,
    pub windowed_max: f64,
    /// `prefactor * windowed_max`.
    pub criterion_value: f64,
    pub rho_hat: RhoHat,
    pub holder: Vec<HolderSplit>,
    /// Discrete mode only.
    pub shrink: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FracMomReport {
    pub config: FracMomConfig,
    pub rows: Vec<GapScanRow>,
    /// Windowed criterion strictly decreasing along the grid.
    pub a_decreasing: bool,
    pub rho_decreasing: bool,
    /// `rho_hat` at the last grid point below that at the first.
    pub rho_last_below_first: bool,
    pub rho_below_one: bool,
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

pub fn gap_scan(config: &FracMomConfig, couplings: &[f64]) -> Result<FracMomReport> {
    if couplings.len() < 2 {
        return Err(invalid("gap scan needs at least two couplings"));
    }
    let mut rows = Vec::with_capacity(couplings.len());
    for &c in couplings {
        let cfg = config.with_coupling(c)?;
        let (lo, hi) = cfg.window();
        let a_values = frac_moment_table(&cfg, cfg.l, cfg.criterion_variant(), false)?;
        let means: Vec<f64> = a_values.iter().map(|e| e.mean).collect();
        let windowed_max = means[lo..=hi].iter().copied().fold(0.0, f64::max);
        let rho = rho_hat(&cfg, &means[..cfg.l])?;
        let ns: Vec<usize> = (lo..=hi).collect();
        let holder = holder_splits(&cfg, &ns)?;
        let shrink = match cfg.mode {
            Mode::Discrete if cfg.h < 1.0 => Some(TiltedDiscrete::new(cfg.d, c, cfg.h, 32)?.shrink()),
            _ => None,
        };
        rows.push(GapScanRow {
            coupling: c,
            l: cfg.l,
            h: cfg.h,
            window: (lo, hi),
            a_values,
            windowed_max,
            criterion_value: cfg.prefactor() * windowed_max,
            rho_hat: rho,
            holder,
            shrink,
        });
    }
    let crit: Vec<f64> = rows.iter().map(|r| r.criterion_value).collect();
    let rhos: Vec<f64> = rows.iter().map(|r| r.rho_hat.value).collect();
    Ok(FracMomReport {
        config: config.clone(),
        a_decreasing: strictly_decreasing(&crit),
        rho_decreasing: strictly_decreasing(&rhos),
        rho_last_below_first: rhos.last() < rhos.first(),
        rho_below_one: rhos.iter().any(|r| *r < 1.0),
        rows,
    })
}
