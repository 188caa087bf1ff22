//! One function per command: read parameters, call the core pipeline, return named artifacts.

use std::path::PathBuf;

use pinlab_core::annealed::{annealed_curve, annealed_sequence, critical_point, renewal_law_continuous, renewal_law_discrete};
use pinlab_core::disorder::{sample_ct, sample_discrete};
use pinlab_core::fracmom::{frac_moment_table, gap_scan, holder_splits, install_table, shrink_scan, FracMomConfig};
use pinlab_core::kernels::{green_ct, green_pair_with, tilted_greens, Green, GreenOptions, GreenValues, KernelTable};
use pinlab_core::pam_polymer::{
    lyapunov_estimate, polymer_mean, polymer_partition, second_moment_pairs, size_bias_check, DisorderLaw, OmegaField, PolymerSpec,
};
use pinlab_core::quenched::{ct_partition, field_dp_partition, free_energy_estimate, renewal_dp_partition, ModelParams};
use pinlab_core::renewal::{damped_count_scan, DampedCountParams};
use pinlab_core::{McEstimate, Mode, PinError};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{Command, Params};
use crate::output::{Cell, Format, Output, Table};
use crate::CliError;

/// An artifact with its file name and format.
pub struct Artifact {
    pub name: String,
    pub format: Format,
    pub output: Output,
}

fn csv(name: &str, t: Table) -> Artifact {
    Artifact { name: name.into(), format: Format::Csv, output: Output::Table(t) }
}

fn json(name: &str, v: Value) -> Artifact {
    Artifact { name: name.into(), format: Format::Json, output: Output::Json(v) }
}

/// Kernel-table cache bookkeeping for one run.
pub struct Cache {
    pub root: PathBuf,
    pub hits: u64,
    pub misses: u64,
}

impl Cache {
    pub fn table(&mut self, d: usize, n_max: usize) -> Result<KernelTable, CliError> {
        let (t, hit) = KernelTable::load_or_build(&self.root, d, n_max)?;
        if hit {
            self.hits += 1;
        } else {
            self.misses += 1;
        }
        Ok(t)
    }
}

pub fn dispatch(command: Command, p: &Params, cache: &mut Cache) -> Result<Vec<Artifact>, CliError> {
    match command {
        Command::Green => green(p),
        Command::Annealed => annealed(p),
        Command::Quenched => quenched(p, cache),
        Command::Fracmom => fracmom(p, cache),
        Command::Renewal => renewal(p),
        Command::Pam => pam(p),
        Command::Polymer => polymer(p),
    }
}

fn est_cells(e: &McEstimate) -> [Cell; 2] {
    [Cell::Float(e.mean), Cell::Float(e.stderr)]
}

fn green(p: &Params) -> Result<Vec<Artifact>, CliError> {
    let d = p.usize("d")?;
    let mode = p.mode()?;
    let eps = p.f64_or("eps", 1e-6)?;
    let values: GreenValues = match mode {
        Mode::Discrete => match p.opt_f64("h")? {
            Some(h) => tilted_greens(d, h, eps)?,
            None => green_pair_with(d, &GreenOptions { eps, n0: p.usize_or("n0", 200)?, ..GreenOptions::default() })?,
        },
        Mode::Continuous => green_ct(d, p.f64("rho")?, eps)?,
    };
    let mut t = Table::new(&["d", "mode", "quantity", "method", "value", "error"]);
    let row = |q: &str, m: &str, v: Cell, e: Cell| vec![Cell::from(d), mode.as_str().into(), q.into(), m.into(), v, e];
    for r in &values.routes {
        let method = serde_json::to_value(r.method)?;
        t.push(row(r.quantity, method.as_str().unwrap_or(""), r.value.into(), r.error.into()));
    }
    for (name, g) in [("g_pair", values.g_pair), ("g_ct", values.g_ct)] {
        match g {
            Some(Green::Finite(v)) => t.push(row(name, "accepted", v.into(), Cell::Empty)),
            Some(Green::Divergent) => t.push(row(name, "divergent", Cell::Empty, Cell::Empty)),
            None => {}
        }
    }
    for (name, v) in [("g_even", values.g_even), ("g_odd", values.g_odd), ("gap", values.gap)] {
        if let Some(v) = v {
            t.push(row(name, "accepted", v.into(), Cell::Empty));
        }
    }
    Ok(vec![csv("greens.csv", t)])
}

fn annealed(p: &Params) -> Result<Vec<Artifact>, CliError> {
    let d = p.usize("d")?;
    let mode = p.mode()?;
    let rho = match mode {
        Mode::Discrete => 1.0,
        Mode::Continuous => p.f64("rho")?,
    };
    let tol = p.f64_or("tol", 1e-12)?;
    let mut crit = Table::new(&["mode", "d", "rho", "critical_point"]);
    crit.push(vec![mode.as_str().into(), d.into(), rho.into(), critical_point(mode, d, rho)?.into()]);
    let mut curve = Table::new(&["z", "free_energy", "ratio"]);
    let mut seq = Table::new(&["n", "log_c"]);
    if d >= 3 {
        let law = match mode {
            Mode::Discrete => renewal_law_discrete(d, p.usize_or("n_max", 4096)?)?,
            Mode::Continuous => renewal_law_continuous(d, rho, p.f64_or("dt", 0.01)?, p.f64_or("s_max", 200.0)?)?,
        };
        let zs = p.opt_f64s("zs")?.unwrap_or_else(|| vec![1.005, 1.01, 1.02, 1.05, 1.1]);
        for (z, f) in annealed_curve(&law, &zs, tol)?.points {
            let ratio = if z > 1.0 { Cell::Float(f / (z - 1.0)) } else { Cell::Empty };
            curve.push(vec![z.into(), f.into(), ratio]);
        }
        if let (Some(n), Mode::Discrete) = (p.opt_u64("n")?, mode) {
            let z = zs.last().copied().unwrap_or(1.0);
            for (k, l) in annealed_sequence(z, &law, n as usize)?.into_iter().enumerate() {
                seq.push(vec![k.into(), l.into()]);
            }
        }
    }
    let mut out = vec![csv("critical.csv", crit), csv("free_energy.csv", curve)];
    if p.has("n") {
        out.push(csv("sequence.csv", seq));
    }
    Ok(out)
}

fn quenched(p: &Params, cache: &mut Cache) -> Result<Vec<Artifact>, CliError> {
    let d = p.usize("d")?;
    let beta = p.f64("beta")?;
    let seed = p.seed()?;
    let replicas = p.usize_or("replicas", 100)?;
    if replicas == 0 {
        return Err(CliError::Config("key `replicas` must be at least 1".into()));
    }
    let (params, horizon) = match p.mode()? {
        Mode::Discrete => (ModelParams::discrete(d, beta)?, p.usize("n")? as f64),
        Mode::Continuous => (ModelParams::continuous(d, beta, p.f64("rho")?)?, p.f64("t")?),
    };
    let mut t = Table::new(&["replica", "log_free", "log_pin", "log_free_renewal"]);
    let rows: Vec<[f64; 3]> = match params.mode {
        Mode::Discrete => {
            let n = horizon as usize;
            let table = cache.table(d, n)?;
            (0..replicas as u64)
                .into_par_iter()
                .map(|r| {
                    let y = sample_discrete(d, n, seed, r);
                    let free = field_dp_partition(&params, &y, n, false)?.log_value;
                    let pin = field_dp_partition(&params, &y, n, true)?.log_value;
                    let ren = if beta >= 0.0 { renewal_dp_partition(&params, &y, n, false, &table)?.log_value } else { f64::NAN };
                    Ok([free, pin, ren])
                })
                .collect::<Result<_, PinError>>()?
        }
        Mode::Continuous => {
            let eps = p.f64_or("eps", 1e-8)?;
            (0..replicas as u64)
                .into_par_iter()
                .map(|r| {
                    let y = sample_ct(d, params.rho, horizon, seed, r)?;
                    let free = ct_partition(&params, &y, horizon, eps, false)?.log_value;
                    let pin = ct_partition(&params, &y, horizon, eps, true)?.log_value;
                    Ok([free, pin, f64::NAN])
                })
                .collect::<Result<_, PinError>>()?
        }
    };
    for (r, v) in rows.iter().enumerate() {
        let ren = if v[2].is_nan() { Cell::Empty } else { Cell::Float(v[2]) };
        t.push(vec![r.into(), v[0].into(), v[1].into(), ren]);
    }
    let rates: Vec<f64> = rows.iter().map(|v| v[1] / horizon).collect();
    let est = McEstimate::from_samples(&rates, seed);
    let summary = json!({
        "mode": params.mode.as_str(),
        "d": d,
        "beta": beta,
        "rho": params.rho,
        "horizon": horizon,
        "coupling": params.z,
        "free_energy": { "mean": est.mean, "stderr": est.stderr, "replicas": est.replicas },
    });
    Ok(vec![csv("partitions.csv", t), json("summary.json", summary)])
}

fn fracmom_config(p: &Params) -> Result<FracMomConfig, CliError> {
    let d = p.usize("d")?;
    let mut c = match p.mode()? {
        Mode::Discrete => FracMomConfig::discrete(d, p.f64("z")?)?,
        Mode::Continuous => FracMomConfig::continuous(d, p.f64("rho")?, p.f64("beta_bar")?)?,
    };
    c.gamma = p.f64_or("gamma", c.gamma)?;
    c.epsilon = p.f64_or("epsilon", c.epsilon)?;
    c.r = p.usize_or("r", c.r)?;
    c.replicas = p.usize_or("replicas", c.replicas)?;
    c.seed = p.seed()?;
    c.steps_per_unit = p.usize_or("steps_per_unit", c.steps_per_unit)?;
    c.validate()?;
    if let Some(h) = p.opt_f64("h")? {
        c = c.with_h(h)?;
    }
    Ok(c)
}

fn fracmom(p: &Params, cache: &mut Cache) -> Result<Vec<Artifact>, CliError> {
    let cfg = fracmom_config(p)?;
    let n = p.usize_or("n", cfg.l)?;
    let holder_n = p.opt_usizes("holder_n")?.unwrap_or_else(|| vec![n]);
    let couplings = p.opt_f64s("couplings")?;
    if cfg.mode == Mode::Discrete {
        let mut need = n;
        for &c in couplings.iter().flatten() {
            need = need.max(cfg.with_coupling(c)?.l);
        }
        install_table(cache.table(cfg.d, need.max(1))?);
    }
    let variant = cfg.criterion_variant();
    let a = frac_moment_table(&cfg, n, variant, false)?;
    let mut at = Table::new(&["n", "variant", "mean", "stderr"]);
    for (k, e) in a.iter().enumerate() {
        let [m, s] = est_cells(e);
        at.push(vec![k.into(), variant.as_str().into(), m, s]);
    }
    let mut ht = Table::new(&["n", "holder_factor", "tilted_value", "tilted_bound", "product", "a_mean", "a_stderr"]);
    for h in holder_splits(&cfg, &holder_n)? {
        let (m, s) = a.get(h.n).map_or((Cell::Empty, Cell::Empty), |e| (e.mean.into(), e.stderr.into()));
        ht.push(vec![h.n.into(), h.holder_factor.into(), h.tilted_value.into(), h.tilted_bound.into(), h.product.into(), m, s]);
    }
    let mut out = vec![
        json("config.json", serde_json::to_value(&cfg)?),
        csv("a_values.csv", at),
        csv("holder.csv", ht),
    ];
    if let Some(cs) = couplings {
        let rep = gap_scan(&cfg, &cs)?;
        let mut gt = Table::new(&[
            "coupling", "l", "h", "window_lo", "window_hi", "windowed_max", "criterion_value", "rho_hat", "rho_head", "rho_window", "shrink",
        ]);
        for r in &rep.rows {
            gt.push(vec![
                r.coupling.into(),
                r.l.into(),
                r.h.into(),
                r.window.0.into(),
                r.window.1.into(),
                r.windowed_max.into(),
                r.criterion_value.into(),
                r.rho_hat.value.into(),
                r.rho_hat.head.into(),
                r.rho_hat.window.into(),
                r.shrink.into(),
            ]);
        }
        out.push(csv("gap_scan.csv", gt));
        out.push(json(
            "gap_scan_summary.json",
            json!({
                "a_decreasing": rep.a_decreasing,
                "rho_decreasing": rep.rho_decreasing,
                "rho_last_below_first": rep.rho_last_below_first,
                "rho_below_one": rep.rho_below_one,
            }),
        ));
    }
    if let Some(zs) = p.opt_f64s("shrink_zs")? {
        let s = shrink_scan(cfg.d, &zs)?;
        let mut st = Table::new(&["z", "h", "shrink"]);
        for (z, v) in s.zs.iter().zip(&s.values) {
            st.push(vec![(*z).into(), (z - 1.0).sqrt().into(), (*v).into()]);
        }
        out.push(csv("shrink.csv", st));
        out.push(json("shrink_fit.json", serde_json::to_value(&s)?));
    }
    Ok(out)
}

fn renewal(p: &Params) -> Result<Vec<Artifact>, CliError> {
    let d = p.usize_or("d", 4)?;
    let defaults = DampedCountParams::default();
    let params = DampedCountParams {
        c: p.f64_or("c", defaults.c)?,
        delta1: p.f64_or("delta1", defaults.delta1)?,
        delta2: p.f64_or("delta2", defaults.delta2)?,
        n_grid: p.opt_usizes("n_grid")?.unwrap_or(defaults.n_grid),
        alpha: p.f64_or("alpha", defaults.alpha)?,
    };
    params.validate()?;
    let top = params.n_grid.iter().copied().max().unwrap_or(1);
    let law = renewal_law_discrete(d, p.usize_or("n_max", top.max(64))?)?;
    let replicas = p.usize_or("replicas", 0)?;
    let mc = (replicas > 0).then_some((replicas, p.seed()?));
    let scan = damped_count_scan(&params, &law, mc)?;
    let mut t = Table::new(&["N", "value", "prefactored_value", "mc_value", "stderr", "decade_ratio"]);
    for (k, r) in scan.rows.iter().enumerate() {
        let (m, s) = r.mc.as_ref().map_or((Cell::Empty, Cell::Empty), |e| (e.mean.into(), e.stderr.into()));
        let dr = if k == 0 { Cell::Empty } else { scan.decade_ratios[k - 1].into() };
        t.push(vec![r.n.into(), r.value.into(), r.prefactored_value.into(), m, s, dr]);
    }
    let summary = json!({
        "d": d,
        "params": serde_json::to_value(&params)?,
        "decreasing": scan.decreasing,
        "decays": scan.decays,
        "decade_ratios": scan.decade_ratios,
    });
    Ok(vec![csv("damped_count.csv", t), json("damped_count_summary.json", summary)])
}

fn pam(p: &Params) -> Result<Vec<Artifact>, CliError> {
    let (d, beta, rho, t) = (p.usize("d")?, p.f64("beta")?, p.f64("rho")?, p.f64("t")?);
    let replicas = p.usize_or("replicas", 100)?;
    let seed = p.seed()?;
    let mut tab = Table::new(&["quantity", "t", "mean", "stderr", "replicas"]);
    let lam = lyapunov_estimate(d, beta, rho, t, replicas, seed)?;
    let [m, s] = est_cells(&lam);
    tab.push(vec!["lyapunov".into(), t.into(), m, s, lam.replicas.into()]);
    if p.bool_or("free_energy", false)? {
        let f = free_energy_estimate(&ModelParams::continuous(d, beta, rho)?, t, replicas, seed)?;
        let [m, s] = est_cells(&f);
        tab.push(vec!["free_energy".into(), t.into(), m, s, f.replicas.into()]);
    }
    Ok(vec![csv("pam.csv", tab)])
}

fn polymer(p: &Params) -> Result<Vec<Artifact>, CliError> {
    let (d, n, lambda) = (p.usize("d")?, p.usize("n")?, p.f64("lambda")?);
    let law = match (p.opt_f64s("values")?, p.opt_f64s("probs")?) {
        (Some(v), Some(pr)) => DisorderLaw::new(v, pr)?,
        (None, None) => DisorderLaw::rademacher(),
        (Some(_), None) => return Err(CliError::Config("key `probs` is required with `values`".into())),
        (None, Some(_)) => return Err(CliError::Config("key `values` is required with `probs`".into())),
    };
    let spec = PolymerSpec::new(lambda, law.clone())?;
    let seed = p.seed()?;
    let replicas = p.usize_or("replicas", 100)?;
    let zs: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| polymer_partition(&spec, n, &OmegaField::sample(d, n, &law, seed, r)?))
        .collect::<Result<_, PinError>>()?;
    let mut pt = Table::new(&["replica", "partition"]);
    for (r, z) in zs.iter().enumerate() {
        pt.push(vec![r.into(), (*z).into()]);
    }
    let cubic = p.opt_f64s("cubic")?.unwrap_or_else(|| vec![0.3, -0.7, 0.2, 0.05]);
    if cubic.len() != 4 {
        return Err(CliError::Config("key `cubic` must hold four coefficients".into()));
    }
    let fs: [(&str, Box<dyn Fn(f64) -> f64>); 4] = [
        ("one", Box::new(|_| 1.0)),
        ("x", Box::new(|x| x)),
        ("x2", Box::new(|x| x * x)),
        ("cubic", Box::new(move |x| cubic[0] + x * (cubic[1] + x * (cubic[2] + x * cubic[3])))),
    ];
    let mut st = Table::new(&["f", "lhs", "rhs", "diff"]);
    let mut exact = Value::Null;
    match size_bias_check(&spec, n, d, &*fs[0].1) {
        Err(PinError::TooLarge(_)) => {}
        Err(e) => return Err(e.into()),
        Ok(_) => {
            for (name, f) in &fs {
                let r = size_bias_check(&spec, n, d, &**f)?;
                st.push(vec![(*name).into(), r.lhs.into(), r.rhs.into(), r.diff.into()]);
            }
            exact = json!({
                "mean": polymer_mean(&spec, n, d)?,
                "second_moment": second_moment_pairs(&spec, n, d)?,
            });
        }
    }
    let mc = McEstimate::from_samples(&zs, seed);
    let summary = json!({
        "d": d,
        "n": n,
        "lambda": lambda,
        "beta_hat": spec.beta_hat(),
        "mc_mean": { "mean": mc.mean, "stderr": mc.stderr, "replicas": mc.replicas },
        "exact": exact,
    });
    Ok(vec![csv("partitions.csv", pt), csv("size_bias.csv", st), json("summary.json", summary)])
}
