use super::*;
use crate::annealed::{annealed_sequence, renewal_law_discrete};
use crate::disorder::sample_ct;
use crate::kernels::pair_green_value;
use crate::quenched::{ct_partition, free_energy_estimate, ModelParams};

fn path(d: usize) -> DisorderPath {
    let steps = [0u8, 2, 0, 3].iter().map(|s| s % (2 * d as u8)).collect();
    DisorderPath::continuous(d, vec![0.4, 1.1, 1.7, 2.6], steps, 3.0).unwrap()
}

#[test]
fn constants_survive_without_coupling() {
    let u = pam_solve(2, 0.0, 1.0, 3.0, &path(2), 1e-8).unwrap();
    assert!(u.values.iter().all(|v| *v == 1.0) && u.log_scale == 0.0);
    assert_eq!(lyapunov_estimate(1, 0.0, 1.0, 20.0, 4, 1).unwrap().mean, 0.0);
}

#[test]
fn field_stays_between_potential_bounds() {
    for beta in [0.7, -0.7] {
        let u = pam_solve(2, beta, 1.0, 3.0, &path(2), 1e-8).unwrap();
        let lo = (beta.min(0.0) * 3.0).exp();
        let hi = (beta.max(0.0) * 3.0).exp();
        for v in &u.values {
            let x = v * u.log_scale.exp();
            assert!(x >= lo * (1.0 - 1e-12) && x <= hi * (1.0 + 1e-12), "beta={beta}: {x}");
        }
        let mean = u.values.iter().sum::<f64>() * u.log_scale.exp() / u.values.len() as f64;
        assert!(mean >= lo * (1.0 - 1e-12) && mean <= hi * (1.0 + 1e-12));
    }
}

#[test]
fn field_at_catalyst_is_reversed_partition_function() {
    // Feynman-Kac: u(t, Y_t) = E_{Y_t}[exp(beta int_0^t 1{X_s = Y_{t-s}} ds)], which is the
    // free partition function against the reversed path s -> Y_{t-s} - Y_t.
    for (d, beta) in [(1, 0.9), (2, 0.6), (2, -0.5)] {
        let y = path(d);
        let u = pam_solve(d, beta, 1.0, 3.0, &y, 1e-10).unwrap();
        let params = ModelParams::continuous(d, beta, 1.0).unwrap();
        let z = ct_partition(&params, &y.time_reversed().unwrap(), 3.0, 1e-10, false).unwrap().value();
        let got = u.value_at(&y.position_at(3.0)).unwrap();
        assert!((got / z - 1.0).abs() < 1e-8, "d={d} beta={beta}: {got} vs {z}");
    }
}

#[test]
fn certified_region_is_enforced() {
    let u = pam_solve(1, 0.5, 1.0, 3.0, &path(1), 1e-8).unwrap();
    assert!(u.value_at(&[u.reach as i32 + 1]).is_err());
}

#[test]
fn repulsive_catalyst_gives_nonpositive_exponent() {
    let a = lyapunov_estimate(1, -1.0, 1.0, 20.0, 16, 3).unwrap();
    let b = lyapunov_estimate(1, -1.0, 1.0, 80.0, 16, 3).unwrap();
    assert!(a.mean <= 0.0 && b.mean <= 0.0);
    assert!(b.mean.abs() < a.mean.abs());
}

#[test]
fn lyapunov_exponent_tracks_free_energy() {
    let (beta, rho, t) = (1.0, 1.0, 50.0);
    let lam = lyapunov_estimate(1, beta, rho, t, 40, 2).unwrap();
    let f = free_energy_estimate(&ModelParams::continuous(1, beta, rho).unwrap(), t, 40, 2).unwrap();
    let band = 3.0 * (lam.stderr.powi(2) + f.stderr.powi(2)).sqrt() + 1.0 / t;
    assert!((lam.mean - f.mean).abs() <= band, "{lam:?} vs {f:?}");
    let _ = sample_ct(1, rho, t, 2, 0).unwrap();
}

fn spec(lambda: f64) -> PolymerSpec {
    PolymerSpec::new(lambda, DisorderLaw::rademacher()).unwrap()
}

#[test]
fn beta_hat_closed_forms() {
    assert_eq!(beta_hat(0.0, |l| l * l / 2.0), 0.0);
    assert!((beta_hat(0.7, |l| l * l / 2.0) - 0.49).abs() < 1e-15);
    let s = spec(0.0);
    assert_eq!(s.beta_hat(), 0.0);
    let mut last = 0.0;
    for k in 1..=20 {
        let l = 0.1 * k as f64;
        let b = spec(l).beta_hat();
        let closed = (2.0 * l).cosh().ln() - 2.0 * l.cosh().ln();
        assert!((b - closed).abs() < 1e-14 && b > last, "lambda={l}");
        last = b;
    }
}

#[test]
fn threshold_inverts_beta_hat() {
    let bc = (1.0 + 1.0 / pair_green_value(4).unwrap()).ln();
    let l = lambda_threshold(bc, 10.0, |l| l * l / 2.0).unwrap();
    assert!((l - bc.sqrt()).abs() < 1e-12);
    // Rademacher: beta_hat stays below log 2, short of the annealed critical point for d >= 3.
    let law = DisorderLaw::rademacher();
    let bc3 = (1.0 + 1.0 / pair_green_value(3).unwrap()).ln();
    assert!(bc3 > 2f64.ln());
    assert!(lambda_threshold(bc3, 40.0, |l| law.log_mgf(l)).is_none());
}

#[test]
fn zero_lambda_gives_unit_partition() {
    let w = OmegaField::sample(2, 4, &DisorderLaw::rademacher(), 5, 0).unwrap();
    assert_eq!(polymer_partition(&spec(0.0), 4, &w).unwrap(), 1.0);
}

#[test]
fn exact_and_transfer_routes_agree() {
    let law = DisorderLaw::new(vec![-2.0, 0.0, 1.0], vec![0.2, 0.4, 0.4]).unwrap();
    let s = PolymerSpec::new(0.6, law.clone()).unwrap();
    for (d, n, r) in [(1, 10, 0), (2, 6, 1), (3, 5, 2)] {
        let w = OmegaField::sample(d, n, &law, 9, r).unwrap();
        let a = polymer_partition_exact(&s, n, &w).unwrap();
        let b = polymer_partition_dp(&s, n, &w).unwrap();
        assert!((a / b - 1.0).abs() < 1e-12, "d={d} n={n}");
    }
    let w = OmegaField::sample(3, 10, &law, 9, 0).unwrap();
    assert!(polymer_partition_exact(&s, 10, &w).is_err());
    assert!(polymer_partition(&s, 10, &w).is_ok());
}

#[test]
fn partition_is_normalised_and_a_martingale() {
    let s = spec(0.8);
    assert!((polymer_mean(&s, 2, 1).unwrap() - 1.0).abs() < 1e-14);
    assert!((polymer_mean(&s, 3, 1).unwrap() - 1.0).abs() < 1e-14);
    for n in 0..=3 {
        for r in 0..3 {
            let w = OmegaField::sample(1, n + 1, &s.law, 4, r).unwrap();
            let (z, next) = martingale_step(&s, n, &w).unwrap();
            assert!((z - next).abs() < 1e-14 * z, "n={n}");
        }
    }
}

#[test]
fn size_biased_partition_identity() {
    let s = spec(0.7);
    let cubic = |x: f64| 0.3 - 1.1 * x + 0.45 * x * x - 0.2 * x * x * x;
    for n in 1..=3 {
        let one = size_bias_check(&s, n, 1, &|_| 1.0).unwrap();
        assert!((one.lhs - 1.0).abs() < 1e-12 && (one.rhs - 1.0).abs() < 1e-12);
        for f in [&(|x: f64| x) as &dyn Fn(f64) -> f64, &|x: f64| x * x, &cubic] {
            let r = size_bias_check(&s, n, 1, f).unwrap();
            assert!(r.diff <= 1e-12, "n={n}: {r:?}");
        }
    }
    assert!(size_bias_check(&s, 6, 2, &|x| x).is_err());
}

#[test]
fn second_moment_is_annealed_pinning() {
    let s = spec(0.5);
    let d = 3;
    let n = 4;
    let pairs = second_moment_pairs(&s, n, d).unwrap();
    let m2 = size_bias_check(&s, 2, 1, &|x| x).unwrap().rhs;
    assert!((second_moment_pairs(&s, 2, 1).unwrap() - m2).abs() < 1e-12);
    let z = (s.beta_hat().exp() - 1.0) * pair_green_value(d).unwrap();
    let law = renewal_law_discrete(d, 64).unwrap();
    let c = annealed_sequence(z, &law, n).unwrap();
    let free: f64 = c.iter().map(|l| l.exp()).sum();
    assert!((pairs / free - 1.0).abs() < 1e-9, "{pairs} vs {free}");
}
