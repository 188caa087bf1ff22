use std::sync::OnceLock;

use pinlab_core::annealed::{annealed_free_energy, renewal_law_discrete, RenewalLaw};
use pinlab_core::disorder::{sample_discrete, sample_tilted, DisorderPath};
use pinlab_core::kernels::KernelTable;
use pinlab_core::pam_polymer::{polymer_mean, size_bias_check, DisorderLaw, PolymerSpec};
use pinlab_core::quenched::{enumerate_partition, field_dp_partition, renewal_dp_partition, ModelParams};
use pinlab_core::renewal::exact_gf_dp;
use proptest::prelude::*;

fn table(d: usize) -> &'static KernelTable {
    static TABLES: OnceLock<Vec<KernelTable>> = OnceLock::new();
    &TABLES.get_or_init(|| (1..=3).map(|d| KernelTable::build(d, 12).unwrap()).collect())[d - 1]
}

fn law5() -> &'static RenewalLaw {
    static LAW: OnceLock<RenewalLaw> = OnceLock::new();
    LAW.get_or_init(|| renewal_law_discrete(5, 256).unwrap())
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_is_normalised_and_parity_clean(d in 1usize..=3, n in 0usize..=12) {
        let t = table(d);
        prop_assert!((t.total_mass(n) - 1.0).abs() < 1e-12);
        let mut x = vec![0i32; d];
        x[0] = (n as i32) + 1;
        prop_assert_eq!(t.prob(n, &x), 0.0);
        x[0] = 1 - (n as i32 % 2);
        prop_assert_eq!(t.prob(n, &x), 0.0);
    }

    #[test]
    fn chapman_kolmogorov(d in 1usize..=3, m in 0usize..=6, n in 0usize..=6, raw in proptest::collection::vec(-4i32..=4, 3)) {
        let t = table(d);
        let x = &raw[..d];
        let r = m as i32;
        let mut total = 0.0;
        let mut y = vec![-r; d];
        loop {
            let diff: Vec<i32> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            total += t.prob(m, &y) * t.prob(n, &diff);
            let mut k = 0;
            while k < d && y[k] == r {
                y[k] = -r;
                k += 1;
            }
            if k == d {
                break;
            }
            y[k] += 1;
        }
        prop_assert!((total - t.prob(m + n, x)).abs() < 1e-10);
    }

    #[test]
    fn three_routes_agree(d in 1usize..=3, n in 1usize..=5, beta in 0.05f64..1.5, seed in 0u64..1000, constrained: bool) {
        let params = ModelParams::discrete(d, beta).unwrap();
        let path = sample_discrete(d, n, seed, 0);
        let e = enumerate_partition(&params, &path, n, constrained).unwrap().value();
        let f = field_dp_partition(&params, &path, n, constrained).unwrap().value();
        let r = renewal_dp_partition(&params, &path, n, constrained, table(d)).unwrap().value();
        prop_assert!(e == f || rel(e, f) <= 1e-10);
        // the renewal route pins a collision at the endpoint, which carries the factor z'/(1+z')
        let zp = params.z_prime();
        let e = if constrained { zp / (1.0 + zp) * e } else { e };
        prop_assert!(e == r || rel(e, r) <= 1e-10);
    }

    #[test]
    fn log_partition_is_convex_in_beta(d in 1usize..=3, n in 2usize..=8, seed in 0u64..1000) {
        let path = sample_discrete(d, n, seed, 3);
        let vals: Vec<f64> = (0..9)
            .map(|k| {
                let params = ModelParams::discrete(d, -1.0 + 0.35 * k as f64).unwrap();
                field_dp_partition(&params, &path, n, false).unwrap().log_value
            })
            .collect();
        for w in vals.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-12);
        }
        for w in vals.windows(3) {
            prop_assert!(w[0] + w[2] - 2.0 * w[1] >= -1e-9);
        }
    }

    #[test]
    fn free_dominates_pinned(d in 1usize..=3, n in 1usize..=8, beta in -1.0f64..2.0, seed in 0u64..1000) {
        let params = ModelParams::discrete(d, beta).unwrap();
        let path = sample_discrete(d, n, seed, 1);
        let free = field_dp_partition(&params, &path, n, false).unwrap().log_value;
        let pin = field_dp_partition(&params, &path, n, true).unwrap().log_value;
        prop_assert!(free >= pin - 1e-12);
    }

    #[test]
    fn samplers_depend_only_on_seed_and_replica(d in 1usize..=5, n in 1usize..=40, seed: u64, replica in 0u64..1_000_000, h in 0.0f64..0.9) {
        let a: DisorderPath = sample_discrete(d, n, seed, replica);
        prop_assert_eq!(&a.steps, &sample_discrete(d, n, seed, replica).steps);
        let b = sample_tilted(d, n, h, seed, replica).unwrap();
        prop_assert_eq!(&b.steps, &sample_tilted(d, n, h, seed, replica).unwrap().steps);
    }

    #[test]
    fn renewal_gf_at_one_is_one(raw in proptest::collection::vec(0.01f64..1.0, 1..40), n in 0usize..=300) {
        let total: f64 = raw.iter().sum();
        let mut masses = vec![0.0];
        masses.extend(raw.iter().map(|m| m / total));
        let law = RenewalLaw::from_masses(masses, None).unwrap();
        let v = exact_gf_dp(&law, n, 1.0).unwrap();
        prop_assert!((v - 1.0).abs() <= 1e-13 * (n as f64 + 1.0) + law.defect.abs() * n as f64, "n={} v={}", n, v);
    }

    #[test]
    fn renewal_gf_at_one_tracks_the_fitted_law(n in 0usize..=600) {
        // each renewal loses the normalisation defect once
        let law = law5();
        let v = exact_gf_dp(law, n, 1.0).unwrap();
        prop_assert!((v - 1.0).abs() <= 1e-12 + 2.0 * law.defect.abs() * n as f64, "n={} v={} defect={}", n, v, law.defect);
    }

    #[test]
    fn fractional_power_is_subadditive(a in proptest::collection::vec(0.0f64..10.0, 1..20), gamma in 0.05f64..1.0) {
        let lhs = a.iter().sum::<f64>().powf(gamma);
        let rhs: f64 = a.iter().map(|x| x.powf(gamma)).sum();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn size_bias_holds_for_random_laws(p in 0.1f64..0.9, lambda in 0.0f64..1.5, n in 1usize..=3, c in proptest::collection::vec(-1.0f64..1.0, 4)) {
        // Bernoulli law shifted to mean zero
        let law = DisorderLaw::new(vec![1.0 - p, -p], vec![p, 1.0 - p]).unwrap();
        let spec = PolymerSpec::new(lambda, law).unwrap();
        let f = move |x: f64| c[0] + c[1] * x + c[2] * x * x + c[3] * x * x * x;
        let r = size_bias_check(&spec, n, 1, &f).unwrap();
        prop_assert!(r.diff <= 1e-12 * r.lhs.abs().max(1.0));
        prop_assert!((polymer_mean(&spec, n, 1).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn annealed_free_energy_is_monotone_and_positive() {
    let law = law5();
    let mut last = 0.0;
    for z in [1.001, 1.01, 1.05, 1.1, 1.2] {
        let f = annealed_free_energy(z, law, 1e-12).unwrap();
        assert!(f > last, "z={z} f={f}");
        last = f;
    }
    assert_eq!(annealed_free_energy(0.9, law, 1e-12).unwrap(), 0.0);
}
