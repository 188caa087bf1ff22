use pinlab_core::kernels::{entropy_sum, green_pair, tilted_greens};

fn ratios(d: usize) -> Vec<f64> {
    [1e3, 1e4, 1e5].iter().map(|&t: &f64| entropy_sum(d, 1.0, t).unwrap().value / t.ln()).collect()
}

#[test]
fn entropy_ratio_approaches_minus_half_dimension() {
    for d in [1usize, 2] {
        let limit = -(d as f64) / 2.0;
        let r = ratios(d);
        for w in r.windows(2) {
            assert!((w[1] - limit).abs() < (w[0] - limit).abs(), "d={d}: {r:?}");
        }
        assert!((r[2] - limit).abs() < 0.15 * d as f64, "d={d}: {r:?}");
    }
}

#[test]
fn entropy_sum_truncation_is_tracked() {
    let e = entropy_sum(1, 1.0, 1e4).unwrap();
    assert!(e.truncation >= 0.0 && e.truncation < 1e-10 * e.value.abs());
}

#[test]
fn untilted_parity_greens_match_pair_green() {
    for d in [4usize, 5] {
        let g = green_pair(d, 1e-6).unwrap().g_pair.unwrap().value().unwrap();
        let t = tilted_greens(d, 0.0, 1e-8).unwrap();
        assert!((t.g_even.unwrap() - g).abs() < 1e-10, "d={d}");
        assert!((t.g_odd.unwrap() - g).abs() < 1e-10, "d={d}");
    }
}

#[test]
fn recurrent_dimensions_have_divergent_pair_green() {
    for d in [1usize, 2] {
        assert!(!green_pair(d, 1e-6).unwrap().g_pair.unwrap().is_finite());
    }
}
