//! Point probabilities of the discrete walk computed by splitting the steps among coordinates.
//!
//! An `n`-step walk on `Z^d` moves coordinate `j` a binomial number of times; given that
//! allocation the coordinates evolve as independent one-dimensional walks. This gives
//! `P_n(x)` for all `n` at once in `O(d n^2)` without any lattice storage.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::special::binom_pmf;

/// `Bin(m, p)` masses for `k = 0..=m`, computed outward from the mode.
pub(crate) fn binom_row(m: usize, p: f64) -> Vec<f64> {
    let mut row = vec![0.0; m + 1];
    if p <= 0.0 {
        row[0] = 1.0;
        return row;
    }
    if p >= 1.0 {
        row[m] = 1.0;
        return row;
    }
    let q = 1.0 - p;
    let mode = (((m + 1) as f64 * p).floor() as usize).min(m);
    row[mode] = binom_pmf(mode as u64, m as u64, p);
    for k in mode..m {
        row[k + 1] = row[k] * (m - k) as f64 / (k + 1) as f64 * (p / q);
    }
    for k in (1..=mode).rev() {
        row[k - 1] = row[k] * k as f64 / (m - k + 1) as f64 * (q / p);
    }
    row
}

/// One-dimensional `P1_k(x)`.
fn p1(k: usize, x: u32) -> f64 {
    let x = x as usize;
    if x > k || (k + x) % 2 == 1 {
        return 0.0;
    }
    binom_pmf(((k + x) / 2) as u64, k as u64, 0.5)
}

/// `P_n(x)` for `n = 0..=n_max`.
pub fn walk_prob_all_n(d: usize, n_max: usize, x: &[i32]) -> Vec<f64> {
    assert_eq!(x.len(), d);
    let mut f: Vec<f64> = (0..=n_max).map(|m| p1(m, x[0].unsigned_abs())).collect();
    for (j, xj) in x.iter().enumerate().skip(1) {
        let dims = (j + 1) as f64;
        let coord: Vec<f64> = (0..=n_max).map(|k| p1(k, xj.unsigned_abs())).collect();
        let mut g = vec![0.0; n_max + 1];
        for (m, slot) in g.iter_mut().enumerate() {
            let row = binom_row(m, 1.0 / dims);
            let mut acc = 0.0;
            for k in 0..=m {
                if coord[k] != 0.0 && f[m - k] != 0.0 {
                    acc += row[k] * coord[k] * f[m - k];
                }
            }
            *slot = acc;
        }
        f = g;
    }
    f
}

fn compute_return_probabilities(d: usize, n_max: usize) -> Vec<f64> {
    let coord: Vec<f64> = (0..=n_max).map(|k| p1(k, 0)).collect();
    let mut f = coord.clone();
    for j in 2..=d {
        let mut g = vec![0.0; n_max + 1];
        for m in (0..=n_max).step_by(2) {
            let row = binom_row(m, 1.0 / j as f64);
            let mut acc = 0.0;
            for k in (0..=m).step_by(2) {
                acc += row[k] * coord[k] * f[m - k];
            }
            g[m] = acc;
        }
        f = g;
    }
    f
}

/// `p_n(0)` for `n = 0..=n_max`; memoised per dimension.
pub fn return_probabilities(d: usize, n_max: usize) -> Arc<Vec<f64>> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<Vec<f64>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().unwrap().get(&d) {
        if v.len() > n_max {
            return v.clone();
        }
    }
    // Grow geometrically so repeated requests stay cheap.
    let target = {
        let guard = cache.lock().unwrap();
        guard.get(&d).map_or(n_max, |v| n_max.max(2 * v.len()))
    };
    let v = Arc::new(compute_return_probabilities(d, target));
    cache.lock().unwrap().insert(d, v.clone());
    v
}

/// `p_n` at the lattice point nearest the origin with the right parity: `p_n(0)` for
/// even `n`, `p_n(e_1) = p_{n+1}(0)` for odd `n`. This is `max_x p_n(x)`.
pub fn max_step_prob(d: usize, n: usize) -> f64 {
    let r = return_probabilities(d, n + 1);
    if n % 2 == 0 {
        r[n]
    } else {
        r[n + 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelTable;

    #[test]
    fn binomial_row_sums_to_one() {
        for m in [0, 1, 7, 100, 5000] {
            let s: f64 = binom_row(m, 0.25).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "m={m}");
        }
    }

    #[test]
    fn allocation_route_matches_lattice_table() {
        for (d, n) in [(1, 20), (2, 14), (3, 12), (4, 10)] {
            let t = KernelTable::build(d, n).unwrap();
            let r = return_probabilities(d, n);
            for x in [vec![0; d], { let mut v = vec![0; d]; v[0] = 2; v }, (0..d as i32).map(|i| i % 2 + 1).collect()] {
                let all = walk_prob_all_n(d, n, &x);
                for k in 0..=n {
                    let a = t.prob(k, &x);
                    assert!((all[k] - a).abs() <= 1e-14 + 1e-12 * a, "d={d} k={k} x={x:?}");
                }
            }
            for k in 0..=n {
                let a = t.prob(k, &vec![0; d]);
                assert!((r[k] - a).abs() <= 1e-13 * a);
            }
        }
    }

    #[test]
    fn nearest_point_is_the_maximum() {
        for d in 1..=5 {
            let t = KernelTable::build(d, 16).unwrap();
            for n in 1..=15 {
                let m = t.max_prob(n);
                assert!((max_step_prob(d, n) - m).abs() <= 1e-13 * m, "d={d} n={n}");
            }
        }
    }

    #[test]
    fn pair_return_equals_doubled_walk_return() {
        let t = KernelTable::build(4, 20).unwrap();
        let r = return_probabilities(4, 40);
        for n in 1..=20 {
            let a = t.pair_return_mass(n).unwrap();
            assert!((a - r[2 * n]).abs() < 1e-13 * a, "n={n}");
        }
    }
}
