//! Special functions and quadrature rules shared by the kernel and partition code.
//!
//! Binomial and Poisson masses use Loader's saddle-point form so that
//! probabilities at several thousand steps keep full relative precision.

use std::f64::consts::PI;


const SMALL: [f64; 16] = [
    0.0,
    0.081_061_466_795_327_258_22,
    0.041_340_695_955_409_294_09,
    0.027_677_925_684_998_339_15,
    0.020_790_672_103_765_093_11,
    0.016_644_691_189_821_192_16,
    0.013_876_128_823_070_748_00,
    0.011_896_709_945_891_770_10,
    0.010_411_265_261_972_096_50,
    0.009_255_462_182_712_732_918,
    0.008_330_563_433_362_871_257,
    0.007_573_675_487_951_840_795,
    0.006_942_840_107_209_529_866,
    0.006_408_994_188_004_207_068,
    0.005_951_370_112_758_847_736,
    0.005_554_733_551_962_801_371,
];

/// `ln(n!) - ((n + 1/2) ln n - n + ln sqrt(2 pi))`, the Stirling remainder.
pub fn stirlerr(n: f64) -> f64 {
    const S0: f64 = 1.0 / 12.0;
    const S1: f64 = 1.0 / 360.0;
    const S2: f64 = 1.0 / 1260.0;
    const S3: f64 = 1.0 / 1680.0;
    const S4: f64 = 1.0 / 1188.0;
    if n <= 15.0 {
        let k = n.round();
        debug_assert!((n - k).abs() < 1e-12, "stirlerr is only tabulated at integers");
        return SMALL[k as usize];
    }
    let nn = n * n;
    if n > 500.0 {
        (S0 - S1 / nn) / n
    } else if n > 80.0 {
        (S0 - (S1 - S2 / nn) / nn) / n
    } else if n > 35.0 {
        (S0 - (S1 - (S2 - S3 / nn) / nn) / nn) / n
    } else {
        (S0 - (S1 - (S2 - (S3 - S4 / nn) / nn) / nn) / nn) / n
    }
}

/// Deviance term `x ln(x/np) + np - x`, evaluated without cancellation.
pub fn bd0(x: f64, np: f64) -> f64 {
    if (x - np).abs() < 0.1 * (x + np) {
        let mut v = (x - np) / (x + np);
        let mut s = (x - np) * v;
        let mut ej = 2.0 * x * v;
        v *= v;
        let mut j = 1;
        loop {
            ej *= v;
            let s1 = s + ej / (2 * j + 1) as f64;
            if s1 == s {
                return s1;
            }
            s = s1;
            j += 1;
            if j > 1000 {
                return s;
            }
        }
    }
    x * (x / np).ln() + np - x
}

/// Binomial mass `C(n,k) p^k (1-p)^(n-k)`.
pub fn binom_pmf(k: u64, n: u64, p: f64) -> f64 {
    if k > n {
        return 0.0;
    }
    let q = 1.0 - p;
    if p == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if q == 0.0 {
        return if k == n { 1.0 } else { 0.0 };
    }
    let (x, nf) = (k as f64, n as f64);
    if k == 0 {
        if n == 0 {
            return 1.0;
        }
        let lc = if p < 0.1 { -bd0(nf, nf * q) - nf * p } else { nf * q.ln() };
        return lc.exp();
    }
    if k == n {
        let lc = if q < 0.1 { -bd0(nf, nf * p) - nf * q } else { nf * p.ln() };
        return lc.exp();
    }
    let lc = stirlerr(nf) - stirlerr(x) - stirlerr(nf - x) - bd0(x, nf * p) - bd0(nf - x, nf * q);
    let lf = (2.0 * PI).ln() + x.ln() + (-x / nf).ln_1p();
    (lc - 0.5 * lf).exp()
}

/// Poisson mass `e^{-mu} mu^k / k!`.
pub fn poisson_pmf(k: u64, mu: f64) -> f64 {
    if mu == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    if k == 0 {
        return (-mu).exp();
    }
    let x = k as f64;
    (-stirlerr(x) - bd0(x, mu)).exp() / (2.0 * PI * x).sqrt()
}

/// `P(N > k)` for `N ~ Poisson(mu)`.
pub fn poisson_sf(k: u64, mu: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    if (k as f64) < mu {
        let mut cdf = 0.0;
        let mut term = (-mu).exp();
        if term > 0.0 {
            for j in 0..=k {
                if j > 0 {
                    term *= mu / j as f64;
                }
                cdf += term;
            }
            return (1.0 - cdf).max(0.0);
        }
        let cdf: f64 = (0..=k).map(|j| poisson_pmf(j, mu)).sum();
        return (1.0 - cdf).max(0.0);
    }
    let mut j = k + 1;
    let mut term = poisson_pmf(j, mu);
    let mut total = 0.0;
    loop {
        total += term;
        j += 1;
        term *= mu / j as f64;
        if term <= total * 1e-18 || term == 0.0 {
            let ratio = mu / (j + 1) as f64;
            return total + term / (1.0 - ratio).max(1e-300);
        }
    }
}

/// Smallest `r >= 0` with `P(N > r) <= tol` for `N ~ Poisson(mu)`.
pub fn poisson_radius(mu: f64, tol: f64) -> u64 {
    if mu == 0.0 {
        return 0;
    }
    let mut r = mu.floor() as u64;
    // pmf(r + 1) / (1 - mu / (r + 2)) bounds the tail above r once r + 2 > mu.
    let mut next = poisson_pmf(r + 1, mu);
    loop {
        let ratio = mu / (r + 2) as f64;
        if ratio < 1.0 && next / (1.0 - ratio) <= tol {
            return r;
        }
        r += 1;
        next *= mu / (r + 1) as f64;
        if next == 0.0 {
            return r;
        }
    }
}

/// `ln P(N = k)` for `N ~ Poisson(mu)`, `mu > 0`.
pub fn ln_poisson_pmf(k: u64, mu: f64) -> f64 {
    if k == 0 {
        return -mu;
    }
    let x = k as f64;
    -stirlerr(x) - bd0(x, mu) - 0.5 * (2.0 * PI * x).ln()
}

/// Smallest `r >= mu` whose bound `pmf(r+1) / (1 - mu/(r+2))` on `P(N > r)` is below `exp(log_tol)`.
pub fn poisson_radius_log(mu: f64, log_tol: f64) -> u64 {
    if mu == 0.0 {
        return 0;
    }
    let mut r = mu.ceil() as u64;
    loop {
        let bound = ln_poisson_pmf(r + 1, mu) - (1.0 - mu / (r + 2) as f64).ln();
        if bound <= log_tol {
            return r;
        }
        r += 1 + r / 64;
    }
}

/// Chernoff bound on `P(|X_s| > r)` for the rate-one walk on `Z`.
pub fn chernoff_tail_1d(s: f64, r: u64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    let a = (r + 1) as f64;
    let lam = (a / s).asinh();
    let log_bound = s * (lam.cosh() - 1.0) - lam * a;
    (2.0 * log_bound.exp()).min(1.0)
}

/// Smallest radius `r` whose Chernoff tail bound is at most `tol`.
pub fn chernoff_radius_1d(s: f64, tol: f64) -> u64 {
    if s == 0.0 {
        return 0;
    }
    let mut lo = 0u64;
    let mut hi = 1u64;
    while chernoff_tail_1d(s, hi) > tol {
        lo = hi;
        hi *= 2;
    }
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        if chernoff_tail_1d(s, mid) > tol {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if chernoff_tail_1d(s, lo) <= tol {
        lo
    } else {
        hi
    }
}

/// Exponentially scaled modified Bessel values `e^{-s} I_k(s)` for `k = 0..=radius`.
///
/// These are the transition probabilities of the rate-one walk on `Z` at time `s`.
/// Miller's backward recurrence, normalised by `I_0 + 2 sum_k I_k = e^s`.
pub fn scaled_bessel_row(s: f64, radius: usize) -> Vec<f64> {
    let mut out = vec![0.0; radius + 1];
    if s == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let start = radius.max(chernoff_radius_1d(s, 1e-300) as usize) + 16;
    let mut vals = vec![0.0; start + 2];
    vals[start] = 1e-280;
    for k in (1..=start).rev() {
        let next = 2.0 * k as f64 / s * vals[k] + vals[k + 1];
        vals[k - 1] = next;
        if next > 1e250 {
            for v in vals[k - 1..].iter_mut() {
                *v *= 1e-250;
            }
        }
    }
    let mut norm = 0.0;
    for k in (1..=start).rev() {
        norm += 2.0 * vals[k];
    }
    norm += vals[0];
    for (o, v) in out.iter_mut().zip(vals.iter()) {
        *o = v / norm;
    }
    out
}

/// Hurwitz zeta `sum_{k>=0} (k + a)^{-s}` for `s > 1`, `a > 0`.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    assert!(s > 1.0 && a > 0.0, "hurwitz_zeta requires s > 1, a > 0");
    // B_{2j} / (2j)!
    const B: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1209600.0,
        1.0 / 47900160.0,
        -691.0 / 1307674368000.0,
        1.0 / 74724249600.0,
        -3617.0 / 10670622842880000.0,
    ];
    let shift = if a < 25.0 { (25.0 - a).ceil() as usize } else { 0 };
    let mut head = 0.0;
    for k in 0..shift {
        head += (k as f64 + a).powf(-s);
    }
    let x = a + shift as f64;
    let mut tail = x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s);
    // Rising factorial s (s+1) ... (s+2j-2) times x^{-s-2j+1}.
    let mut rising = s;
    let mut pow = x.powf(-s - 1.0);
    for (j, b) in B.iter().enumerate() {
        tail += b * rising * pow;
        let m = 2.0 * j as f64;
        rising *= (s + m + 1.0) * (s + m + 2.0);
        pow /= x * x;
    }
    head + tail
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; m];
    let mut weights = vec![0.0; m];
    let half = m.div_ceil(2);
    for i in 0..half {
        let mut x = (PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = -x;
        nodes[m - 1 - i] = x;
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        weights[i] = w;
        weights[m - 1 - i] = w;
    }
    (nodes, weights)
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(m: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(m);
    let (c, h) = (0.5 * (a + b), 0.5 * (b - a));
    (x.iter().map(|t| c + h * t).collect(), w.iter().map(|v| v * h).collect())
}

/// Least squares for a small dense system `min |A c - y|` via normal equations.
pub fn least_squares(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows[0].len();
    let mut ata = vec![vec![0.0; p]; p];
    let mut aty = vec![0.0; p];
    for (row, &yi) in rows.iter().zip(y) {
        for i in 0..p {
            aty[i] += row[i] * yi;
            for j in 0..p {
                ata[i][j] += row[i] * row[j];
            }
        }
    }
    solve_dense(ata, aty)
}

/// Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_poisson_radius_covers_the_tail() {
        for (mu, lt) in [(5.0, -20.0), (200.0, -240.0), (0.3, -50.0)] {
            let r = poisson_radius_log(mu, lt);
            assert!(poisson_sf(r, mu).ln() <= lt + 1e-9, "mu={mu}");
            assert!((ln_poisson_pmf(7, mu).exp() - poisson_pmf(7, mu)).abs() < 1e-15);
        }
    }

    fn ln_fact(n: u64) -> f64 {
        (2..=n).map(|k| (k as f64).ln()).sum()
    }

    #[test]
    fn binomial_matches_direct_formula() {
        for &(k, n, p) in &[(3u64, 10u64, 0.5), (0, 7, 0.3), (7, 7, 0.3), (40, 100, 0.25), (1, 2, 0.5)] {
            let direct = (ln_fact(n) - ln_fact(k) - ln_fact(n - k)
                + k as f64 * f64::ln(p)
                + (n - k) as f64 * f64::ln(1.0 - p))
                .exp();
            assert!((binom_pmf(k, n, p) - direct).abs() <= 1e-13 * direct, "{k} {n} {p}");
        }
    }

    #[test]
    fn poisson_masses_sum_to_one() {
        for &mu in &[0.3, 5.0, 120.0] {
            let r = poisson_radius(mu, 1e-16);
            let s: f64 = (0..=r).map(|k| poisson_pmf(k, mu)).sum();
            assert!((s - 1.0).abs() < 1e-13, "mu={mu} sum={s}");
            assert!(poisson_sf(r, mu) <= 1e-16);
        }
        assert!((poisson_sf(0, 2.0) - (1.0 - (-2.0f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn bessel_row_is_a_probability_vector() {
        for &s in &[1e-3, 0.7, 25.0, 4000.0] {
            let r = chernoff_radius_1d(s, 1e-18) as usize;
            let row = scaled_bessel_row(s, r);
            let total = row[0] + 2.0 * row[1..].iter().sum::<f64>();
            assert!((total - 1.0).abs() < 1e-13, "s={s}");
        }
        // e^{-1} I_0(1) from the power series.
        let mut i0 = 0.0;
        let mut term = 1.0;
        for k in 0..30 {
            if k > 0 {
                term *= 0.25 / (k * k) as f64;
            }
            i0 += term;
        }
        let row = scaled_bessel_row(1.0, 3);
        assert!((row[0] - i0 * (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn hurwitz_zeta_known_values() {
        // zeta(2) = pi^2 / 6, zeta(2, 3) = zeta(2) - 1 - 1/4
        let z2 = PI * PI / 6.0;
        assert!((hurwitz_zeta(2.0, 1.0) - z2).abs() < 1e-14);
        assert!((hurwitz_zeta(2.0, 3.0) - (z2 - 1.25)).abs() < 1e-14);
        // zeta(3/2) = 2.612375348685488...
        assert!((hurwitz_zeta(1.5, 1.0) - 2.612_375_348_685_488).abs() < 1e-13);
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(7);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(12)).sum();
        assert!((s - 2.0 / 13.0).abs() < 1e-15);
        let (x, w) = gauss_legendre_on(20, 0.0, PI);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.sin()).sum();
        assert!((s - 2.0).abs() < 1e-14);
    }
}
