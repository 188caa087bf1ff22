//! Simple-random-walk kernels on `Z^d`, characteristic functions and Green functions.

pub(crate) mod continuous;
mod fourier;
pub(crate) mod green;
mod table;
pub(crate) mod walk;

pub use continuous::{
    ct_kernel_point, ct_kernel_product, entropy_sum, kernel_bound_report, BoundRegime, BoundRow,
    CtRow, EntropySum, KernelBoundReport,
};
pub use fourier::torus_average;
pub use green::{
    green_ct, green_pair, green_pair_with, pair_green_value, tilted_greens, Green, GreenMethod,
    GreenOptions, GreenValues, RouteValue,
};
pub use table::{KernelTable, DEFAULT_TABLE_BUDGET};
pub use walk::{max_step_prob, return_probabilities, walk_prob_all_n};

use num_complex::Complex64;

/// Dimension and L1 box radius of a lattice region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeConfig {
    pub d: usize,
    pub radius: usize,
}

impl LatticeConfig {
    pub fn new(d: usize, radius: usize) -> crate::Result<Self> {
        if !(1..=6).contains(&d) {
            return Err(crate::error::invalid(format!("dimension d={d} outside 1..=6")));
        }
        Ok(Self { d, radius })
    }
}

/// Sorted absolute coordinates: the representative of `x` under signed permutations.
pub fn canonical(x: &[i32]) -> Vec<u32> {
    let mut c: Vec<u32> = x.iter().map(|v| v.unsigned_abs()).collect();
    c.sort_unstable_by(|a, b| b.cmp(a));
    c
}

pub fn l1_norm(x: &[i32]) -> u64 {
    x.iter().map(|v| v.unsigned_abs() as u64).sum()
}

/// Values of the three characteristic functions at one wavevector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharTriple {
    /// Characteristic function of one step of the walk.
    pub phi: f64,
    /// Characteristic function of the two-step tilted increment.
    pub psi: f64,
    /// Characteristic function of the second step given a first step along `e_1`.
    pub varphi: Complex64,
}

pub fn char_triple(k: &[f64], h: f64, d: usize) -> CharTriple {
    assert_eq!(k.len(), d, "wavevector length must equal d");
    let df = d as f64;
    let phi = k.iter().map(|v| v.cos()).sum::<f64>() / df;
    let s2: f64 = k.iter().map(|v| v.sin().powi(2)).sum();
    let psi = phi * phi - h / (df * df) * s2;
    let varphi = Complex64::new(phi, h / df * k[0].sin());
    CharTriple { phi, psi, varphi }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn char_triple_special_points() {
        let t = char_triple(&[0.0; 4], 0.1, 4);
        assert_eq!((t.phi, t.psi, t.varphi.re, t.varphi.im), (1.0, 1.0, 1.0, 0.0));
        let t = char_triple(&[PI; 3], 0.1, 3);
        assert!((t.phi + 1.0).abs() < 1e-15);
        assert!((t.psi - 1.0).abs() < 1e-15);
        assert!((t.varphi.re + 1.0).abs() < 1e-15 && t.varphi.im.abs() < 1e-15);
        let k = [0.3, -1.2, 2.5];
        let t = char_triple(&k, 0.0, 3);
        assert_eq!(t.psi, t.phi * t.phi);
        assert_eq!(t.varphi.re, t.phi);
        assert_eq!(t.varphi.im, 0.0);
    }

    #[test]
    fn psi_never_exceeds_phi_squared() {
        for i in 0..200 {
            let k: Vec<f64> = (0..4).map(|j| ((i * 7 + j * 13) as f64 * 0.37).sin() * PI).collect();
            let t = char_triple(&k, 0.12, 4);
            assert!(t.psi <= t.phi * t.phi);
        }
    }

    #[test]
    fn canonical_form() {
        assert_eq!(canonical(&[-2, 5, 0, -5]), vec![5, 5, 2, 0]);
        assert!(LatticeConfig::new(7, 3).is_err());
    }
}
