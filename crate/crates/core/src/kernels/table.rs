//! Exact n-step kernels stored on the fundamental domain of the signed-permutation group.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};
use std::io::{Read, Write};
use std::path::Path;

use super::LatticeConfig;
use crate::error::{invalid, PinError};
use crate::Result;

/// Default cap on stored probabilities (8 bytes each).
pub const DEFAULT_TABLE_BUDGET: usize = 16_000_000;

const MAGIC: &[u8; 5] = b"PINK1";
const COORD_BITS: u32 = 10;
const MAX_RADIUS: usize = (1 << COORD_BITS) - 1;

#[derive(Default)]
struct KeyHasher(u64);

impl Hasher for KeyHasher {
    fn finish(&self) -> u64 {
        self.0
    }
    fn write(&mut self, _: &[u8]) {
        unreachable!("only u64 keys are hashed")
    }
    fn write_u64(&mut self, k: u64) {
        self.0 = (k ^ (k >> 29)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    }
}

type KeyMap = HashMap<u64, u32, BuildHasherDefault<KeyHasher>>;

/// One parity class of canonical points, sorted by (L1 norm, coordinates).
#[derive(Debug, Clone, Default)]
struct ParityClass {
    coords: Vec<u16>,
    sums: Vec<u32>,
    /// `upto[s]` = number of points with norm <= s.
    upto: Vec<usize>,
    mult: Vec<f64>,
}

/// `p_n(x)` for `n <= n_max`, exact up to rounding.
#[derive(Debug, Clone)]
pub struct KernelTable {
    config: LatticeConfig,
    n_max: usize,
    classes: [ParityClass; 2],
    index: KeyMap,
    values: Vec<Vec<f64>>,
    underflow: bool,
}

fn pack(c: &[u32]) -> u64 {
    c.iter().fold(0u64, |acc, &v| (acc << COORD_BITS) | v as u64)
}

/// Number of distinct images of a canonical point under signed coordinate permutations.
fn orbit_size(c: &[u16]) -> f64 {
    let d = c.len();
    let mut size: f64 = (1..=d).map(|k| k as f64).product();
    let mut i = 0;
    while i < d {
        let mut j = i;
        while j < d && c[j] == c[i] {
            j += 1;
        }
        size /= (1..=(j - i)).map(|k| k as f64).product::<f64>();
        i = j;
    }
    let nonzero = c.iter().filter(|&&v| v != 0).count();
    size * 2f64.powi(nonzero as i32)
}

fn enumerate_canonical(d: usize, radius: usize) -> Vec<Vec<u16>> {
    fn rec(d: usize, left: usize, cap: usize, cur: &mut Vec<u16>, out: &mut Vec<Vec<u16>>) {
        if cur.len() == d {
            out.push(cur.clone());
            return;
        }
        for v in 0..=cap.min(left) {
            cur.push(v as u16);
            rec(d, left - v, v, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, radius, radius, &mut Vec::with_capacity(d), &mut out);
    out.sort_by(|a, b| {
        let sa: u32 = a.iter().map(|&v| v as u32).sum();
        let sb: u32 = b.iter().map(|&v| v as u32).sum();
        sa.cmp(&sb).then_with(|| a.cmp(b))
    });
    out
}

impl KernelTable {
    /// Build the table with the default memory budget.
    pub fn build(d: usize, n_max: usize) -> Result<Self> {
        Self::build_with_budget(d, n_max, DEFAULT_TABLE_BUDGET)
    }

    pub fn build_with_budget(d: usize, n_max: usize, budget: usize) -> Result<Self> {
        let config = LatticeConfig::new(d, n_max)?;
        if n_max > MAX_RADIUS {
            return Err(PinError::BudgetExceeded { d, n_max, entries: usize::MAX, limit: budget });
        }
        let (classes, index) = Self::layout(d, n_max, budget)?;
        let neighbors = Self::neighbors(d, &classes, &index);
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(n_max + 1);
        values.push(vec![1.0]);
        let inv = 1.0 / (2 * d) as f64;
        let mut underflow = false;
        for n in 1..=n_max {
            let par = n % 2;
            let len = classes[par].upto[n];
            let prev = &values[n - 1];
            let mut cur = vec![0.0; len];
            for (pos, slot) in cur.iter_mut().enumerate() {
                let mut acc = 0.0;
                for &nb in &neighbors[par][pos * 2 * d..(pos + 1) * 2 * d] {
                    if (nb as usize) < prev.len() {
                        acc += prev[nb as usize];
                    }
                }
                *slot = acc * inv;
                if *slot == 0.0 {
                    underflow = true;
                }
            }
            values.push(cur);
        }
        Ok(Self { config, n_max, classes, index, values, underflow })
    }

    fn layout(d: usize, n_max: usize, budget: usize) -> Result<([ParityClass; 2], KeyMap)> {
        let pts = enumerate_canonical(d, n_max);
        let mut classes = [ParityClass::default(), ParityClass::default()];
        let mut index = KeyMap::default();
        for p in &pts {
            let s: u32 = p.iter().map(|&v| v as u32).sum();
            let c = &mut classes[(s % 2) as usize];
            let key = pack(&p.iter().map(|&v| v as u32).collect::<Vec<_>>());
            index.insert(key, c.sums.len() as u32);
            c.coords.extend_from_slice(p);
            c.sums.push(s);
            c.mult.push(orbit_size(p));
        }
        for c in classes.iter_mut() {
            c.upto = vec![0; n_max + 2];
            let mut k = 0;
            for s in 0..=n_max + 1 {
                while k < c.sums.len() && c.sums[k] as usize <= s {
                    k += 1;
                }
                c.upto[s] = k;
            }
        }
        let entries: usize = (0..=n_max).map(|n| classes[n % 2].upto[n]).sum();
        if entries > budget {
            return Err(PinError::BudgetExceeded { d, n_max, entries, limit: budget });
        }
        Ok((classes, index))
    }

    /// For every point, the positions of its `2d` neighbours in the other class
    /// (`u32::MAX` when outside the radius).
    fn neighbors(d: usize, classes: &[ParityClass; 2], index: &KeyMap) -> [Vec<u32>; 2] {
        let mut out = [Vec::new(), Vec::new()];
        let mut buf = vec![0i32; d];
        for par in 0..2 {
            let c = &classes[par];
            let n_pts = c.sums.len();
            let mut nb = Vec::with_capacity(n_pts * 2 * d);
            for p in 0..n_pts {
                let base = &c.coords[p * d..(p + 1) * d];
                for i in 0..d {
                    for delta in [1i32, -1] {
                        for (b, &v) in buf.iter_mut().zip(base) {
                            *b = v as i32;
                        }
                        buf[i] += delta;
                        let canon = super::canonical(&buf);
                        let pos = index.get(&pack(&canon)).copied().unwrap_or(u32::MAX);
                        nb.push(pos);
                    }
                }
            }
            out[par] = nb;
        }
        out
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn config(&self) -> LatticeConfig {
        self.config
    }

    /// True when some stored probability underflowed to zero.
    pub fn underflow(&self) -> bool {
        self.underflow
    }

    /// Number of stored probabilities.
    pub fn stored_entries(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    /// `p_n(x)`. Panics if `n > n_max`.
    pub fn prob(&self, n: usize, x: &[i32]) -> f64 {
        assert!(n <= self.n_max, "step count {n} exceeds table n_max {}", self.n_max);
        let d = self.config.d;
        debug_assert_eq!(x.len(), d);
        let mut c = [0u32; 6];
        let mut s = 0u64;
        for (slot, &v) in c.iter_mut().zip(x) {
            *slot = v.unsigned_abs();
            s += *slot as u64;
        }
        if s > n as u64 || (s + n as u64) % 2 == 1 {
            return 0.0;
        }
        let c = &mut c[..d];
        c.sort_unstable_by(|a, b| b.cmp(a));
        match self.index.get(&pack(c)) {
            Some(&pos) => self.values[n].get(pos as usize).copied().unwrap_or(0.0),
            None => 0.0,
        }
    }

    /// Checked lookup for callers that may exceed the table.
    pub fn try_prob(&self, n: usize, x: &[i32]) -> Result<f64> {
        if n > self.n_max {
            return Err(invalid(format!("step count {n} exceeds table n_max {}", self.n_max)));
        }
        Ok(self.prob(n, x))
    }

    /// `max_x p_n(x)`.
    pub fn max_prob(&self, n: usize) -> f64 {
        self.values[n].iter().copied().fold(0.0, f64::max)
    }

    /// Canonical points carrying mass at step `n`, with their orbit sizes and probabilities.
    pub fn support(&self, n: usize) -> impl Iterator<Item = (&[u16], f64, f64)> + '_ {
        let d = self.config.d;
        let c = &self.classes[n % 2];
        self.values[n]
            .iter()
            .enumerate()
            .map(move |(pos, &v)| (&c.coords[pos * d..(pos + 1) * d], c.mult[pos], v))
    }

    /// `P(X_n = Y_n) = sum_x p_n(x)^2` for two independent walks.
    pub fn pair_return_mass(&self, n: usize) -> Result<f64> {
        if n > self.n_max {
            return Err(invalid(format!("step count {n} exceeds table n_max {}", self.n_max)));
        }
        Ok(self.support(n).map(|(_, m, v)| m * v * v).sum())
    }

    /// Total mass at step `n` (should be one).
    pub fn total_mass(&self, n: usize) -> f64 {
        self.support(n).map(|(_, m, v)| m * v).sum()
    }

    /// Serialise to the cache format: `PINK1`, d, n_max, radius (u32 LE each), parity
    /// flag (u8), then for each n a u64 LE count followed by that many f64 LE values.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + 8 * self.stored_entries());
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&(self.config.d as u32).to_le_bytes());
        buf.extend_from_slice(&(self.n_max as u32).to_le_bytes());
        buf.extend_from_slice(&(self.config.radius as u32).to_le_bytes());
        buf.push(1u8);
        for run in &self.values {
            buf.extend_from_slice(&(run.len() as u64).to_le_bytes());
            for v in run {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let tmp = path.with_extension("tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&buf)?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Load a cache file, validating the header against the requested `(d, n_max)`.
    pub fn read_cache(path: &Path, d: usize, n_max: usize) -> Result<Self> {
        let bad = |reason: &str| PinError::Cache { path: path.display().to_string(), reason: reason.to_string() };
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 18 || &bytes[..5] != MAGIC {
            return Err(bad("bad magic"));
        }
        let word = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (fd, fn_max, fradius, parity) = (word(5), word(9), word(13), bytes[17]);
        if fd != d || fn_max != n_max || fradius != n_max || parity != 1 {
            return Err(bad("header does not match requested table"));
        }
        let config = LatticeConfig::new(d, n_max)?;
        let (classes, index) = Self::layout(d, n_max, usize::MAX)?;
        let mut off = 18;
        let mut values = Vec::with_capacity(n_max + 1);
        let mut underflow = false;
        for n in 0..=n_max {
            if off + 8 > bytes.len() {
                return Err(bad("truncated"));
            }
            let len = u64::from_le_bytes(bytes[off..off + 8].try_into().unwrap()) as usize;
            off += 8;
            if len != classes[n % 2].upto[n] || off + 8 * len > bytes.len() {
                return Err(bad("run length mismatch"));
            }
            let run: Vec<f64> = bytes[off..off + 8 * len]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            underflow |= run.iter().any(|&v| v == 0.0);
            off += 8 * len;
            values.push(run);
        }
        if off != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { config, n_max, classes, index, values, underflow })
    }

    /// Load `(d, n_max)` from `dir` if a valid cache exists, otherwise build and store it.
    /// The flag reports a cache hit.
    pub fn load_or_build(dir: &Path, d: usize, n_max: usize) -> Result<(Self, bool)> {
        let path = dir.join(format!("kernel_d{d}_n{n_max}.pink"));
        if path.exists() {
            if let Ok(t) = Self::read_cache(&path, d, n_max) {
                return Ok((t, true));
            }
        }
        let t = Self::build(d, n_max)?;
        std::fs::create_dir_all(dir)?;
        t.write_cache(&path)?;
        Ok((t, false))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice_points(d: usize, r: i32) -> Vec<Vec<i32>> {
        let mut out = vec![vec![]];
        for _ in 0..d {
            let mut next = Vec::new();
            for p in &out {
                for v in -r..=r {
                    let mut q = p.clone();
                    q.push(v);
                    next.push(q);
                }
            }
            out = next;
        }
        out.retain(|p| p.iter().map(|v| v.abs()).sum::<i32>() <= r);
        out
    }

    #[test]
    fn small_exact_values() {
        let t1 = KernelTable::build(1, 4).unwrap();
        assert_eq!(t1.prob(0, &[0]), 1.0);
        assert_eq!(t1.prob(2, &[0]), 0.5);
        assert_eq!(t1.prob(3, &[0]), 0.0);
        let t2 = KernelTable::build(2, 3).unwrap();
        assert_eq!(t2.prob(1, &[1, 0]), 0.25);
        assert_eq!(t2.prob(1, &[0, -1]), 0.25);
        assert_eq!(t2.prob(2, &[1, 1]), 2.0 / 16.0);
    }

    #[test]
    fn pair_return_mass_small_cases() {
        let t1 = KernelTable::build(1, 2).unwrap();
        assert_eq!(t1.pair_return_mass(1).unwrap(), 0.5);
        let t4 = KernelTable::build(4, 2).unwrap();
        assert!((t4.pair_return_mass(1).unwrap() - 0.125).abs() < 1e-16);
        assert!(t4.pair_return_mass(3).is_err());
    }

    #[test]
    fn normalization_every_step() {
        for (d, n) in [(1, 40), (2, 30), (3, 20), (4, 14), (5, 10), (6, 8)] {
            let t = KernelTable::build(d, n).unwrap();
            for k in 0..=n {
                assert!((t.total_mass(k) - 1.0).abs() < 1e-12, "d={d} n={k}");
            }
        }
    }

    #[test]
    fn chapman_kolmogorov() {
        let t = KernelTable::build(3, 12).unwrap();
        for (m, n) in [(3, 5), (4, 4), (2, 7), (6, 6)] {
            let ys = lattice_points(3, m as i32);
            for x in [[0, 0, 0], [1, 2, 0], [3, -1, 2], [2, 2, 1]] {
                let direct = t.prob(m + n, &x);
                let conv: f64 = ys
                    .iter()
                    .map(|y| {
                        let diff: Vec<i32> = x.iter().zip(y).map(|(a, b)| a - b).collect();
                        t.prob(m, y) * t.prob(n, &diff)
                    })
                    .sum();
                assert!((direct - conv).abs() < 1e-10, "m={m} n={n} x={x:?}");
            }
        }
    }

    #[test]
    fn every_signed_permutation_gives_same_value() {
        let t = KernelTable::build(3, 9).unwrap();
        let x = [3, -1, 2];
        let v = t.prob(8, &x);
        assert!(v > 0.0);
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        for p in perms {
            for signs in 0..8 {
                let y: Vec<i32> = (0..3)
                    .map(|i| if signs >> i & 1 == 1 { -x[p[i]] } else { x[p[i]] })
                    .collect();
                assert_eq!(t.prob(8, &y).to_bits(), v.to_bits());
            }
        }
    }

    #[test]
    fn parity_entries_are_never_stored() {
        let t = KernelTable::build(2, 6).unwrap();
        for n in 0..=6 {
            for (c, _, _) in t.support(n) {
                let s: u32 = c.iter().map(|&v| v as u32).sum();
                assert_eq!((s as usize + n) % 2, 0);
                assert!(s as usize <= n);
            }
        }
        assert_eq!(t.prob(3, &[1, 1]), 0.0);
    }

    #[test]
    fn budget_error_names_parameters() {
        let err = KernelTable::build_with_budget(5, 40, 1000).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("d=5") && msg.contains("n_max=40"), "{msg}");
    }

    #[test]
    fn cache_roundtrip_and_header_check() {
        let dir = std::env::temp_dir().join(format!("pinlab-cache-test-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let (t, hit) = KernelTable::load_or_build(&dir, 3, 7).unwrap();
        assert!(!hit);
        let (u, hit) = KernelTable::load_or_build(&dir, 3, 7).unwrap();
        assert!(hit);
        for n in 0..=7 {
            assert_eq!(t.values[n], u.values[n]);
        }
        let path = dir.join("kernel_d3_n7.pink");
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(&bytes[..5], b"PINK1");
        assert!(KernelTable::read_cache(&path, 3, 8).is_err());
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(KernelTable::read_cache(&path, 3, 7).is_err());
        let (_, hit) = KernelTable::load_or_build(&dir, 3, 7).unwrap();
        assert!(!hit);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
