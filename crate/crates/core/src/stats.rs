use serde::{Deserialize, Serialize};

/// Monte Carlo estimate of a mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub replicas: usize,
    pub seed: u64,
}

impl McEstimate {
    /// Sample mean and standard error. Summation order is fixed by the slice.
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let n = samples.len();
        if n == 0 {
            return Self { mean: f64::NAN, stderr: f64::NAN, replicas: 0, seed };
        }
        let mean = pairwise_sum(samples) / n as f64;
        let dev: Vec<f64> = samples.iter().map(|x| (x - mean) * (x - mean)).collect();
        let var = if n > 1 { pairwise_sum(&dev) / (n - 1) as f64 } else { 0.0 };
        Self { mean, stderr: (var / n as f64).sqrt(), replicas: n, seed }
    }

    /// Is `value` within `k` standard errors (plus `slack`) of the mean?
    pub fn agrees_with(&self, value: f64, k: f64, slack: f64) -> bool {
        (self.mean - value).abs() <= k * self.stderr + slack
    }
}

/// Recursive pairwise summation; the result depends only on the input order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_stderr() {
        let e = McEstimate::from_samples(&[1.0, 2.0, 3.0, 4.0], 0);
        assert_eq!(e.mean, 2.5);
        assert!((e.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert!(e.agrees_with(2.5 + 2.0 * e.stderr, 3.0, 0.0));
    }

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let xs: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 499500.0);
    }
}
