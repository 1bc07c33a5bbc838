//! Monte Carlo summary statistics.
//!
//! Sums run sequentially over samples in path order, so an estimate depends
//! only on the samples and never on how they were produced.

use crate::scalar::Real;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate<T> {
    pub mean: T,
    pub std_error: T,
    pub samples: usize,
}

impl<T: Real> McEstimate<T> {
    pub fn from_samples(xs: &[T]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: T::nan(), std_error: T::nan(), samples: 0 };
        }
        let nn = T::from_count(n);
        let mean = xs.iter().copied().sum::<T>() / nn;
        if n == 1 {
            return Self { mean, std_error: T::zero(), samples: 1 };
        }
        let ss = xs.iter().fold(T::zero(), |acc, &x| acc + (x - mean) * (x - mean));
        let var = ss / T::from_count(n - 1);
        Self { mean, std_error: (var / nn).sqrt(), samples: n }
    }

    /// `(mean − target) / SE`; zero when both the deviation and the SE vanish.
    pub fn z_score(&self, target: T) -> T {
        let d = self.mean - target;
        if self.std_error > T::zero() {
            d / self.std_error
        } else if d == T::zero() {
            T::zero()
        } else {
            d.signum() * T::infinity()
        }
    }

    /// `|mean − target| ≤ k · SE`.
    pub fn within(&self, target: T, k: T) -> bool {
        (self.mean - target).abs() <= k * self.std_error
    }
}

/// Running sums merged in a fixed order, used by the chunked estimators.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Moments {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    pub fn estimate<T: Real>(&self, shift: f64) -> McEstimate<T> {
        // `shift` is subtracted before squaring in callers' samples; here it
        // only re-centres the reported mean.
        let n = self.n as f64;
        if self.n == 0 {
            return McEstimate { mean: T::nan(), std_error: T::nan(), samples: 0 };
        }
        let mean = self.sum / n;
        let var = if self.n > 1 { ((self.sum_sq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
        McEstimate { mean: T::lit(mean + shift), std_error: T::lit((var / n).sqrt()), samples: self.n }
    }
}
