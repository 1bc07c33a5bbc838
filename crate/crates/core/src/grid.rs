use crate::error::{Error, Result};
use crate::scalar::Real;

/// Strictly increasing time points starting at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid<T> {
    times: Vec<T>,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(times: Vec<T>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidInput("time grid needs at least two points".into()));
        }
        if times[0] != T::zero() {
            return Err(Error::InvalidInput("time grid must start at 0".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidInput("time grid must be finite and strictly increasing".into()));
        }
        Ok(Self { times })
    }

    /// `steps` equal steps on `[0, horizon]`.
    pub fn uniform(horizon: T, steps: usize) -> Result<Self> {
        if steps == 0 || !(horizon > T::zero()) {
            return Err(Error::InvalidInput("uniform grid needs positive horizon and steps".into()));
        }
        let n = T::from_count(steps);
        let mut times: Vec<T> = (0..=steps).map(|k| horizon * T::from_count(k) / n).collect();
        times[steps] = horizon;
        Self::new(times)
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    /// Number of steps (one less than the number of points).
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    #[inline]
    pub fn dt(&self, k: usize) -> T {
        self.times[k + 1] - self.times[k]
    }

    pub fn horizon(&self) -> T {
        self.times[self.times.len() - 1]
    }

    /// Splits every step into `factor` equal sub-steps; old nodes are kept
    /// exactly.
    pub fn refine(&self, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidInput("refinement factor must be positive".into()));
        }
        let f = T::from_count(factor);
        let mut times = Vec::with_capacity(self.steps() * factor + 1);
        for w in self.times.windows(2) {
            for j in 0..factor {
                times.push(if j == 0 { w[0] } else { w[0] + (w[1] - w[0]) * T::from_count(j) / f });
            }
        }
        times.push(self.horizon());
        Self::new(times)
    }

    /// Index of the last grid point `≤ t`.
    pub fn last_index_at_or_before(&self, t: T) -> usize {
        match self.times.iter().rposition(|&s| s <= t) {
            Some(i) => i,
            None => 0,
        }
    }
}
