//! Euler simulation of continuous semimartingales `P = P(0) + A + M` with
//! the drift `A` and the martingale part `M` tracked separately.
//!
//! Coefficients are deterministic functions of time evaluated at the left
//! end of each step, so every integrand built from them is predictable.
//! Path `i` draws its Gaussian increments from ChaCha stream `i` under the
//! ensemble seed: a path does not depend on how many paths are generated
//! alongside it, nor on the thread that generates it.

use std::ops::Range;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::Mat;
use crate::scalar::Real;
use crate::stoch_kernel::{IncrementFamily, StochasticAggregateKernel};

type TimeFn<T, R> = Arc<dyn Fn(T) -> R + Send + Sync>;

/// How the drift `A` is specified.
#[derive(Clone)]
pub enum Drift<T> {
    /// Rate `a(t)`; `ΔA_k = a(t_k) Δt_k`.
    Rate(TimeFn<T, Vec<T>>),
    /// Deterministic cumulative drift `A(t)`; `ΔA_k = A(t_{k+1}) − A(t_k)`.
    /// Needed when the rate blows up at a grid node, e.g. `A(t) = 3 t^{1/3}`.
    Cumulative(TimeFn<T, Vec<T>>),
}

/// Asset labels, drift, driver loadings and initial prices.
#[derive(Clone)]
pub struct SemimartingaleModel<T> {
    labels: Vec<String>,
    drivers: usize,
    drift: Drift<T>,
    loadings: TimeFn<T, Mat<T>>,
    initial: Vec<T>,
}

impl<T: Real> std::fmt::Debug for SemimartingaleModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SemimartingaleModel")
            .field("labels", &self.labels)
            .field("drivers", &self.drivers)
            .field("initial", &self.initial)
            .finish_non_exhaustive()
    }
}

impl<T: Real> SemimartingaleModel<T> {
    /// Time-homogeneous model with constant drift rate and loadings
    /// (`sigma` is assets × drivers).
    pub fn constant(labels: Vec<String>, initial: Vec<T>, drift_rate: Vec<T>, sigma: Mat<T>) -> Result<Self> {
        let d = labels.len();
        if initial.len() != d || drift_rate.len() != d || sigma.rows() != d {
            return Err(Error::Dimension("model fields are not conformable with the labels".into()));
        }
        if !sigma.is_finite() || drift_rate.iter().chain(&initial).any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("model fields must be finite".into()));
        }
        let drivers = sigma.cols();
        Ok(Self {
            labels,
            drivers,
            drift: Drift::Rate(Arc::new(move |_| drift_rate.clone())),
            loadings: Arc::new(move |_| sigma.clone()),
            initial,
        })
    }

    /// General model from time functions. Shapes are checked on use.
    pub fn new(
        labels: Vec<String>,
        initial: Vec<T>,
        drivers: usize,
        drift: Drift<T>,
        loadings: impl Fn(T) -> Mat<T> + Send + Sync + 'static,
    ) -> Result<Self> {
        if initial.len() != labels.len() {
            return Err(Error::Dimension("initial prices differ from label count".into()));
        }
        Ok(Self { labels, drivers, drift, loadings: Arc::new(loadings), initial })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn drivers(&self) -> usize {
        self.drivers
    }

    pub fn initial(&self) -> &[T] {
        &self.initial
    }

    /// Loading matrix at `t`.
    pub fn loadings_at(&self, t: T) -> Mat<T> {
        (self.loadings)(t)
    }

    /// `ΔA_k` on `grid`.
    pub fn drift_increments(&self, grid: &TimeGrid<T>) -> Result<Vec<Vec<T>>> {
        let inc: Vec<Vec<T>> = match &self.drift {
            Drift::Rate(a) => (0..grid.steps())
                .map(|k| a(grid.times()[k]).into_iter().map(|x| x * grid.dt(k)).collect())
                .collect(),
            Drift::Cumulative(a) => {
                let vals: Vec<Vec<T>> = grid.times().iter().map(|&t| a(t)).collect();
                vals.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(&b, &c)| b - c).collect()).collect()
            }
        };
        if inc.iter().any(|d| d.len() != self.dim()) {
            return Err(Error::Dimension("drift width differs from label count".into()));
        }
        if inc.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("drift increments must be finite on this grid".into()));
        }
        Ok(inc)
    }

    /// The drift as an increment family.
    pub fn drift_family(&self, grid: &TimeGrid<T>) -> Result<IncrementFamily<T>> {
        IncrementFamily::new(self.labels.clone(), self.drift_increments(grid)?)
    }

    /// Left-endpoint loading matrices on `grid`.
    pub fn loading_matrices(&self, grid: &TimeGrid<T>) -> Result<Vec<Mat<T>>> {
        let mats: Vec<Mat<T>> = (0..grid.steps()).map(|k| self.loadings_at(grid.times()[k])).collect();
        if mats.iter().any(|m| m.rows() != self.dim() || m.cols() != self.drivers) {
            return Err(Error::Dimension("loading matrix shape differs from assets × drivers".into()));
        }
        if mats.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("loadings must be finite on this grid".into()));
        }
        Ok(mats)
    }

    /// Model kernel `ΔC_k = σ(t_k) σ(t_k)ᵀ Δt_k`.
    pub fn model_kernel(&self, grid: &TimeGrid<T>) -> Result<StochasticAggregateKernel<T>> {
        StochasticAggregateKernel::from_model(grid.clone(), self.labels.clone(), &self.loading_matrices(grid)?)
    }
}

/// One simulated path; rows are grid points (or steps for `dw`), columns
/// assets (or drivers).
#[derive(Debug, Clone, PartialEq)]
pub struct Path<T> {
    pub p: Vec<Vec<T>>,
    pub a: Vec<Vec<T>>,
    pub m: Vec<Vec<T>>,
    /// Driver increments `ΔW_k`; empty for ensembles assembled from
    /// external data.
    pub dw: Vec<Vec<T>>,
}

impl<T: Real> Path<T> {
    fn diffs(rows: &[Vec<T>]) -> Vec<Vec<T>> {
        rows.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(&b, &a)| b - a).collect()).collect()
    }

    /// `ΔP_k`.
    pub fn price_increments(&self) -> Vec<Vec<T>> {
        Self::diffs(&self.p)
    }

    /// `ΔA_k`.
    pub fn drift_increments(&self) -> Vec<Vec<T>> {
        Self::diffs(&self.a)
    }

    /// `ΔM_k`.
    pub fn martingale_increments(&self) -> Vec<Vec<T>> {
        Self::diffs(&self.m)
    }

    pub fn terminal(&self) -> &[T] {
        &self.p[self.p.len() - 1]
    }
}

/// Paths sharing a grid, labels and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble<T> {
    grid: TimeGrid<T>,
    labels: Vec<String>,
    seed: u64,
    /// Stream index of `paths[0]`.
    first_index: usize,
    paths: Vec<Path<T>>,
}

impl<T: Real> PathEnsemble<T> {
    /// Wraps externally produced paths; checks shapes and `P = P(0) + A + M`.
    pub fn from_paths(grid: TimeGrid<T>, labels: Vec<String>, seed: u64, paths: Vec<Path<T>>) -> Result<Self> {
        let d = labels.len();
        for (i, path) in paths.iter().enumerate() {
            let n = grid.steps() + 1;
            if path.p.len() != n || path.a.len() != n || path.m.len() != n {
                return Err(Error::Dimension(format!("path {i} length differs from grid")));
            }
            if path.p.iter().chain(&path.a).chain(&path.m).any(|r| r.len() != d) {
                return Err(Error::Dimension(format!("path {i} width differs from label count")));
            }
            for k in 0..n {
                for j in 0..d {
                    let resid = path.p[k][j] - path.p[0][j] - path.a[k][j] - path.m[k][j];
                    let scale = T::one() + path.p[k][j].abs() + path.a[k][j].abs() + path.m[k][j].abs();
                    if resid.abs() > T::lit(1e-9) * scale {
                        return Err(Error::InvalidInput(format!("path {i} violates P = P(0) + A + M at step {k}")));
                    }
                }
            }
        }
        Ok(Self { grid, labels, seed, first_index: 0, paths })
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn first_index(&self) -> usize {
        self.first_index
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    pub fn paths(&self) -> &[Path<T>] {
        &self.paths
    }

    pub fn path(&self, i: usize) -> &Path<T> {
        &self.paths[i]
    }

    pub fn initial(&self) -> &[T] {
        self.paths.first().map(|p| p.p[0].as_slice()).unwrap_or(&[])
    }

    /// Drift of path `i` as an increment family.
    pub fn drift_family(&self, i: usize) -> IncrementFamily<T> {
        IncrementFamily::new(self.labels.clone(), self.paths[i].drift_increments())
            .expect("ensemble increments are finite and conformable")
    }
}

/// Driver increments `ΔW_k ~ N(0, Δt_k I)` for path `index`. Each path owns
/// the ChaCha stream `index` of `seed`, so draws do not depend on which
/// thread simulates the path.
pub(crate) fn brownian_increments<T: Real>(grid: &TimeGrid<T>, drivers: usize, seed: u64, index: usize) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    (0..grid.steps())
        .map(|k| {
            let sqrt_dt = grid.dt(k).sqrt();
            (0..drivers)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    T::lit(z) * sqrt_dt
                })
                .collect()
        })
        .collect()
}

fn simulate_path<T: Real>(
    grid: &TimeGrid<T>,
    initial: &[T],
    drift: &[Vec<T>],
    loadings: &[Mat<T>],
    drivers: usize,
    seed: u64,
    index: usize,
) -> Path<T> {
    let d = initial.len();
    let steps = grid.steps();
    let dws = brownian_increments(grid, drivers, seed, index);
    let mut p = Vec::with_capacity(steps + 1);
    let mut a = Vec::with_capacity(steps + 1);
    let mut m = Vec::with_capacity(steps + 1);
    p.push(initial.to_vec());
    a.push(vec![T::zero(); d]);
    m.push(vec![T::zero(); d]);
    for (k, dw) in dws.iter().enumerate() {
        let dm = loadings[k].mul_vec(dw);
        let next_a: Vec<T> = a[k].iter().zip(&drift[k]).map(|(&x, &y)| x + y).collect();
        let next_m: Vec<T> = m[k].iter().zip(&dm).map(|(&x, &y)| x + y).collect();
        let next_p: Vec<T> = (0..d).map(|j| p[k][j] + drift[k][j] + dm[j]).collect();
        a.push(next_a);
        m.push(next_m);
        p.push(next_p);
    }
    Path { p, a, m, dw: dws }
}

/// Paths with stream indices in `range`; the concatenation of consecutive
/// ranges equals the ensemble simulated in one go.
pub fn simulate_range<T: Real>(
    model: &SemimartingaleModel<T>,
    grid: &TimeGrid<T>,
    seed: u64,
    range: Range<usize>,
) -> Result<PathEnsemble<T>> {
    let drift = model.drift_increments(grid)?;
    let loadings = model.loading_matrices(grid)?;
    let first_index = range.start;
    let paths = range
        .into_par_iter()
        .map(|i| simulate_path(grid, model.initial(), &drift, &loadings, model.drivers(), seed, i))
        .collect();
    Ok(PathEnsemble { grid: grid.clone(), labels: model.labels().to_vec(), seed, first_index, paths })
}

/// `n` paths of `model` on `grid`.
pub fn simulate_ensemble<T: Real>(
    model: &SemimartingaleModel<T>,
    grid: &TimeGrid<T>,
    n: usize,
    seed: u64,
) -> Result<PathEnsemble<T>> {
    if n == 0 {
        return Err(Error::InvalidInput("ensemble needs at least one path".into()));
    }
    simulate_range(model, grid, seed, 0..n)
}

/// Simulates `n` paths in consecutive chunks and hands each chunk to `f`,
/// keeping memory bounded for large ensembles. Results come back in chunk
/// order.
pub fn simulate_chunked<T: Real, R>(
    model: &SemimartingaleModel<T>,
    grid: &TimeGrid<T>,
    n: usize,
    seed: u64,
    chunk: usize,
    mut f: impl FnMut(&PathEnsemble<T>) -> Result<R>,
) -> Result<Vec<R>> {
    let chunk = chunk.max(1);
    let mut out = Vec::with_capacity(n.div_ceil(chunk));
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        out.push(f(&simulate_range(model, grid, seed, start..end)?)?);
        start = end;
    }
    Ok(out)
}

/// Per-path realized covariation kernels `ΔC_k = ΔP_k ΔP_kᵀ`.
///
/// Drift enters the realized kernel through `O(Δt)` cross terms, so
/// `[P_i, P_j]` differs from `[M_i, M_j]` by a bias vanishing under
/// refinement.
pub fn realized_covariation<T: Real>(ensemble: &PathEnsemble<T>) -> Result<Vec<StochasticAggregateKernel<T>>> {
    ensemble
        .paths()
        .iter()
        .map(|p| StochasticAggregateKernel::from_realized(ensemble.grid().clone(), ensemble.labels().to_vec(), &p.price_increments()))
        .collect()
}

/// Splits every grid step into `factor` equal sub-steps.
pub fn refine_grid<T: Real>(grid: &TimeGrid<T>, factor: usize) -> Result<TimeGrid<T>> {
    grid.refine(factor)
}
