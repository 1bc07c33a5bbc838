//! Heath-Jarrow-Morton forward-rate markets on a maturity grid.
//!
//! Maturities `T_1 < … < T_M` split `(0, T_M]` into cells of width `ΔT_m`;
//! `f(t; T_m)` is the forward rate on cell `m`. A cell is dead once
//! `T_m ≤ t`, and dead cells carry no drift and no loading, so the
//! discounted bond `P(t; T_m) = exp(−Σ_{j≤m} f(t; T_j) ΔT_j)` freezes after
//! maturity. With `κ*` and `σ*` the cumulative sums of `κ ΔT` and `σ ΔT`
//! over cells,
//! `d log P = −κ* dt − σ*ᵀ dW`, so bonds drift at the rate
//! `α = −κ* + ½‖σ*‖²` and are martingales exactly when `α ≡ 0`.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::Mat;
use crate::rkhs::Tolerances;
use crate::scalar::{dot, Real};
use crate::simulation::{brownian_increments, Path, PathEnsemble};
use crate::stats::{McEstimate, Moments};
use crate::stoch_kernel::{IncrementFamily, StochasticAggregateKernel};

/// Forward-rate dynamics `df(t; T_m) = κ(t; T_m) dt + σ(t; T_m)ᵀ dW`
/// sampled at the left endpoint of every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct HjmModel<T> {
    grid: TimeGrid<T>,
    maturities: Vec<T>,
    widths: Vec<T>,
    initial: Vec<T>,
    drivers: usize,
    /// Per step: maturities × drivers.
    sigma: Vec<Mat<T>>,
    /// Per step: one drift per maturity.
    kappa: Vec<Vec<T>>,
}

impl<T: Real> HjmModel<T> {
    /// Checks shapes, finiteness and the support condition.
    pub fn new(grid: TimeGrid<T>, maturities: Vec<T>, initial: Vec<T>, sigma: Vec<Mat<T>>, kappa: Vec<Vec<T>>) -> Result<Self> {
        let m = maturities.len();
        if m == 0 || !(maturities[0] > T::zero()) || maturities.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("maturities must be positive and strictly increasing".into()));
        }
        if initial.len() != m || initial.iter().any(|f| !f.is_finite()) {
            return Err(Error::Dimension("initial curve needs one finite rate per maturity".into()));
        }
        let steps = grid.steps();
        if sigma.len() != steps || kappa.len() != steps {
            return Err(Error::Dimension("fields need one sample per time step".into()));
        }
        let drivers = sigma.first().map_or(0, |s| s.cols());
        for k in 0..steps {
            if sigma[k].rows() != m || sigma[k].cols() != drivers || kappa[k].len() != m {
                return Err(Error::Dimension(format!("field shape at step {k} differs from maturities × drivers")));
            }
            if !sigma[k].is_finite() || kappa[k].iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidInput(format!("field at step {k} is not finite")));
            }
            let t = grid.times()[k];
            for j in 0..m {
                if maturities[j] <= t && (kappa[k][j] != T::zero() || sigma[k].row(j).iter().any(|&s| s != T::zero())) {
                    return Err(Error::InvalidInput(format!("fields must vanish on matured cell {j} at step {k}")));
                }
            }
        }
        let mut widths = Vec::with_capacity(m);
        let mut prev = T::zero();
        for &t in &maturities {
            widths.push(t - prev);
            prev = t;
        }
        Ok(Self { grid, maturities, widths, initial, drivers, sigma, kappa })
    }

    /// Samples `σ(t, T)` and `κ(t, T)` on the grids, zeroing matured cells.
    pub fn from_fns(
        grid: TimeGrid<T>,
        maturities: Vec<T>,
        initial: Vec<T>,
        drivers: usize,
        sigma: impl Fn(T, T) -> Vec<T>,
        kappa: impl Fn(T, T) -> T,
    ) -> Result<Self> {
        let steps = grid.steps();
        let m = maturities.len();
        let mut sig = Vec::with_capacity(steps);
        let mut kap = Vec::with_capacity(steps);
        for k in 0..steps {
            let t = grid.times()[k];
            let mut s = Mat::zeros(m, drivers);
            let mut kk = vec![T::zero(); m];
            for (j, &tm) in maturities.iter().enumerate() {
                if tm > t {
                    let v = sigma(t, tm);
                    if v.len() != drivers {
                        return Err(Error::Dimension("loading function returns the wrong driver count".into()));
                    }
                    for (d, &x) in v.iter().enumerate() {
                        s[(j, d)] = x;
                    }
                    kk[j] = kappa(t, tm);
                }
            }
            sig.push(s);
            kap.push(kk);
        }
        Self::new(grid, maturities, initial, sig, kap)
    }

    /// Ho-Lee: one driver with constant loading `σ₀`, drift restricted.
    pub fn ho_lee(grid: TimeGrid<T>, maturities: Vec<T>, initial: Vec<T>, sigma0: T) -> Result<Self> {
        let model = Self::from_fns(grid, maturities, initial, 1, move |_, _| vec![sigma0], |_, _| T::zero())?;
        Ok(apply_drift_restriction(&model, RestrictionRule::default()))
    }

    pub fn grid(&self) -> &TimeGrid<T> {
        &self.grid
    }

    pub fn maturities(&self) -> &[T] {
        &self.maturities
    }

    /// Cell widths `ΔT_m`.
    pub fn widths(&self) -> &[T] {
        &self.widths
    }

    pub fn initial(&self) -> &[T] {
        &self.initial
    }

    pub fn drivers(&self) -> usize {
        self.drivers
    }

    pub fn sigma(&self) -> &[Mat<T>] {
        &self.sigma
    }

    pub fn kappa(&self) -> &[Vec<T>] {
        &self.kappa
    }

    pub fn is_alive(&self, k: usize, m: usize) -> bool {
        self.maturities[m] > self.grid.times()[k]
    }

    /// `P(0; T_m)`.
    pub fn initial_bonds(&self) -> Vec<T> {
        bond_prices(&self.initial, &self.widths)
    }

    /// Replaces the drift on live cells by `g(step, cell, κ)`.
    pub fn map_kappa(&self, g: impl Fn(usize, usize, T) -> T) -> Self {
        let mut out = self.clone();
        for k in 0..self.kappa.len() {
            for m in 0..self.maturities.len() {
                if self.is_alive(k, m) {
                    out.kappa[k][m] = g(k, m, self.kappa[k][m]);
                }
            }
        }
        out
    }

    /// Adds a constant to the drift of every live cell.
    pub fn with_kappa_bias(&self, bias: T) -> Self {
        self.map_kappa(|_, _, x| x + bias)
    }

    pub fn labels(&self) -> Vec<String> {
        self.maturities.iter().map(|t| format!("P({t})")).collect()
    }
}

fn bond_prices<T: Real>(f: &[T], widths: &[T]) -> Vec<T> {
    let mut acc = T::zero();
    f.iter()
        .zip(widths)
        .map(|(&r, &w)| {
            acc += r * w;
            (-acc).exp()
        })
        .collect()
}

/// `κ*` and `σ*` per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedFields<T> {
    /// Per step: `κ*(t_k; T_m) = Σ_{j≤m} κ(t_k; T_j) ΔT_j`.
    pub kappa_star: Vec<Vec<T>>,
    /// Per step: maturities × drivers, `σ*(t_k; T_m) = Σ_{j≤m} σ(t_k; T_j) ΔT_j`.
    pub sigma_star: Vec<Mat<T>>,
}

/// Cumulative maturity sums of the fields (left Riemann on cells, so
/// matured cells contribute nothing).
pub fn integrated_fields<T: Real>(model: &HjmModel<T>) -> IntegratedFields<T> {
    let (m, d) = (model.maturities.len(), model.drivers);
    let mut kappa_star = Vec::with_capacity(model.kappa.len());
    let mut sigma_star = Vec::with_capacity(model.sigma.len());
    for (kap, sig) in model.kappa.iter().zip(&model.sigma) {
        let mut ks = vec![T::zero(); m];
        let mut ss = Mat::zeros(m, d);
        let mut acc_k = T::zero();
        let mut acc_s = vec![T::zero(); d];
        for j in 0..m {
            acc_k += kap[j] * model.widths[j];
            ks[j] = acc_k;
            for (i, a) in acc_s.iter_mut().enumerate() {
                *a += sig[(j, i)] * model.widths[j];
                ss[(j, i)] = *a;
            }
        }
        kappa_star.push(ks);
        sigma_star.push(ss);
    }
    IntegratedFields { kappa_star, sigma_star }
}

/// How the drift restriction `κ = ⟨σ, σ*⟩` is discretised over a cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RestrictionRule {
    /// `κ_m = ⟨σ_m, σ*_m − ½ σ_m ΔT_m⟩`, the value of `⟨σ, σ*⟩` at the cell
    /// midpoint. Its cell sums telescope to `κ*_m = ½‖σ*_m‖²`, so bonds
    /// are exact discrete martingales.
    #[default]
    Midpoint,
    /// `κ_m = ⟨σ_m, σ*_m⟩` at the right end of the cell; leaves an
    /// `O(ΔT)` drift in every bond.
    Pointwise,
}

fn restricted_kappa<T: Real>(sig: &Mat<T>, star: &Mat<T>, widths: &[T], rule: RestrictionRule) -> Vec<T> {
    let half = T::lit(0.5);
    (0..sig.rows())
        .map(|j| {
            let s = sig.row(j);
            match rule {
                RestrictionRule::Pointwise => dot(s, star.row(j)),
                RestrictionRule::Midpoint => {
                    let mid: Vec<T> = star.row(j).iter().zip(s).map(|(&a, &b)| a - half * b * widths[j]).collect();
                    dot(s, &mid)
                }
            }
        })
        .collect()
}

/// Model with its drift replaced by the restricted one.
pub fn apply_drift_restriction<T: Real>(model: &HjmModel<T>, rule: RestrictionRule) -> HjmModel<T> {
    let fields = integrated_fields(model);
    let mut out = model.clone();
    for k in 0..model.sigma.len() {
        out.kappa[k] = restricted_kappa(&model.sigma[k], &fields.sigma_star[k], &model.widths, rule);
    }
    out
}

/// `max |κ − κ_restricted|` over steps and maturities.
pub fn drift_restriction_residual<T: Real>(model: &HjmModel<T>, rule: RestrictionRule) -> T {
    let fields = integrated_fields(model);
    model.kappa.iter().zip(&model.sigma).zip(&fields.sigma_star).fold(T::zero(), |acc, ((kap, sig), star)| {
        let target = restricted_kappa(sig, star, &model.widths, rule);
        kap.iter().zip(&target).fold(acc, |a, (&x, &y)| a.max((x - y).abs()))
    })
}

/// Bond drift rates `α(t_k; T_m) = −κ* + ½‖σ*‖²`. Values within a few ulps
/// of the two terms' size are set to zero, since they are cancellation
/// noise and would otherwise make a restricted model look non-viable.
pub fn bond_drift<T: Real>(model: &HjmModel<T>) -> Vec<Vec<T>> {
    let fields = integrated_fields(model);
    let half = T::lit(0.5);
    let noise = T::lit(64.0) * T::epsilon();
    fields
        .kappa_star
        .iter()
        .zip(&fields.sigma_star)
        .map(|(ks, ss)| {
            (0..ks.len())
                .map(|j| {
                    let q = half * dot(ss.row(j), ss.row(j));
                    let a = q - ks[j];
                    if a.abs() <= noise * (q.abs() + ks[j].abs()) {
                        T::zero()
                    } else {
                        a
                    }
                })
                .collect()
        })
        .collect()
}

/// The structural condition for bonds: the path
/// `t_m ↦ Σ_{k<m} ‖α(t_k; ·)‖²_{c(t_k)} Δt_k` with
/// `c(t; S, T) = ⟨σ*(t; S), σ*(t; T)⟩`, `+∞` once `α` leaves the range of
/// `c`.
pub fn viability_norm_hjm<T: Real>(model: &HjmModel<T>, tol: &Tolerances<T>) -> Result<Vec<T>> {
    let fields = integrated_fields(model);
    let sak = StochasticAggregateKernel::from_model(model.grid.clone(), model.labels(), &fields.sigma_star)?;
    let alpha = bond_drift(model);
    let inc: Vec<Vec<T>> = alpha.iter().enumerate().map(|(k, a)| a.iter().map(|&x| x * model.grid.dt(k)).collect()).collect();
    sak.stoch_norm_sq(&IncrementFamily::new(model.labels(), inc)?, tol)
}

/// One simulated forward surface.
#[derive(Debug, Clone, PartialEq)]
pub struct BondSurface<T> {
    /// Rows are grid points, columns maturities.
    pub f: Vec<Vec<T>>,
    pub p: Vec<Vec<T>>,
    /// `f(t_k; T_m)` on the first live cell (the last cell once all matured).
    pub short_rate: Vec<T>,
    pub dw: Vec<Vec<T>>,
}

fn simulate_one<T: Real>(model: &HjmModel<T>, seed: u64, index: usize) -> BondSurface<T> {
    let dw = brownian_increments(&model.grid, model.drivers, seed, index);
    let steps = model.grid.steps();
    let m = model.maturities.len();
    let mut f = Vec::with_capacity(steps + 1);
    f.push(model.initial.clone());
    for k in 0..steps {
        let dt = model.grid.dt(k);
        let shock = model.sigma[k].mul_vec(&dw[k]);
        let next: Vec<T> = (0..m).map(|j| f[k][j] + model.kappa[k][j] * dt + shock[j]).collect();
        f.push(next);
    }
    let p = f.iter().map(|row| bond_prices(row, &model.widths)).collect();
    let short_rate = (0..=steps)
        .map(|k| {
            let t = model.grid.times()[k];
            let j = model.maturities.iter().position(|&tm| tm > t).unwrap_or(m - 1);
            f[k][j]
        })
        .collect();
    BondSurface { f, p, short_rate, dw }
}

/// Surfaces with stream indices in `range`; as in the asset simulation each
/// path has its own random stream.
pub fn simulate_surface_range<T: Real>(model: &HjmModel<T>, seed: u64, range: Range<usize>) -> Vec<BondSurface<T>> {
    range.into_par_iter().map(|i| simulate_one(model, seed, i)).collect()
}

/// Euler simulation of `n` forward surfaces.
pub fn simulate_surface<T: Real>(model: &HjmModel<T>, n: usize, seed: u64) -> Result<Vec<BondSurface<T>>> {
    if n == 0 {
        return Err(Error::InvalidInput("ensemble needs at least one path".into()));
    }
    Ok(simulate_surface_range(model, seed, 0..n))
}

/// Bonds as assets: `ΔA_k = P_k (e^{α_k Δt_k} − 1)` is the conditional
/// mean of `ΔP_k`, and `M = P − P(0) − A`.
pub fn bond_ensemble<T: Real>(model: &HjmModel<T>, surfaces: &[BondSurface<T>], seed: u64) -> Result<PathEnsemble<T>> {
    let alpha = bond_drift(model);
    let paths = surfaces
        .iter()
        .map(|s| {
            let m = model.maturities.len();
            let mut a = vec![vec![T::zero(); m]];
            for k in 0..model.grid.steps() {
                let dt = model.grid.dt(k);
                let next: Vec<T> = (0..m).map(|j| a[k][j] + s.p[k][j] * ((alpha[k][j] * dt).exp() - T::one())).collect();
                a.push(next);
            }
            let mart = s.p.iter().zip(&a).map(|(p, a)| (0..m).map(|j| p[j] - s.p[0][j] - a[j]).collect()).collect();
            Path { p: s.p.clone(), a, m: mart, dw: s.dw.clone() }
        })
        .collect();
    PathEnsemble::from_paths(model.grid.clone(), model.labels(), seed, paths)
}

/// Per-path model kernels of the bonds, `ΔC_k = P_k P_kᵀ ∘ σ*σ*ᵀ Δt_k`.
pub fn bond_model_kernels<T: Real>(model: &HjmModel<T>, ensemble: &PathEnsemble<T>) -> Result<Vec<StochasticAggregateKernel<T>>> {
    let fields = integrated_fields(model);
    ensemble
        .paths()
        .iter()
        .map(|path| {
            let loadings: Vec<Mat<T>> = fields
                .sigma_star
                .iter()
                .enumerate()
                .map(|(k, ss)| Mat::from_fn(ss.rows(), ss.cols(), |j, d| -path.p[k][j] * ss[(j, d)]))
                .collect();
            StochasticAggregateKernel::from_model(model.grid.clone(), model.labels(), &loadings)
        })
        .collect()
}

/// Monte Carlo test of `E[P(T_h; T_m)] = P(0; T_m)` at the horizon `T_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct BondMartingaleTest<T> {
    pub maturities: Vec<T>,
    pub targets: Vec<T>,
    pub estimates: Vec<McEstimate<T>>,
    pub paths: usize,
}

impl<T: Real> BondMartingaleTest<T> {
    pub fn z_scores(&self) -> Vec<T> {
        self.estimates.iter().zip(&self.targets).map(|(e, &t)| e.z_score(t)).collect()
    }

    pub fn max_abs_z(&self) -> T {
        self.z_scores().into_iter().fold(T::zero(), |m, z| m.max(z.abs()))
    }

    /// Every bond within `k` standard errors.
    pub fn passes(&self, k: T) -> bool {
        self.estimates.iter().zip(&self.targets).all(|(e, &t)| e.within(t, k))
    }
}

/// Streams `n` surfaces in chunks and tests every discounted bond for the
/// martingale property at the grid horizon. Matured bonds are frozen, so
/// the test covers them at their maturity.
pub fn bond_martingale_test<T: Real>(model: &HjmModel<T>, n: usize, seed: u64, chunk: usize) -> Result<BondMartingaleTest<T>> {
    if n == 0 {
        return Err(Error::InvalidInput("test needs at least one path".into()));
    }
    let targets = model.initial_bonds();
    let m = targets.len();
    let chunk = chunk.max(1);
    let mut moments = vec![Moments::default(); m];
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        for s in simulate_surface_range(model, seed, start..end) {
            let last = &s.p[s.p.len() - 1];
            for j in 0..m {
                moments[j].push(last[j].as_f64() - targets[j].as_f64());
            }
        }
        start = end;
    }
    Ok(BondMartingaleTest {
        maturities: model.maturities.clone(),
        estimates: moments.iter().zip(&targets).map(|(mo, t)| mo.estimate(t.as_f64())).collect(),
        targets,
        paths: n,
    })
}

/// Cauchy diagnostic for `σ*(t; ·)`: `σ` is sampled on maturity grids with
/// `base_cells · 2^l` uniform cells on `(0, horizon]`, and consecutive
/// levels are compared in `ℓ²` on the coarse maturities. Returns one
/// distance per pair of levels.
pub fn sigma_star_cauchy<T: Real>(
    sigma: impl Fn(T, T) -> Vec<T>,
    t: T,
    horizon: T,
    base_cells: usize,
    levels: usize,
) -> Vec<T> {
    let star_on = |cells: usize| -> Vec<Vec<T>> {
        let w = horizon / T::from_count(cells);
        let mut acc: Vec<T> = Vec::new();
        (1..=cells)
            .map(|j| {
                let tm = w * T::from_count(j);
                if tm > t {
                    let s = sigma(t, tm);
                    if acc.is_empty() {
                        acc = vec![T::zero(); s.len()];
                    }
                    for (a, v) in acc.iter_mut().zip(s) {
                        *a += v * w;
                    }
                }
                acc.clone()
            })
            .collect()
    };
    let mut out = Vec::new();
    let mut prev = star_on(base_cells);
    for l in 1..levels {
        let cells = base_cells << l;
        let cur = star_on(cells);
        let stride = 1 << l;
        // compare on the base maturities, which every level contains
        let dist = (0..base_cells).fold(T::zero(), |s, j| {
            let a = &prev[(j + 1) * (1 << (l - 1)) - 1];
            let b = &cur[(j + 1) * stride - 1];
            let width = a.len().max(b.len());
            s + (0..width).fold(T::zero(), |s2, d| {
                let x = a.get(d).copied().unwrap_or_else(T::zero) - b.get(d).copied().unwrap_or_else(T::zero);
                s2 + x * x
            })
        });
        out.push(dist.sqrt());
        prev = cur;
    }
    out
}
