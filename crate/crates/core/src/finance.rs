//! Deflators, wealth with withdrawals and the viability bound.
//!
//! The canonical deflator is the discrete stochastic exponential
//! `Y = Π(1 − ΔM^A_k)` of `−M^A`, where `M^A = Σ (θ^A_k)ᵀ ΔM_k` and `θ^A_k`
//! represents the drift increment `ΔA_k` under the model kernel. For Gaussian
//! increments `E[Δ(Y P_i) | past] = Y (ΔA_i − (ΔC θ^A)_i) = 0`, so the
//! product form makes `Y P_i` an exact discrete martingale. Any factor
//! `Π(1 + ΔL_k)` with `L` driven only by drivers the assets do not load on
//! keeps that property.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::integration::integrate;
use crate::linalg::Mat;
use crate::rkhs::Tolerances;
use crate::scalar::{dot, Real};
use crate::simulation::{simulate_chunked, Path, PathEnsemble, SemimartingaleModel};
use crate::stats::{McEstimate, Moments};
use crate::stoch_kernel::{IncrementFamily, PerPath, StochasticAggregateKernel};

/// Default positivity guard for the per-step factors of a deflator.
pub const EPS_POS: f64 = 1e-6;

/// Discretisation of the stochastic exponential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExponentialForm {
    /// `Π(1 + ΔL)`: zero conditional drift on the grid.
    #[default]
    Product,
    /// `exp(L − ½[L, L])`: the continuous-time formula sampled on the grid.
    Exponential,
}

/// Deflator paths over an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct DeflatorPath<T> {
    /// `Y` per path; `Y(0) = 1`. Excluded paths keep the values computed up
    /// to the guarded step and are filled with NaN afterwards.
    pub y: Vec<Vec<T>>,
    /// The local martingale `L` with `Y = E(L)`, per path.
    pub log_driver: Vec<Vec<T>>,
    /// Paths dropped by the positivity guard.
    pub excluded: Vec<bool>,
    pub positivity_violations: usize,
}

impl<T: Real> DeflatorPath<T> {
    pub fn retained(&self) -> impl Iterator<Item = usize> + '_ {
        self.excluded.iter().enumerate().filter(|(_, &e)| !e).map(|(i, _)| i)
    }

    pub fn terminal(&self, path: usize) -> T {
        let y = &self.y[path];
        y[y.len() - 1]
    }

    /// Fraction of paths removed by the positivity guard.
    pub fn guarded_fraction(&self) -> T {
        T::from_count(self.positivity_violations) / T::from_count(self.excluded.len().max(1))
    }
}

/// `θ^A_k` for every step, i.e. the integrand representing the drift.
/// Fails with `StructuralFail` at the first step where the drift leaves the
/// range of the kernel increment.
pub fn market_price_of_risk<T: Real>(
    sak: &StochasticAggregateKernel<T>,
    drift: &IncrementFamily<T>,
    tol: &Tolerances<T>,
) -> Result<Vec<Vec<T>>> {
    sak.integrand_path(drift, tol).map_err(|e| match e {
        Error::NotInRc { step, .. } => Error::StructuralFail { step },
        other => other,
    })
}

/// Builds `E(L)` from the increments `ΔL_k`. Returns `None` once a factor
/// `1 + ΔL_k` drops to `eps_pos` or below.
fn exponential_path<T: Real>(dl: &[T], form: ExponentialForm, eps_pos: T) -> (Vec<T>, Vec<T>, bool) {
    let mut y = Vec::with_capacity(dl.len() + 1);
    let mut l = Vec::with_capacity(dl.len() + 1);
    y.push(T::one());
    l.push(T::zero());
    let mut qv = T::zero();
    let mut guarded = false;
    for &d in dl {
        let prev = y[y.len() - 1];
        let next_l = l[l.len() - 1] + d;
        l.push(next_l);
        if guarded {
            y.push(T::nan());
            continue;
        }
        if T::one() + d <= eps_pos {
            guarded = true;
            y.push(T::nan());
            continue;
        }
        qv += d * d;
        y.push(match form {
            ExponentialForm::Product => prev * (T::one() + d),
            ExponentialForm::Exponential => (next_l - qv / T::lit(2.0)).exp(),
        });
    }
    (y, l, guarded)
}

fn deflator_increments<T: Real>(thetas: &[Vec<T>], path: &Path<T>, gamma: Option<&[T]>) -> Result<Vec<T>> {
    let dm = path.martingale_increments();
    if gamma.is_some() && path.dw.len() != dm.len() {
        return Err(Error::InvalidInput("ensemble carries no driver increments".into()));
    }
    Ok(thetas
        .iter()
        .zip(&dm)
        .enumerate()
        .map(|(k, (th, dmk))| {
            let base = -dot(th, dmk);
            match gamma {
                Some(g) => {
                    let dl = dot(g, &path.dw[k]);
                    // (1 − ΔM^A)(1 + ΔL) − 1
                    base + dl + base * dl
                }
                None => base,
            }
        })
        .collect())
}

/// `M^A` and the canonical deflator `Y = E(−M^A)` along each path.
pub fn compute_ma_and_deflator<T: Real>(
    sak: &StochasticAggregateKernel<T>,
    drift: &IncrementFamily<T>,
    ensemble: &PathEnsemble<T>,
    form: ExponentialForm,
    tol: &Tolerances<T>,
) -> Result<DeflatorPath<T>> {
    let thetas = market_price_of_risk(sak, drift, tol)?;
    build_deflator(&thetas, ensemble, None, form)
}

fn build_deflator<T: Real>(
    thetas: &[Vec<T>],
    ensemble: &PathEnsemble<T>,
    gamma: Option<&[T]>,
    form: ExponentialForm,
) -> Result<DeflatorPath<T>> {
    if thetas.len() != ensemble.grid().steps() {
        return Err(Error::Dimension("integrand steps differ from the ensemble grid".into()));
    }
    let eps = T::lit(EPS_POS);
    let mut out = DeflatorPath { y: Vec::new(), log_driver: Vec::new(), excluded: Vec::new(), positivity_violations: 0 };
    for path in ensemble.paths() {
        let dl = deflator_increments(thetas, path, gamma)?;
        let (y, l, guarded) = exponential_path(&dl, form, eps);
        out.positivity_violations += guarded as usize;
        out.y.push(y);
        out.log_driver.push(l);
        out.excluded.push(guarded);
    }
    Ok(out)
}

/// Perturbed deflator `Y' = Y · Π(1 + γᵀΔW_k)` for a loading `γ` on the
/// drivers. Returns the new deflator and whether `σ_k γ = 0` at every step,
/// which is what keeps `Y' P_i` a martingale.
pub fn deflator_family<T: Real>(
    model: &SemimartingaleModel<T>,
    sak: &StochasticAggregateKernel<T>,
    ensemble: &PathEnsemble<T>,
    gamma: &[T],
    form: ExponentialForm,
    tol: &Tolerances<T>,
) -> Result<(DeflatorPath<T>, bool)> {
    if gamma.len() != model.drivers() {
        return Err(Error::Dimension("loading length differs from driver count".into()));
    }
    let thetas = market_price_of_risk(sak, &model.drift_family(ensemble.grid())?, tol)?;
    let orthogonal = is_orthogonal(&model.loading_matrices(ensemble.grid())?, gamma);
    Ok((build_deflator(&thetas, ensemble, Some(gamma), form)?, orthogonal))
}

fn is_orthogonal<T: Real>(loadings: &[Mat<T>], gamma: &[T]) -> bool {
    let gnorm = gamma.iter().fold(T::zero(), |m, g| m.max(g.abs()));
    loadings.iter().all(|s| {
        let scale = s.max_abs() * gnorm * T::from_count(gamma.len().max(1));
        s.mul_vec(gamma).iter().all(|v| v.abs() <= T::lit(64.0) * T::epsilon() * scale)
    })
}

/// Nonnegative withdrawal increments `ΔK_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsumptionStream<T> {
    increments: Vec<T>,
}

impl<T: Real> ConsumptionStream<T> {
    pub fn new(increments: Vec<T>) -> Result<Self> {
        if increments.iter().any(|&k| !(k >= T::zero()) || !k.is_finite()) {
            return Err(Error::InvalidInput("withdrawal increments must be finite and nonnegative".into()));
        }
        Ok(Self { increments })
    }

    pub fn zeros(steps: usize) -> Self {
        Self { increments: vec![T::zero(); steps] }
    }

    pub fn increments(&self) -> &[T] {
        &self.increments
    }

    /// Cumulative withdrawals `K(t_k)`, starting at 0.
    pub fn cumulative(&self) -> Vec<T> {
        let mut out = vec![T::zero()];
        for &k in &self.increments {
            let last = out[out.len() - 1];
            out.push(last + k);
        }
        out
    }
}

/// `X = x + X^F − K` along each path. Nonnegativity is left to the caller.
pub fn wealth_process<T: Real>(
    x: T,
    f: PerPath<'_, IncrementFamily<T>>,
    k: PerPath<'_, ConsumptionStream<T>>,
    kernels: PerPath<'_, StochasticAggregateKernel<T>>,
    ensemble: &PathEnsemble<T>,
    tol: &Tolerances<T>,
) -> Result<Vec<Vec<T>>> {
    k.check_paths(ensemble.len(), "withdrawals")?;
    let integral = integrate(kernels, f, ensemble, tol)?;
    integral
        .x
        .into_iter()
        .enumerate()
        .map(|(p, xf)| {
            let kc = k.get(p).cumulative();
            if kc.len() != xf.len() {
                return Err(Error::Dimension("withdrawal steps differ from grid".into()));
            }
            Ok(xf.iter().zip(&kc).map(|(&g, &c)| x + g - c).collect())
        })
        .collect()
}

/// `E[Y(T) X(T)]` over the retained paths.
pub fn deflated_terminal<T: Real>(deflator: &DeflatorPath<T>, wealth: &[Vec<T>]) -> McEstimate<T> {
    let samples: Vec<T> = deflator.retained().map(|p| deflator.terminal(p) * wealth[p][wealth[p].len() - 1]).collect();
    McEstimate::from_samples(&samples)
}

/// Self-financing strategy with unit initial wealth.
#[derive(Debug, Clone, PartialEq)]
pub enum StrategyKind<T> {
    /// Constant units `θ` held throughout: `X = 1 + θᵀ(P − P(0))`.
    Hold(Vec<T>),
    /// Constant fractions `π` of current wealth, rebalanced every step:
    /// `X_{k+1} = X_k (1 + Σ_i π_i ΔP_i / P_i)`.
    Proportional(Vec<T>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Strategy<T> {
    pub name: String,
    pub kind: StrategyKind<T>,
}

impl<T: Real> Strategy<T> {
    pub fn hold(name: &str, units: Vec<T>) -> Self {
        Self { name: name.into(), kind: StrategyKind::Hold(units) }
    }

    pub fn proportional(name: &str, fractions: Vec<T>) -> Self {
        Self { name: name.into(), kind: StrategyKind::Proportional(fractions) }
    }

    /// Wealth path with `X(0) = 1`.
    pub fn wealth(&self, path: &Path<T>) -> Result<Vec<T>> {
        let d = path.p[0].len();
        let mut x = vec![T::one()];
        match &self.kind {
            StrategyKind::Hold(units) => {
                if units.len() != d {
                    return Err(Error::Dimension("holding length differs from asset count".into()));
                }
                for row in &path.p[1..] {
                    x.push(T::one() + (0..d).fold(T::zero(), |s, i| s + units[i] * (row[i] - path.p[0][i])));
                }
            }
            StrategyKind::Proportional(pi) => {
                if pi.len() != d {
                    return Err(Error::Dimension("fraction length differs from asset count".into()));
                }
                for w in path.p.windows(2) {
                    let ret = (0..d).fold(T::zero(), |s, i| s + pi[i] * (w[1][i] - w[0][i]) / w[0][i]);
                    let last = x[x.len() - 1];
                    x.push(last * (T::one() + ret));
                }
            }
        }
        Ok(x)
    }
}

/// One row of the viability table.
#[derive(Debug, Clone, PartialEq)]
pub struct ViabilityRow<T> {
    pub strategy: String,
    pub level: T,
    /// `P[X(T) > ℓ]`.
    pub tail: McEstimate<T>,
    /// `E[Y(T) X(T)] / ℓ`.
    pub deflated_bound: T,
    /// `1/ℓ`.
    pub markov_bound: T,
    /// `inf_y (E[Y X]/(ℓ y) + P[Y < y])`, a bound on the tail that holds
    /// under the physical measure whatever the drift.
    pub envelope: T,
}

impl<T: Real> ViabilityRow<T> {
    /// Tail within `k` standard errors of the envelope.
    pub fn within_envelope(&self, k: T) -> bool {
        self.tail.mean <= self.envelope + k * self.tail.std_error
    }

    /// Tail within `k` standard errors of `1/ℓ`.
    pub fn within_markov(&self, k: T) -> bool {
        self.tail.mean <= self.markov_bound + k * self.tail.std_error
    }
}

/// Tail probabilities of terminal wealth for each strategy and level next
/// to the bounds implied by the deflator.
pub fn viability_bound_check<T: Real>(
    ensemble: &PathEnsemble<T>,
    deflator: &DeflatorPath<T>,
    strategies: &[Strategy<T>],
    levels: &[T],
) -> Result<Vec<ViabilityRow<T>>> {
    if deflator.y.len() != ensemble.len() {
        return Err(Error::Dimension("deflator and ensemble path counts differ".into()));
    }
    let retained: Vec<usize> = deflator.retained().collect();
    let ys: Vec<T> = retained.iter().map(|&p| deflator.terminal(p)).collect();
    let n = T::from_count(retained.len());
    let mut sorted = ys.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    // candidate thresholds: a fixed set of sample quantiles of Y(T)
    let candidates: Vec<(T, T)> = [0.0, 0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5]
        .iter()
        .filter(|_| !sorted.is_empty())
        .map(|&q| {
            let idx = ((q * (sorted.len() - 1) as f64).round() as usize).min(sorted.len() - 1);
            let y = sorted[idx];
            let below = T::from_count(sorted.partition_point(|&v| v < y)) / n;
            (y, below)
        })
        .collect();
    let mut rows = Vec::new();
    for s in strategies {
        let mut terminal = Vec::with_capacity(retained.len());
        for &p in &retained {
            let x = s.wealth(ensemble.path(p))?;
            if let Some(&w) = x.iter().find(|&&w| w < T::zero()) {
                return Err(Error::NegativeWealth { strategy: s.name.clone(), path: p, wealth: w.as_f64() });
            }
            terminal.push(x[x.len() - 1]);
        }
        let deflated = ys.iter().zip(&terminal).map(|(&y, &x)| y * x).sum::<T>() / n;
        for &l in levels {
            let ind: Vec<T> = terminal.iter().map(|&x| if x > l { T::one() } else { T::zero() }).collect();
            let envelope = candidates
                .iter()
                .filter(|(y, _)| *y > T::zero())
                .map(|&(y, below)| deflated / (l * y) + below)
                .fold(T::infinity(), T::min);
            rows.push(ViabilityRow {
                strategy: s.name.clone(),
                level: l,
                tail: McEstimate::from_samples(&ind),
                deflated_bound: deflated / l,
                markov_bound: T::one() / l,
                envelope: envelope.min(T::one()),
            });
        }
    }
    Ok(rows)
}

/// Monte Carlo test of `E[Y(T) P_i(T)] = P_i(0)` for every asset.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleTest<T> {
    pub labels: Vec<String>,
    pub targets: Vec<T>,
    pub estimates: Vec<McEstimate<T>>,
    /// `E[Y(T)]`, target 1.
    pub deflator_mean: McEstimate<T>,
    pub paths: usize,
    pub excluded: usize,
    /// Whether the perturbation (if any) avoided the asset drivers.
    pub orthogonal: bool,
}

impl<T: Real> MartingaleTest<T> {
    pub fn z_scores(&self) -> Vec<T> {
        self.estimates.iter().zip(&self.targets).map(|(e, &t)| e.z_score(t)).collect()
    }

    /// Every asset and the deflator itself within `k` standard errors.
    pub fn passes(&self, k: T) -> bool {
        self.estimates.iter().zip(&self.targets).all(|(e, &t)| e.within(t, k)) && self.deflator_mean.within(T::one(), k)
    }

    /// Largest `|z|` over the assets and `E[Y(T)] = 1`.
    pub fn max_abs_z(&self) -> T {
        self.z_scores().into_iter().fold(self.deflator_mean.z_score(T::one()).abs(), |m, z| m.max(z.abs()))
    }
}

/// Streams `n` paths in chunks and tests the martingale property of
/// `Y P_i`, where `Y` is the canonical deflator optionally multiplied by
/// `Π(1 + γᵀΔW)`. Memory stays bounded by the chunk size, and the result
/// does not depend on the chunk size or the thread count.
#[allow(clippy::too_many_arguments)]
pub fn deflator_martingale_test<T: Real>(
    model: &SemimartingaleModel<T>,
    grid: &TimeGrid<T>,
    n: usize,
    seed: u64,
    chunk: usize,
    gamma: Option<&[T]>,
    form: ExponentialForm,
    tol: &Tolerances<T>,
) -> Result<MartingaleTest<T>> {
    let sak = model.model_kernel(grid)?;
    let thetas = market_price_of_risk(&sak, &model.drift_family(grid)?, tol)?;
    let orthogonal = match gamma {
        Some(g) => {
            if g.len() != model.drivers() {
                return Err(Error::Dimension("loading length differs from driver count".into()));
            }
            is_orthogonal(&model.loading_matrices(grid)?, g)
        }
        None => true,
    };
    let d = model.dim();
    let targets = model.initial().to_vec();
    let per_chunk = simulate_chunked(model, grid, n, seed, chunk, |ens| {
        let defl = build_deflator(&thetas, ens, gamma, form)?;
        let mut rows = Vec::with_capacity(ens.len());
        for (p, path) in ens.paths().iter().enumerate() {
            if defl.excluded[p] {
                rows.push(None);
            } else {
                let y = defl.terminal(p);
                rows.push(Some((y, path.terminal().iter().map(|&v| y * v).collect::<Vec<T>>())));
            }
        }
        Ok(rows)
    })?;
    let mut moments = vec![Moments::default(); d];
    let mut ymom = Moments::default();
    let mut excluded = 0;
    for row in per_chunk.iter().flatten() {
        match row {
            None => excluded += 1,
            Some((y, yp)) => {
                ymom.push(y.as_f64() - 1.0);
                for i in 0..d {
                    moments[i].push(yp[i].as_f64() - targets[i].as_f64());
                }
            }
        }
    }
    Ok(MartingaleTest {
        labels: model.labels().to_vec(),
        estimates: moments.iter().zip(&targets).map(|(m, t)| m.estimate(t.as_f64())).collect(),
        targets,
        deflator_mean: ymom.estimate(1.0),
        paths: n,
        excluded,
        orthogonal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulation::simulate_ensemble;

    fn tol() -> Tolerances<f64> {
        Tolerances::default()
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i}")).collect()
    }

    /// One asset with `a = σ²λ`; a second, unused driver for perturbations.
    fn one_asset(lambda: f64) -> SemimartingaleModel<f64> {
        let sigma = 0.2;
        SemimartingaleModel::constant(labels(1), vec![1.0], vec![sigma * sigma * lambda], Mat::from_rows(&[vec![sigma, 0.0]]).unwrap())
            .unwrap()
    }

    #[test]
    fn zero_drift_gives_unit_deflator() {
        let model = SemimartingaleModel::constant(labels(1), vec![1.0], vec![0.0], Mat::from_rows(&[vec![0.3]]).unwrap()).unwrap();
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let ens = simulate_ensemble(&model, &grid, 10, 1).unwrap();
        let sak = model.model_kernel(&grid).unwrap();
        let defl = compute_ma_and_deflator(&sak, &model.drift_family(&grid).unwrap(), &ens, ExponentialForm::Product, &tol()).unwrap();
        assert!(defl.y.iter().flatten().all(|&y| y == 1.0));
        assert_eq!(defl.positivity_violations, 0);
    }

    #[test]
    fn market_price_of_risk_is_lambda() {
        let model = one_asset(0.5);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let sak = model.model_kernel(&grid).unwrap();
        let th = market_price_of_risk(&sak, &model.drift_family(&grid).unwrap(), &tol()).unwrap();
        assert!(th.iter().all(|t| (t[0] - 0.5).abs() < 1e-12));
        // M^A = λ M exactly
        let ens = simulate_ensemble(&model, &grid, 3, 2).unwrap();
        let defl = compute_ma_and_deflator(&sak, &model.drift_family(&grid).unwrap(), &ens, ExponentialForm::Product, &tol()).unwrap();
        for (p, l) in defl.log_driver.iter().enumerate() {
            let m = &ens.path(p).m;
            for k in 0..=10 {
                assert!((l[k] + 0.5 * m[k][0]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn structural_failure_is_reported() {
        let model = SemimartingaleModel::constant(labels(1), vec![1.0], vec![0.1], Mat::zeros(1, 1)).unwrap();
        let grid = TimeGrid::uniform(1.0, 5).unwrap();
        let sak = model.model_kernel(&grid).unwrap();
        let ens = simulate_ensemble(&model, &grid, 2, 3).unwrap();
        let r = compute_ma_and_deflator(&sak, &model.drift_family(&grid).unwrap(), &ens, ExponentialForm::Product, &tol());
        assert_eq!(r, Err(Error::StructuralFail { step: 0 }));
    }

    #[test]
    fn streaming_martingale_tests() {
        let model = one_asset(1.0);
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let t = deflator_martingale_test(&model, &grid, 20_000, 11, 4096, None, ExponentialForm::Product, &tol()).unwrap();
        assert!(t.passes(3.0), "{t:?}");
        assert_eq!(t.excluded, 0);
        // orthogonal perturbation keeps the property
        let g = [0.0, 0.8];
        let t = deflator_martingale_test(&model, &grid, 20_000, 12, 4096, Some(&g), ExponentialForm::Product, &tol()).unwrap();
        assert!(t.orthogonal && t.passes(3.0), "{t:?}");
        // loading the asset driver breaks it
        let model = one_asset(0.5);
        let g = [1.0, 0.0];
        let t = deflator_martingale_test(&model, &grid, 20_000, 13, 4096, Some(&g), ExponentialForm::Product, &tol()).unwrap();
        assert!(!t.orthogonal && t.z_scores()[0].abs() > 3.0 && !t.passes(3.0), "{t:?}");
    }

    #[test]
    fn chunking_does_not_change_the_test() {
        let model = one_asset(1.0);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let a = deflator_martingale_test(&model, &grid, 1000, 5, 64, None, ExponentialForm::Product, &tol()).unwrap();
        let b = deflator_martingale_test(&model, &grid, 1000, 5, 1000, None, ExponentialForm::Product, &tol()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn perturbation_with_zero_loading_is_identity() {
        let model = one_asset(1.0);
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let ens = simulate_ensemble(&model, &grid, 5, 4).unwrap();
        let sak = model.model_kernel(&grid).unwrap();
        let base = compute_ma_and_deflator(&sak, &model.drift_family(&grid).unwrap(), &ens, ExponentialForm::Product, &tol()).unwrap();
        let (pert, orth) = deflator_family(&model, &sak, &ens, &[0.0, 0.0], ExponentialForm::Product, &tol()).unwrap();
        assert!(orth);
        assert_eq!(base.y, pert.y);
    }

    #[test]
    fn wealth_examples() {
        let model = one_asset(1.0);
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let ens = simulate_ensemble(&model, &grid, 4, 6).unwrap();
        let sak = model.model_kernel(&grid).unwrap();
        let zero = IncrementFamily::zeros(labels(1), 20);
        let k0 = ConsumptionStream::zeros(20);
        let w = wealth_process(2.5, PerPath::Shared(&zero), PerPath::Shared(&k0), PerPath::Shared(&sak), &ens, &tol()).unwrap();
        assert!(w.iter().flatten().all(|&x| x == 2.5));
        let col = sak.column_family(0);
        let w = wealth_process(1.0, PerPath::Shared(&col), PerPath::Shared(&k0), PerPath::Shared(&sak), &ens, &tol()).unwrap();
        for (p, x) in w.iter().enumerate() {
            let pp = &ens.path(p).p;
            for k in 0..=20 {
                assert!((x[k] - (1.0 + pp[k][0] - pp[0][0])).abs() < 1e-12);
            }
        }
        assert!(ConsumptionStream::new(vec![0.1, -0.01]).is_err());
    }

    #[test]
    fn deflated_wealth_is_a_supermartingale() {
        let model = one_asset(1.0);
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let ens = simulate_ensemble(&model, &grid, 20_000, 7).unwrap();
        let sak = model.model_kernel(&grid).unwrap();
        let defl = compute_ma_and_deflator(&sak, &model.drift_family(&grid).unwrap(), &ens, ExponentialForm::Product, &tol()).unwrap();
        let f = sak.apply(&vec![vec![3.0]; 20]).unwrap();
        let k0 = ConsumptionStream::zeros(20);
        let k = ConsumptionStream::new(vec![0.01; 20]).unwrap();
        let w0 = wealth_process(1.0, PerPath::Shared(&f), PerPath::Shared(&k0), PerPath::Shared(&sak), &ens, &tol()).unwrap();
        let w1 = wealth_process(1.0, PerPath::Shared(&f), PerPath::Shared(&k), PerPath::Shared(&sak), &ens, &tol()).unwrap();
        let e0 = deflated_terminal(&defl, &w0);
        let e1 = deflated_terminal(&defl, &w1);
        assert!(e0.within(1.0, 3.0), "{e0:?}");
        assert!(e1.mean <= 1.0 + 3.0 * e1.std_error && !e1.within(1.0, 3.0), "{e1:?}");
    }

    #[test]
    fn viability_table() {
        let grid = TimeGrid::uniform(1.0, 50).unwrap();
        let levels = [1.0, 2.0, 4.0];
        // martingale case: Y ≡ 1
        let model = SemimartingaleModel::constant(labels(1), vec![1.0], vec![0.0], Mat::from_rows(&[vec![0.15]]).unwrap()).unwrap();
        let ens = simulate_ensemble(&model, &grid, 20_000, 8).unwrap();
        let sak = model.model_kernel(&grid).unwrap();
        let defl = compute_ma_and_deflator(&sak, &model.drift_family(&grid).unwrap(), &ens, ExponentialForm::Product, &tol()).unwrap();
        let strategies = [Strategy::hold("bond", vec![0.0]), Strategy::hold("stock", vec![1.0])];
        let rows = viability_bound_check(&ens, &defl, &strategies, &levels).unwrap();
        for r in &rows {
            assert!(r.within_markov(3.0) && r.within_envelope(3.0), "{r:?}");
            if r.strategy == "bond" {
                assert_eq!(r.tail.mean, 0.0);
            }
        }
        // viable model with drift and leverage
        let model = one_asset(2.0);
        let ens = simulate_ensemble(&model, &grid, 20_000, 9).unwrap();
        let sak = model.model_kernel(&grid).unwrap();
        let defl = compute_ma_and_deflator(&sak, &model.drift_family(&grid).unwrap(), &ens, ExponentialForm::Product, &tol()).unwrap();
        let rows = viability_bound_check(&ens, &defl, &[Strategy::proportional("lev", vec![3.0])], &levels).unwrap();
        assert!(rows.iter().all(|r| r.within_envelope(3.0)), "{rows:?}");
        // a short position large enough to go negative
        let r = viability_bound_check(&ens, &defl, &[Strategy::hold("short", vec![-5.0])], &levels);
        assert!(matches!(r, Err(Error::NegativeWealth { .. })));
    }

    #[test]
    fn exponential_form_is_positive() {
        let (y, _, g) = exponential_path(&[0.1, -0.2, 0.05], ExponentialForm::Exponential, 1e-6);
        assert!(!g && y.iter().all(|&v| v > 0.0));
        let (y, _, g) = exponential_path::<f64>(&[0.1, -1.0, 0.05], ExponentialForm::Product, 1e-6);
        assert!(g && y[1] > 0.0 && y[2].is_nan());
    }
}
