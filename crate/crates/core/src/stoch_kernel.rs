//! Stochastic aggregate kernels on a time grid and the integrand space
//! `R(C)` they generate.
//!
//! Every differential identity is read per grid step: the kernel increment
//! `ΔC_k` is a [`Kernel`] over the asset labels, an element `F` of `R(C)` is
//! an [`IncrementFamily`] whose step increments `ΔF_k` lie in the range of
//! `ΔC_k`, and `∫‖dF‖²_{dC}` becomes `Σ_k ‖ΔF_k‖²_{ΔC_k}`.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::Mat;
use crate::rkhs::{Kernel, Tolerances};
use crate::scalar::{dot, Real};
use crate::stats::McEstimate;

/// Either one object shared by every path or one object per path.
#[derive(Debug)]
pub enum PerPath<'a, X> {
    Shared(&'a X),
    Each(&'a [X]),
}

impl<'a, X> Clone for PerPath<'a, X> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<'a, X> Copy for PerPath<'a, X> {}

impl<'a, X> PerPath<'a, X> {
    #[inline]
    pub fn get(&self, path: usize) -> &'a X {
        match self {
            PerPath::Shared(x) => x,
            PerPath::Each(xs) => &xs[path],
        }
    }

    /// Number of paths carried, `None` when shared.
    pub fn paths(&self) -> Option<usize> {
        match self {
            PerPath::Shared(_) => None,
            PerPath::Each(xs) => Some(xs.len()),
        }
    }

    pub(crate) fn check_paths(&self, n: usize, what: &str) -> Result<()> {
        match self.paths() {
            Some(m) if m != n => Err(Error::Dimension(format!("{what}: {m} per-path entries for {n} paths"))),
            _ => Ok(()),
        }
    }
}

impl<'a, X> From<&'a [X]> for PerPath<'a, X> {
    fn from(xs: &'a [X]) -> Self {
        PerPath::Each(xs)
    }
}

impl<'a, X> From<&'a Vec<X>> for PerPath<'a, X> {
    fn from(xs: &'a Vec<X>) -> Self {
        PerPath::Each(xs)
    }
}

/// Per-step increments `ΔF_k` of a finite-variation family indexed by asset
/// labels; `F(t_m) = Σ_{k<m} ΔF_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementFamily<T> {
    labels: Vec<String>,
    increments: Vec<Vec<T>>,
}

impl<T: Real> IncrementFamily<T> {
    pub fn new(labels: Vec<String>, increments: Vec<Vec<T>>) -> Result<Self> {
        if increments.iter().any(|d| d.len() != labels.len()) {
            return Err(Error::Dimension("increment width differs from label count".into()));
        }
        if increments.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("increments must be finite".into()));
        }
        Ok(Self { labels, increments })
    }

    pub fn zeros(labels: Vec<String>, steps: usize) -> Self {
        let d = labels.len();
        Self { labels, increments: vec![vec![T::zero(); d]; steps] }
    }

    /// `ΔF_k = rate(t_k) Δt_k`, left endpoint.
    pub fn from_rate(labels: Vec<String>, grid: &TimeGrid<T>, rate: impl Fn(T) -> Vec<T>) -> Result<Self> {
        let increments = (0..grid.steps())
            .map(|k| rate(grid.times()[k]).into_iter().map(|r| r * grid.dt(k)).collect())
            .collect();
        Self::new(labels, increments)
    }

    /// `ΔF_k = F(t_{k+1}) − F(t_k)` for a cumulative function `F`.
    pub fn from_cumulative(labels: Vec<String>, grid: &TimeGrid<T>, cumulative: impl Fn(T) -> Vec<T>) -> Result<Self> {
        let values: Vec<Vec<T>> = grid.times().iter().map(|&t| cumulative(t)).collect();
        let increments = values.windows(2).map(|w| w[1].iter().zip(&w[0]).map(|(&b, &a)| b - a).collect()).collect();
        Self::new(labels, increments)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    #[inline]
    pub fn step(&self, k: usize) -> &[T] {
        &self.increments[k]
    }

    pub fn increments(&self) -> &[Vec<T>] {
        &self.increments
    }

    /// Cumulative values `F(t_0), …, F(t_steps)` with `F(t_0) = 0`.
    pub fn path(&self) -> Vec<Vec<T>> {
        let mut acc = vec![T::zero(); self.dim()];
        let mut out = Vec::with_capacity(self.steps() + 1);
        out.push(acc.clone());
        for d in &self.increments {
            acc.iter_mut().zip(d).for_each(|(a, &x)| *a += x);
            out.push(acc.clone());
        }
        out
    }

    pub fn restrict(&self, subset: &[usize]) -> Self {
        Self {
            labels: subset.iter().map(|&i| self.labels[i].clone()).collect(),
            increments: self.increments.iter().map(|d| subset.iter().map(|&i| d[i]).collect()).collect(),
        }
    }

    /// `α·self + β·other`.
    pub fn combine(&self, alpha: T, other: &Self, beta: T) -> Result<Self> {
        if self.dim() != other.dim() || self.steps() != other.steps() {
            return Err(Error::Dimension("families are not conformable".into()));
        }
        let increments = self
            .increments
            .iter()
            .zip(&other.increments)
            .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| alpha * x + beta * y).collect())
            .collect();
        Ok(Self { labels: self.labels.clone(), increments })
    }
}

/// Grid version of a stochastic aggregate kernel: one PSD increment per step.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticAggregateKernel<T> {
    grid: TimeGrid<T>,
    labels: Vec<String>,
    increments: Vec<Kernel<T>>,
}

/// Per-level norm paths along an exhaustion `J¹ ⊆ J² ⊆ …`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustionProfile<T> {
    pub levels: Vec<Vec<T>>,
    /// Largest observed decrease of a per-step increment between
    /// consecutive levels (zero when perfectly monotone).
    pub max_violation: T,
}

impl<T: Real> ExhaustionProfile<T> {
    pub fn final_level(&self) -> &[T] {
        self.levels.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

impl<T: Real> StochasticAggregateKernel<T> {
    /// Validates shapes; kernels are expected to be validated already.
    pub fn new(grid: TimeGrid<T>, labels: Vec<String>, increments: Vec<Kernel<T>>) -> Result<Self> {
        if increments.len() != grid.steps() {
            return Err(Error::Dimension(format!("{} kernel increments on a {}-step grid", increments.len(), grid.steps())));
        }
        if increments.iter().any(|c| c.dim() != labels.len()) {
            return Err(Error::Dimension("kernel increment dimension differs from label count".into()));
        }
        let increments = increments
            .into_iter()
            .map(|c| c.with_labels(labels.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { grid, labels, increments })
    }

    /// Realized covariation: `ΔC_k = ΔP_k ΔP_kᵀ` from price increments.
    pub fn from_realized(grid: TimeGrid<T>, labels: Vec<String>, price_increments: &[Vec<T>]) -> Result<Self> {
        if price_increments.len() != grid.steps() {
            return Err(Error::Dimension("one price increment per step expected".into()));
        }
        if price_increments.iter().any(|d| d.len() != labels.len()) {
            return Err(Error::Dimension("price increment width differs from label count".into()));
        }
        let increments = price_increments.iter().map(|d| Kernel::new_unchecked(Mat::outer(d), labels.clone())).collect();
        Ok(Self { grid, labels, increments })
    }

    /// Model kernel `ΔC_k = σ_k σ_kᵀ Δt_k` from per-step loading matrices
    /// (assets × drivers).
    pub fn from_model(grid: TimeGrid<T>, labels: Vec<String>, loadings: &[Mat<T>]) -> Result<Self> {
        if loadings.len() != grid.steps() {
            return Err(Error::Dimension("one loading matrix per step expected".into()));
        }
        let mut increments = Vec::with_capacity(loadings.len());
        for (k, sigma) in loadings.iter().enumerate() {
            if sigma.rows() != labels.len() {
                return Err(Error::Dimension("loading rows differ from label count".into()));
            }
            let c = sigma.gram_rows().scale(grid.dt(k));
            increments.push(Kernel::new_unchecked(c, labels.clone()));
        }
        Ok(Self { grid, labels, increments })
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

    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    #[inline]
    pub fn increment(&self, k: usize) -> &Kernel<T> {
        &self.increments[k]
    }

    pub fn increments(&self) -> &[Kernel<T>] {
        &self.increments
    }

    /// `C(t_m) = Σ_{k<m} ΔC_k`.
    pub fn aggregate(&self, m: usize) -> Mat<T> {
        let d = self.dim();
        let mut acc = Mat::zeros(d, d);
        for c in &self.increments[..m] {
            for i in 0..d {
                for j in 0..d {
                    acc[(i, j)] += c.entries()[(i, j)];
                }
            }
        }
        acc
    }

    /// The family `C_{I j}` with increments `ΔC_k e_j`.
    pub fn column_family(&self, j: usize) -> IncrementFamily<T> {
        IncrementFamily {
            labels: self.labels.clone(),
            increments: self.increments.iter().map(|c| c.column(j)).collect(),
        }
    }

    /// Family with increments `ΔC_k θ_k`.
    pub fn apply(&self, thetas: &[Vec<T>]) -> Result<IncrementFamily<T>> {
        if thetas.len() != self.steps() {
            return Err(Error::Dimension("one integrand vector per step expected".into()));
        }
        let increments = self.increments.iter().zip(thetas).map(|(c, th)| c.entries().mul_vec(th)).collect();
        IncrementFamily::new(self.labels.clone(), increments)
    }

    pub fn restrict(&self, subset: &[usize]) -> Self {
        Self {
            grid: self.grid.clone(),
            labels: subset.iter().map(|&i| self.labels[i].clone()).collect(),
            increments: self.increments.iter().map(|c| c.restrict(subset)).collect(),
        }
    }

    fn check_family(&self, f: &IncrementFamily<T>) -> Result<()> {
        if f.steps() != self.steps() || f.dim() != self.dim() {
            return Err(Error::Dimension(format!(
                "family of {} steps x {} labels against kernel of {} steps x {} labels",
                f.steps(),
                f.dim(),
                self.steps(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `(θ_k, ‖ΔF_k‖²_{ΔC_k})`, `None` when `ΔF_k` leaves the range.
    pub fn step_solve(&self, k: usize, df: &[T], tol: &Tolerances<T>) -> Option<(Vec<T>, T)> {
        if df.iter().all(|&x| x == T::zero()) {
            return Some((vec![T::zero(); df.len()], T::zero()));
        }
        self.increments[k].spectral().solve(df, tol.membership).map(|(th, q)| (th, q.max(T::zero())))
    }

    /// Path `t_m ↦ Σ_{k<m} ‖ΔF_k‖²_{ΔC_k}`; `+∞` from the first step that
    /// leaves the range onwards.
    pub fn stoch_norm_sq(&self, f: &IncrementFamily<T>, tol: &Tolerances<T>) -> Result<Vec<T>> {
        self.check_family(f)?;
        let mut out = Vec::with_capacity(self.steps() + 1);
        let mut acc = T::zero();
        out.push(acc);
        for k in 0..self.steps() {
            if acc.is_finite() {
                acc = match self.step_solve(k, f.step(k), tol) {
                    Some((_, q)) => acc + q,
                    None => T::infinity(),
                };
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// The integrand `θ^F`: per step, the limit of
    /// `(ΔC_k + (s_k/n) I)⁻¹ ΔF_k` with `s_k = Σ_i |ΔF_{k,i}|`, which is the
    /// minimum-norm solution of `ΔC_k θ = ΔF_k`.
    pub fn integrand_path(&self, f: &IncrementFamily<T>, tol: &Tolerances<T>) -> Result<Vec<Vec<T>>> {
        self.check_family(f)?;
        (0..self.steps())
            .map(|k| self.step_solve(k, f.step(k), tol).map(|(th, _)| th).ok_or(Error::NotInRc { step: k, path: None }))
            .collect()
    }

    /// One term of the regularized sequence converging to `θ^F_k`.
    pub fn regularized_integrand(&self, k: usize, df: &[T], n: T) -> Result<Vec<T>> {
        let s = df.iter().fold(T::zero(), |acc, x| acc + x.abs());
        let s = if s == T::zero() { T::one() } else { s };
        self.increments[k].regularized_coefficients(df, n / s)
    }

    /// `t_m ↦ Σ_{k<m} ⟨ΔF_k, ΔH_k⟩_{ΔC_k}`.
    pub fn stoch_pairing(&self, f: &IncrementFamily<T>, h: &IncrementFamily<T>, tol: &Tolerances<T>) -> Result<Vec<T>> {
        self.check_family(f)?;
        self.check_family(h)?;
        let mut out = Vec::with_capacity(self.steps() + 1);
        let mut acc = T::zero();
        out.push(acc);
        for k in 0..self.steps() {
            let (theta, _) = self.step_solve(k, f.step(k), tol).ok_or(Error::NotInRc { step: k, path: None })?;
            self.step_solve(k, h.step(k), tol).ok_or(Error::NotInRc { step: k, path: None })?;
            acc += dot(&theta, h.step(k));
            out.push(acc);
        }
        Ok(out)
    }

    /// Norm paths of `F` restricted to each level of a nested exhaustion of
    /// the labels. Per-step increments must not decrease from one level to
    /// the next beyond `monotonicity_tol · (1 + value)`.
    pub fn subset_sup_norm(
        &self,
        f: &IncrementFamily<T>,
        exhaustion: &[Vec<usize>],
        tol: &Tolerances<T>,
        monotonicity_tol: T,
    ) -> Result<ExhaustionProfile<T>> {
        self.check_family(f)?;
        if exhaustion.is_empty() {
            return Err(Error::InvalidInput("exhaustion must have at least one level".into()));
        }
        for (l, level) in exhaustion.iter().enumerate() {
            if level.is_empty() || level.iter().any(|&i| i >= self.dim()) {
                return Err(Error::InvalidInput(format!("exhaustion level {l} is empty or out of range")));
            }
            if l > 0 && !exhaustion[l - 1].iter().all(|i| level.contains(i)) {
                return Err(Error::InvalidInput(format!("exhaustion level {l} does not contain level {}", l - 1)));
            }
        }
        let mut levels = Vec::with_capacity(exhaustion.len());
        for level in exhaustion {
            let sak = self.restrict(level);
            levels.push(sak.stoch_norm_sq(&f.restrict(level), tol)?);
        }
        let mut max_violation = T::zero();
        for l in 1..levels.len() {
            let (lo, hi) = (&levels[l - 1], &levels[l]);
            for k in 0..self.steps() {
                let dlo = lo[k + 1] - lo[k];
                let dhi = hi[k + 1] - hi[k];
                let violation = match (lo[k + 1].is_finite(), hi[k + 1].is_finite()) {
                    (_, false) => T::zero(),
                    (false, true) => T::infinity(),
                    (true, true) => (dlo - dhi).max(T::zero()),
                };
                max_violation = max_violation.max(violation);
                if violation > monotonicity_tol * (T::one() + hi[k + 1].abs()) {
                    return Err(Error::MonotonicityViolation { level: l - 1, next: l, violation: violation.as_f64() });
                }
            }
        }
        Ok(ExhaustionProfile { levels, max_violation })
    }
}

/// Grid indices at integer horizons `1..=k_max`, each clamped to the grid end.
pub(crate) fn horizon_indices<T: Real>(grid: &TimeGrid<T>, k_max: Option<usize>) -> Result<Vec<usize>> {
    let available = grid.horizon();
    let ceil = available.ceil().to_usize().unwrap_or(0).max(1);
    let k_max = k_max.unwrap_or(ceil);
    if k_max > ceil {
        return Err(Error::HorizonExceeded { requested: k_max, available: available.as_f64() });
    }
    Ok((1..=k_max).map(|k| grid.last_index_at_or_before(T::from_count(k))).collect())
}

/// `Σ_k 2^{-k} (1 ∧ q(k))` for one path.
pub(crate) fn dyadic_series<T: Real>(quantity: &[T], indices: &[usize]) -> T {
    indices.iter().enumerate().fold(T::zero(), |acc, (j, &idx)| {
        let w = T::lit(0.5f64.powi(j as i32 + 1));
        acc + w * T::one().min(quantity[idx])
    })
}

/// Monte Carlo estimate of `Σ_k 2^{-k} E[1 ∧ ‖F − H‖_{R(C)}(k)]`, the
/// distance on the integrand space. Each step contributes
/// `(θ^F_k − θ^H_k)ᵀ(ΔF_k − ΔH_k)`, infinite when either family leaves the
/// range of `ΔC_k`.
pub fn rc_metric<T: Real>(
    kernels: PerPath<'_, StochasticAggregateKernel<T>>,
    f: PerPath<'_, IncrementFamily<T>>,
    h: PerPath<'_, IncrementFamily<T>>,
    paths: usize,
    k_max: Option<usize>,
    tol: &Tolerances<T>,
) -> Result<McEstimate<T>> {
    kernels.check_paths(paths, "kernels")?;
    f.check_paths(paths, "F")?;
    h.check_paths(paths, "H")?;
    let indices = horizon_indices(kernels.get(0).grid(), k_max)?;
    let mut samples = Vec::with_capacity(paths);
    for p in 0..paths {
        let sak = kernels.get(p);
        let (fp, hp) = (f.get(p), h.get(p));
        sak.check_family(fp)?;
        sak.check_family(hp)?;
        let mut acc = T::zero();
        let mut quantity = Vec::with_capacity(sak.steps() + 1);
        quantity.push(acc);
        for k in 0..sak.steps() {
            if acc.is_finite() {
                acc = match (sak.step_solve(k, fp.step(k), tol), sak.step_solve(k, hp.step(k), tol)) {
                    (Some((tf, _)), Some((th, _))) => {
                        let q = tf
                            .iter()
                            .zip(&th)
                            .zip(fp.step(k).iter().zip(hp.step(k)))
                            .fold(T::zero(), |s, ((&a, &b), (&x, &y))| s + (a - b) * (x - y));
                        acc + q.max(T::zero())
                    }
                    _ => T::infinity(),
                };
            }
            quantity.push(acc.sqrt());
        }
        samples.push(dyadic_series(&quantity, &indices));
    }
    Ok(McEstimate::from_samples(&samples))
}

/// Monte Carlo estimate of `Σ_k 2^{-k} E[1 ∧ ∫_0^k |dB|]` over an ensemble of
/// scalar finite-variation paths sampled on `grid`.
pub fn fv_metric<T: Real>(grid: &TimeGrid<T>, paths: &[Vec<T>], k_max: Option<usize>) -> Result<McEstimate<T>> {
    let indices = horizon_indices(grid, k_max)?;
    let mut samples = Vec::with_capacity(paths.len());
    for b in paths {
        if b.len() != grid.steps() + 1 {
            return Err(Error::Dimension("path length differs from grid".into()));
        }
        let mut tv = Vec::with_capacity(b.len());
        let mut acc = T::zero();
        tv.push(acc);
        for w in b.windows(2) {
            acc += (w[1] - w[0]).abs();
            tv.push(acc);
        }
        samples.push(dyadic_series(&tv, &indices));
    }
    Ok(McEstimate::from_samples(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerances<f64> {
        Tolerances::default()
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i}")).collect()
    }

    #[test]
    fn realized_single_asset() {
        let grid = TimeGrid::new(vec![0.0, 1.0, 2.0]).unwrap();
        let sak = StochasticAggregateKernel::from_realized(grid, labels(1), &[vec![1.0], vec![-1.0]]).unwrap();
        assert_eq!(sak.increment(0).entries()[(0, 0)], 1.0);
        assert_eq!(sak.increment(1).entries()[(0, 0)], 1.0);
        assert_eq!(sak.aggregate(2)[(0, 0)], 2.0);
    }

    #[test]
    fn realized_identical_assets_are_rank_one() {
        let grid = TimeGrid::uniform(1.0, 3).unwrap();
        let dp = vec![vec![0.3, 0.3], vec![-0.1, -0.1], vec![0.7, 0.7]];
        let sak = StochasticAggregateKernel::from_realized(grid, labels(2), &dp).unwrap();
        assert!(sak.increments().iter().all(|c| c.rank() == 1));
    }

    #[test]
    fn model_kernel_examples() {
        let grid = TimeGrid::<f64>::uniform(1.0, 100).unwrap();
        let one = vec![Mat::from_rows(&[vec![1.0]]).unwrap(); 100];
        let sak = StochasticAggregateKernel::from_model(grid.clone(), labels(1), &one).unwrap();
        assert!((sak.increment(0).entries()[(0, 0)] - 0.01).abs() < 1e-15);
        // independent drivers: C_ii(t) = t
        let diag = vec![Mat::identity(2); 100];
        let sak = StochasticAggregateKernel::from_model(grid.clone(), labels(2), &diag).unwrap();
        let c = sak.aggregate(100);
        assert!((c[(0, 0)] - 1.0).abs() < 1e-12 && (c[(1, 1)] - 1.0).abs() < 1e-12 && c[(0, 1)] == 0.0);
        let shared = vec![Mat::from_rows(&[vec![1.0], vec![2.0]]).unwrap(); 100];
        let sak = StochasticAggregateKernel::from_model(grid, labels(2), &shared).unwrap();
        assert_eq!(sak.increment(5).rank(), 1);
    }

    #[test]
    fn norm_examples() {
        let grid = TimeGrid::uniform(2.0, 50).unwrap();
        let sak = StochasticAggregateKernel::from_model(grid.clone(), labels(1), &vec![Mat::identity(1); 50]).unwrap();
        let f = IncrementFamily::from_rate(labels(1), &grid, |_| vec![1.0]).unwrap();
        let n = sak.stoch_norm_sq(&f, &tol()).unwrap();
        assert!((n[50] - 2.0).abs() < 1e-12);
        assert!(n.windows(2).all(|w| w[0] <= w[1]));

        // ΔF = ΔC θ for fixed θ gives Σ θᵀ ΔC θ
        let sigma = Mat::from_rows(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let sak = StochasticAggregateKernel::from_model(grid.clone(), labels(2), &vec![sigma; 50]).unwrap();
        let theta = vec![vec![1.0, -2.0]; 50];
        let f = sak.apply(&theta).unwrap();
        let n = sak.stoch_norm_sq(&f, &tol()).unwrap();
        let expect: f64 = (0..50).map(|k| dot(&theta[k], &sak.increment(k).entries().mul_vec(&theta[k]))).sum();
        assert!((n[50] - expect).abs() < 1e-12 * expect);

        // one step outside the range: +∞ from there on
        let shared = Mat::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let sak = StochasticAggregateKernel::from_model(grid, labels(2), &vec![shared; 50]).unwrap();
        let mut inc = vec![vec![0.02, 0.02]; 50];
        inc[10] = vec![0.02, -0.02];
        let f = IncrementFamily::new(labels(2), inc).unwrap();
        let n = sak.stoch_norm_sq(&f, &tol()).unwrap();
        assert!(n[10].is_finite() && n[11..].iter().all(|x| x.is_infinite()));
    }

    #[test]
    fn integrand_examples() {
        let grid = TimeGrid::new(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let ones = Kernel::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let diag = Kernel::from_rows(&[vec![2.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let sak = StochasticAggregateKernel::new(grid, labels(2), vec![ones.clone(), ones, diag]).unwrap();
        let f = IncrementFamily::new(labels(2), vec![vec![1.0, 1.0], vec![0.0, 0.0], vec![3.0, 2.0]]).unwrap();
        let th = sak.integrand_path(&f, &tol()).unwrap();
        assert!((th[0][0] - 0.5).abs() < 1e-14 && (th[0][1] - 0.5).abs() < 1e-14);
        assert_eq!(th[1], vec![0.0, 0.0]);
        assert!((th[2][0] - 1.5).abs() < 1e-14 && (th[2][1] - 0.5).abs() < 1e-14);
        // regularized sequence with |dF| scaling approaches the limit
        let mut prev = f64::INFINITY;
        for e in 2..8 {
            let r = sak.regularized_integrand(0, f.step(0), 10f64.powi(e)).unwrap();
            let err = (r[0] - 0.5).abs();
            assert!(err < prev);
            prev = err;
        }
        assert!(prev < 1e-6);
        let bad = IncrementFamily::new(labels(2), vec![vec![1.0, -1.0], vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        assert!(matches!(sak.integrand_path(&bad, &tol()), Err(Error::NotInRc { step: 0, .. })));
    }

    #[test]
    fn pairing_examples() {
        let grid = TimeGrid::uniform(1.0, 20).unwrap();
        let sigma = Mat::from_rows(&[vec![1.0, 0.2], vec![0.3, 0.9]]).unwrap();
        let sak = StochasticAggregateKernel::from_model(grid, labels(2), &vec![sigma; 20]).unwrap();
        let f = sak.apply(&(0..20).map(|k| vec![1.0 + k as f64, -0.5]).collect::<Vec<_>>()).unwrap();
        let pair = sak.stoch_pairing(&f, &f, &tol()).unwrap();
        let norm = sak.stoch_norm_sq(&f, &tol()).unwrap();
        for (a, b) in pair.iter().zip(&norm) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b));
        }
        // reproducing: ⟨C_{I j}, F⟩ = F_j
        for j in 0..2 {
            let col = sak.column_family(j);
            let rep = sak.stoch_pairing(&col, &f, &tol()).unwrap();
            let fp = f.path();
            for m in 0..=20 {
                assert!((rep[m] - fp[m][j]).abs() <= 1e-10 * (1.0 + fp[m][j].abs()));
            }
        }
        // disjoint supports in time
        let mut a = vec![vec![0.0, 0.0]; 20];
        let mut b = vec![vec![0.0, 0.0]; 20];
        a[3] = sak.increment(3).column(0);
        b[7] = sak.increment(7).column(1);
        let a = IncrementFamily::new(labels(2), a).unwrap();
        let b = IncrementFamily::new(labels(2), b).unwrap();
        assert!(sak.stoch_pairing(&a, &b, &tol()).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn metric_examples() {
        let grid = TimeGrid::uniform(3.0, 30).unwrap();
        let sak = StochasticAggregateKernel::from_model(grid.clone(), labels(1), &vec![Mat::identity(1); 30]).unwrap();
        let f = IncrementFamily::from_rate(labels(1), &grid, |t| vec![t]).unwrap();
        let d = rc_metric(PerPath::Shared(&sak), PerPath::Shared(&f), PerPath::Shared(&f), 1, None, &tol()).unwrap();
        assert_eq!(d.mean, 0.0);

        // ∫_0^k |dB| = 2 for every k ≥ 1: B jumps by 2 on the first step
        let mut b = vec![0.0; 31];
        for x in b.iter_mut().skip(1) {
            *x = 2.0;
        }
        let m = fv_metric(&grid, &[b.clone()], None).unwrap();
        assert!((m.mean - (1.0 - 0.125)).abs() < 1e-15);
        let mut prev = 0.0;
        for lam in [0.0, 0.1, 0.3, 0.6, 1.0, 5.0] {
            let scaled: Vec<f64> = b.iter().map(|x| x * lam * 0.3).collect();
            let v = fv_metric(&grid, &[scaled], None).unwrap().mean;
            assert!(v >= prev);
            prev = v;
        }
        assert!(matches!(fv_metric(&grid, &[b], Some(4)), Err(Error::HorizonExceeded { .. })));
    }

    #[test]
    fn exhaustion_examples() {
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let sigma = Mat::diag(&[1.0, 2.0, 3.0]);
        let sak = StochasticAggregateKernel::from_model(grid.clone(), labels(3), &vec![sigma; 10]).unwrap();
        let chain = vec![vec![0], vec![0, 1], vec![0, 1, 2]];
        let supported = IncrementFamily::from_rate(labels(3), &grid, |_| vec![1.0, 0.0, 0.0]).unwrap();
        let p = sak.subset_sup_norm(&supported, &chain, &tol(), 1e-10).unwrap();
        for l in 1..3 {
            for (a, b) in p.levels[l].iter().zip(&p.levels[0]) {
                assert!((a - b).abs() < 1e-14);
            }
        }
        // rates (1,1,1) on diag(1,4,9) kernel rates: per unit time 1, 1 + 1/4, 1 + 1/4 + 1/9
        let spread = IncrementFamily::from_rate(labels(3), &grid, |_| vec![1.0, 1.0, 1.0]).unwrap();
        let p = sak.subset_sup_norm(&spread, &chain, &tol(), 1e-10).unwrap();
        let ends: Vec<f64> = p.levels.iter().map(|l| l[10]).collect();
        let expect = [1.0, 1.25, 1.25 + 1.0 / 9.0];
        for (a, b) in ends.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let full = sak.stoch_norm_sq(&spread, &tol()).unwrap();
        assert_eq!(p.final_level(), full.as_slice());
        assert!(sak.subset_sup_norm(&spread, &[vec![1], vec![0]], &tol(), 1e-10).is_err());
    }
}
