//! Reproducing kernel Hilbert space algebra over a finite index set.
//!
//! A [`Kernel`] is a symmetric positive semidefinite matrix `c` indexed by a
//! list of labels. Its rkHs is the range `R(c)` equipped with
//! `‖f‖²_c = θᵀ c θ = θᵀ f` for any `θ` with `c θ = f`; vectors outside the
//! range have infinite norm.
//!
//! Two independent routes compute the norm:
//!
//! * [`Kernel::spectral_norm`] diagonalises `c` and reads the norm off the
//!   retained eigenpairs, declaring `+∞` when `f` has a visible component in
//!   the numerical null space;
//! * [`Kernel::norm_via_limit`] evaluates `⟨(c + I/n)⁻¹ f, f⟩` along an
//!   increasing schedule of `n`. The profile is nondecreasing, converges to
//!   `‖f‖²_c` for `f ∈ R(c)` and grows linearly in `n` otherwise.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, symmetric_eigen, Mat};
use crate::scalar::{dot, norm2, Real};

/// Numerical thresholds turning the finite/infinite dichotomy into decisions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances<T> {
    /// Kernel validation: smallest eigenvalue must be `≥ -psd · λ_max`.
    pub psd: T,
    /// Null-space components above `membership · ‖f‖` mean `f ∉ R(c)`.
    pub membership: T,
    /// Growth factor between the last two schedule levels that signals
    /// divergence of the regularized profile.
    pub divergence_ratio: T,
    /// Relative change between the last two levels accepted as convergence.
    pub convergence: T,
}

impl<T: Real> Default for Tolerances<T> {
    fn default() -> Self {
        Self {
            psd: T::lit(1e-10).max(T::epsilon() * T::lit(1e3)),
            membership: T::lit(1e-8).max(T::epsilon() * T::lit(1e2)),
            divergence_ratio: T::lit(1.5),
            convergence: T::lit(1e-6),
        }
    }
}

/// Eigendecomposition with the numerical rank decided once.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition<T> {
    /// Nonincreasing.
    pub eigenvalues: Vec<T>,
    /// Column `j` pairs with `eigenvalues[j]`.
    pub eigenvectors: Mat<T>,
    /// Eigenvalues `≤ rank_threshold` count as exactly zero.
    pub rank_threshold: T,
}

impl<T: Real> SpectralDecomposition<T> {
    pub fn of(entries: &Mat<T>) -> Self {
        let eig = symmetric_eigen(entries);
        let n = entries.rows();
        let lambda_max = eig.values.first().copied().unwrap_or_else(T::zero).max(T::zero());
        let rank_threshold = T::from_count(n.max(1)) * T::epsilon() * lambda_max;
        Self { eigenvalues: eig.values, eigenvectors: eig.vectors, rank_threshold }
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    #[inline]
    pub fn is_retained(&self, j: usize) -> bool {
        let l = self.eigenvalues[j];
        l > self.rank_threshold && l > T::zero()
    }

    pub fn rank(&self) -> usize {
        (0..self.dim()).filter(|&j| self.is_retained(j)).count()
    }

    /// Coordinates `⟨u_j, f⟩`.
    pub fn coordinates(&self, f: &[T]) -> Vec<T> {
        let n = self.dim();
        (0..n)
            .map(|j| (0..n).fold(T::zero(), |acc, i| acc + self.eigenvectors[(i, j)] * f[i]))
            .collect()
    }

    /// Norm of the component of `f` lying in the numerical null space.
    pub fn null_component(&self, f: &[T]) -> T {
        let coords = self.coordinates(f);
        coords
            .iter()
            .enumerate()
            .filter(|&(j, _)| !self.is_retained(j))
            .fold(T::zero(), |acc, (_, &x)| acc + x * x)
            .sqrt()
    }

    /// `UᵀDU` reconstruction, retained modes only.
    pub fn reconstruct(&self) -> Mat<T> {
        let n = self.dim();
        Mat::from_fn(n, n, |r, c| {
            (0..n)
                .filter(|&j| self.is_retained(j))
                .fold(T::zero(), |acc, j| {
                    acc + self.eigenvectors[(r, j)] * self.eigenvalues[j] * self.eigenvectors[(c, j)]
                })
        })
    }

    /// Minimum-norm `θ` with `c θ = f` on the retained modes, together with
    /// `θᵀ f`, or `None` when `f` leaves the range.
    pub fn solve(&self, f: &[T], membership: T) -> Option<(Vec<T>, T)> {
        let n = self.dim();
        let coords = self.coordinates(f);
        let fnorm = norm2(f);
        let mut null_sq = T::zero();
        let mut value = T::zero();
        let mut theta = vec![T::zero(); n];
        for j in 0..n {
            let a = coords[j];
            if self.is_retained(j) {
                let w = a / self.eigenvalues[j];
                value += a * w;
                for (i, t) in theta.iter_mut().enumerate() {
                    *t += w * self.eigenvectors[(i, j)];
                }
            } else {
                null_sq += a * a;
            }
        }
        if null_sq.sqrt() > membership * fnorm {
            None
        } else {
            Some((theta, value))
        }
    }
}

/// Evidence collected while deciding a norm.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NormDiagnostics<T> {
    /// Regularization levels `n` visited (limit route only).
    pub levels: Vec<T>,
    /// `⟨θ^{f;n}, f⟩` at each level.
    pub profile: Vec<T>,
    /// Ratios of successive profile values.
    pub growth_ratios: Vec<T>,
    /// Norm of the null-space component of `f` (spectral route only).
    pub null_component: T,
}

/// A norm that may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct NormResult<T> {
    /// `‖f‖_c`, `+∞` when `f ∉ R(c)`.
    pub value: T,
    /// Representing coefficients `θ^f` when the norm is finite.
    pub coefficients: Option<Vec<T>>,
    pub diagnostics: NormDiagnostics<T>,
}

impl<T: Real> NormResult<T> {
    pub fn is_finite(&self) -> bool {
        self.value.is_finite()
    }

    pub fn squared(&self) -> T {
        self.value * self.value
    }
}

/// Increasing regularization levels for [`Kernel::norm_via_limit`].
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule<T> {
    pub levels: Vec<T>,
}

impl<T: Real> Schedule<T> {
    /// `10^lo, 10^(lo+1), …, 10^hi`.
    pub fn decades(lo: i32, hi: i32) -> Self {
        Self { levels: (lo..=hi).map(|e| T::lit(10f64.powi(e))).collect() }
    }
}

impl<T: Real> Default for Schedule<T> {
    fn default() -> Self {
        Self::decades(0, 12)
    }
}

/// Symmetric positive semidefinite matrix over labelled indices.
#[derive(Debug, Clone)]
pub struct Kernel<T> {
    labels: Vec<String>,
    entries: Mat<T>,
    spectral: OnceLock<SpectralDecomposition<T>>,
}

impl<T: PartialEq> PartialEq for Kernel<T> {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.entries == other.entries
    }
}

fn default_labels(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

impl<T: Real> Kernel<T> {
    /// Checks squareness, distinct labels, exact symmetry and positive
    /// semidefiniteness up to `tol.psd`.
    pub fn validate(entries: Mat<T>, labels: Vec<String>, tol: &Tolerances<T>) -> Result<Self> {
        if !entries.is_square() {
            return Err(Error::Dimension(format!(
                "kernel matrix is {}x{}",
                entries.rows(),
                entries.cols()
            )));
        }
        if labels.len() != entries.rows() {
            return Err(Error::Dimension(format!(
                "{} labels for a {}-dimensional kernel",
                labels.len(),
                entries.rows()
            )));
        }
        let mut sorted = labels.clone();
        sorted.sort();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidInput("kernel labels must be distinct".into()));
        }
        if !entries.is_finite() {
            return Err(Error::InvalidInput("kernel entries must be finite".into()));
        }
        let n = entries.rows();
        for i in 0..n {
            for j in (i + 1)..n {
                if entries[(i, j)] != entries[(j, i)] {
                    return Err(Error::Asymmetric { row: i, col: j });
                }
            }
        }
        let kernel = Self::new_unchecked(entries, labels);
        let spec = kernel.spectral();
        if let (Some(&max), Some(&min)) = (spec.eigenvalues.first(), spec.eigenvalues.last()) {
            if min < -tol.psd * max.max(T::zero()) || (max <= T::zero() && min < T::zero()) {
                return Err(Error::NotPsd { min_eigenvalue: min.as_f64(), max_eigenvalue: max.as_f64() });
            }
        }
        Ok(kernel)
    }

    /// Validates with default tolerances and labels `0..n`.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let m = Mat::from_rows(rows)?;
        let labels = default_labels(m.rows());
        Self::validate(m, labels, &Tolerances::default())
    }

    /// Wraps a matrix known to be symmetric PSD by construction (Gram
    /// matrices, outer products).
    pub fn new_unchecked(entries: Mat<T>, labels: Vec<String>) -> Self {
        debug_assert!(entries.is_square() && labels.len() == entries.rows());
        Self { labels, entries, spectral: OnceLock::new() }
    }

    /// `v vᵀ` with default labels.
    pub fn rank_one(v: &[T]) -> Self {
        Self::new_unchecked(Mat::outer(v), default_labels(v.len()))
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.dim() {
            return Err(Error::Dimension("label count".into()));
        }
        self.labels = labels;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn entries(&self) -> &Mat<T> {
        &self.entries
    }

    /// Column `c_{I i}`.
    pub fn column(&self, i: usize) -> Vec<T> {
        self.entries.column(i)
    }

    /// Positions of the given labels.
    pub fn indices_of(&self, labels: &[&str]) -> Result<Vec<usize>> {
        labels
            .iter()
            .map(|l| {
                self.labels
                    .iter()
                    .position(|x| x == l)
                    .ok_or_else(|| Error::InvalidInput(format!("unknown label {l}")))
            })
            .collect()
    }

    pub fn spectral(&self) -> &SpectralDecomposition<T> {
        self.spectral.get_or_init(|| SpectralDecomposition::of(&self.entries))
    }

    pub fn rank(&self) -> usize {
        self.spectral().rank()
    }

    /// Restriction `c_JJ` to a subset of indices.
    pub fn restrict(&self, subset: &[usize]) -> Self {
        let labels = subset.iter().map(|&i| self.labels[i].clone()).collect();
        Self::new_unchecked(self.entries.select(subset, subset), labels)
    }

    fn check_len(&self, f: &[T]) -> Result<()> {
        if f.len() != self.dim() {
            return Err(Error::Dimension(format!("vector of length {} against kernel of dimension {}", f.len(), self.dim())));
        }
        Ok(())
    }

    /// `‖f‖_c` from the eigendecomposition.
    pub fn spectral_norm(&self, f: &[T], tol: &Tolerances<T>) -> Result<NormResult<T>> {
        self.check_len(f)?;
        let spec = self.spectral();
        let diagnostics = NormDiagnostics { null_component: spec.null_component(f), ..Default::default() };
        Ok(match spec.solve(f, tol.membership) {
            Some((theta, sq)) => NormResult { value: sq.max(T::zero()).sqrt(), coefficients: Some(theta), diagnostics },
            None => NormResult { value: T::infinity(), coefficients: None, diagnostics },
        })
    }

    /// `θ^{f;n} = (c + I/n)⁻¹ f`.
    pub fn regularized_coefficients(&self, f: &[T], n: T) -> Result<Vec<T>> {
        self.check_len(f)?;
        if !(n > T::zero()) {
            return Err(Error::InvalidInput("regularization level must be positive".into()));
        }
        let l = cholesky(&self.entries.add_diagonal(T::one() / n))?;
        let theta = cholesky_solve(&l, f);
        if theta.iter().any(|x| !x.is_finite()) {
            return Err(Error::SolveFailed("non-finite regularized solution".into()));
        }
        Ok(theta)
    }

    /// `‖f‖_c` as the monotone limit of `⟨θ^{f;n}, f⟩` along `schedule`.
    pub fn norm_via_limit(&self, f: &[T], schedule: &Schedule<T>, tol: &Tolerances<T>) -> Result<NormResult<T>> {
        self.check_len(f)?;
        if schedule.levels.len() < 2 || schedule.levels.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidInput("schedule must hold at least two increasing levels".into()));
        }
        let mut diagnostics = NormDiagnostics { levels: schedule.levels.clone(), ..Default::default() };
        let mut last_theta = Vec::new();
        for &n in &schedule.levels {
            let theta = self.regularized_coefficients(f, n)?;
            diagnostics.profile.push(dot(&theta, f).max(T::zero()));
            last_theta = theta;
        }
        diagnostics.growth_ratios = diagnostics
            .profile
            .windows(2)
            .map(|w| if w[0] > T::zero() { w[1] / w[0] } else if w[1] > T::zero() { T::infinity() } else { T::one() })
            .collect();
        let k = diagnostics.profile.len();
        let (prev, last) = (diagnostics.profile[k - 2], diagnostics.profile[k - 1]);
        let ratio = diagnostics.growth_ratios[k - 2];
        if last == T::zero() {
            return Ok(NormResult { value: T::zero(), coefficients: Some(last_theta), diagnostics });
        }
        if ratio > tol.divergence_ratio {
            return Ok(NormResult { value: T::infinity(), coefficients: None, diagnostics });
        }
        let change = (last - prev).abs() / last;
        if change <= tol.convergence {
            return Ok(NormResult { value: last.sqrt(), coefficients: Some(last_theta), diagnostics });
        }
        Err(Error::Inconclusive { last_ratio: ratio.as_f64(), relative_change: change.as_f64() })
    }

    /// `⟨f, g⟩_c = θ_fᵀ g`; both arguments must lie in `R(c)`.
    pub fn inner_product(&self, f: &[T], g: &[T], tol: &Tolerances<T>) -> Result<T> {
        self.check_len(f)?;
        self.check_len(g)?;
        let spec = self.spectral();
        let (theta_f, _) = spec.solve(f, tol.membership).ok_or(Error::NotInRkhs)?;
        spec.solve(g, tol.membership).ok_or(Error::NotInRkhs)?;
        Ok(dot(&theta_f, g))
    }

    /// Minimum-norm element `h = Σ_{j∈J} θ_j c_{Ij}` agreeing with `f` on
    /// `subset`.
    pub fn project(&self, f: &[T], subset: &[usize], tol: &Tolerances<T>) -> Result<Vec<T>> {
        self.check_len(f)?;
        self.check_subset(subset)?;
        self.spectral().solve(f, tol.membership).ok_or(Error::NotInRkhs)?;
        let restricted = self.restrict(subset);
        let f_j: Vec<T> = subset.iter().map(|&i| f[i]).collect();
        // f ∈ R(c) implies f_J ∈ R(c_JJ); the threshold only absorbs round-off.
        let (theta, _) = restricted
            .spectral()
            .solve(&f_j, tol.membership.max(T::lit(1e-6)))
            .ok_or(Error::NotInRkhs)?;
        Ok((0..self.dim())
            .map(|i| subset.iter().zip(&theta).fold(T::zero(), |acc, (&j, &t)| acc + self.entries[(i, j)] * t))
            .collect())
    }

    fn check_subset(&self, subset: &[usize]) -> Result<()> {
        if subset.is_empty() {
            return Err(Error::InvalidInput("subset must be nonempty".into()));
        }
        let mut s = subset.to_vec();
        s.sort_unstable();
        if s.windows(2).any(|w| w[0] == w[1]) || s.last().is_some_and(|&i| i >= self.dim()) {
            return Err(Error::InvalidInput("subset indices must be distinct and in range".into()));
        }
        Ok(())
    }

    /// Restriction norms `‖f_J‖_{c_JJ}` along a nested chain of subsets.
    pub fn subset_norm_profile(&self, f: &[T], chain: &[Vec<usize>], tol: &Tolerances<T>) -> Result<Vec<T>> {
        self.check_len(f)?;
        for (k, subset) in chain.iter().enumerate() {
            self.check_subset(subset)?;
            if k > 0 && !chain[k - 1].iter().all(|i| subset.contains(i)) {
                return Err(Error::InvalidInput(format!("subset {k} does not contain subset {}", k - 1)));
            }
        }
        chain
            .iter()
            .map(|subset| {
                let f_j: Vec<T> = subset.iter().map(|&i| f[i]).collect();
                Ok(self.restrict(subset).spectral_norm(&f_j, tol)?.value)
            })
            .collect()
    }
}
