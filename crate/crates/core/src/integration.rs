//! Stochastic integrals `X^F` of integrand families `F ∈ R(C)`, the map back
//! to covariations with the assets, and the checks tying the two together.
//!
//! On a grid the integral of `F` is `ΔX_k = (θ^F_k)ᵀ ΔP_k`, where `θ^F_k`
//! represents `ΔF_k` under `ΔC_k`. Splitting `ΔP = ΔA + ΔM` splits `X` into
//! its finite-variation and local-martingale parts. With realized kernels
//! `ΔC_k = ΔP_k ΔP_kᵀ` the isometry `[X, X] = ∫‖dF‖²_{dC}` and the round
//! trip `F ↦ X^F ↦ [X^F, P]` hold step by step up to rounding.

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rkhs::Tolerances;
use crate::scalar::{dot, Real};
use crate::simulation::{PathEnsemble, SemimartingaleModel};
use crate::stats::McEstimate;
use crate::stoch_kernel::{dyadic_series, horizon_indices, rc_metric, IncrementFamily, PerPath, StochasticAggregateKernel};

/// Integral paths, one row per ensemble path.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegralResult<T> {
    /// `X = fv_part + mart_part`, starting at 0.
    pub x: Vec<Vec<T>>,
    /// `Σ ⟨θ^F, ΔA⟩`; empty when no decomposition is known.
    pub fv_part: Vec<Vec<T>>,
    /// `Σ ⟨θ^F, ΔM⟩`; empty when no decomposition is known.
    pub mart_part: Vec<Vec<T>>,
    /// Largest `|[X, X](t) − ∫_0^t ‖dF‖²_{dC}|` over paths and grid points.
    pub isometry_residual: T,
}

impl<T: Real> IntegralResult<T> {
    /// Wraps bare paths without a drift/martingale split.
    pub fn from_values(x: Vec<Vec<T>>) -> Self {
        Self { x, fv_part: Vec::new(), mart_part: Vec::new(), isometry_residual: T::nan() }
    }

    pub fn has_decomposition(&self) -> bool {
        !self.fv_part.is_empty() && self.fv_part.len() == self.x.len() && self.mart_part.len() == self.x.len()
    }

    pub fn terminal(&self, path: usize) -> T {
        let x = &self.x[path];
        x[x.len() - 1]
    }
}

fn realized_qv<T: Real>(x: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    let mut acc = T::zero();
    out.push(acc);
    for w in x.windows(2) {
        let d = w[1] - w[0];
        acc += d * d;
        out.push(acc);
    }
    out
}

/// Integrates `F` against the ensemble. Kernels and families may be shared
/// (model kernels) or given per path (realized kernels).
pub fn integrate<T: Real>(
    kernels: PerPath<'_, StochasticAggregateKernel<T>>,
    f: PerPath<'_, IncrementFamily<T>>,
    ensemble: &PathEnsemble<T>,
    tol: &Tolerances<T>,
) -> Result<IntegralResult<T>> {
    let n = ensemble.len();
    kernels.check_paths(n, "kernels")?;
    f.check_paths(n, "F")?;
    // shared kernel and family: solve each step once
    let shared_thetas = match (kernels, f) {
        (PerPath::Shared(sak), PerPath::Shared(fam)) => Some(sak.integrand_path(fam, tol)?),
        _ => None,
    };
    let mut result = IntegralResult {
        x: Vec::with_capacity(n),
        fv_part: Vec::with_capacity(n),
        mart_part: Vec::with_capacity(n),
        isometry_residual: T::zero(),
    };
    for p in 0..n {
        let (sak, fam) = (kernels.get(p), f.get(p));
        if sak.steps() != ensemble.grid().steps() || sak.dim() != ensemble.dim() {
            return Err(Error::Dimension("kernel is not conformable with the ensemble".into()));
        }
        let thetas = match &shared_thetas {
            Some(t) => t.clone(),
            None => sak.integrand_path(fam, tol).map_err(|e| match e {
                Error::NotInRc { step, .. } => Error::NotInRc { step, path: Some(p) },
                other => other,
            })?,
        };
        let path = ensemble.path(p);
        let (da, dm) = (path.drift_increments(), path.martingale_increments());
        let steps = thetas.len();
        let (mut x, mut fv, mut mart) = (vec![T::zero()], vec![T::zero()], vec![T::zero()]);
        for k in 0..steps {
            let dfv = dot(&thetas[k], &da[k]);
            let dmart = dot(&thetas[k], &dm[k]);
            fv.push(fv[k] + dfv);
            mart.push(mart[k] + dmart);
            x.push(fv[k + 1] + mart[k + 1]);
        }
        let norm = sak.stoch_norm_sq(fam, tol)?;
        let resid = isometry_gap(&x, &norm);
        result.isometry_residual = result.isometry_residual.max(resid);
        result.x.push(x);
        result.fv_part.push(fv);
        result.mart_part.push(mart);
    }
    Ok(result)
}

fn isometry_gap<T: Real>(x: &[T], norm: &[T]) -> T {
    realized_qv(x).iter().zip(norm).fold(T::zero(), |m, (&q, &c)| m.max((q - c).abs()))
}

/// `max_t |[X, X](t) − ∫_0^t ‖dF‖²_{dC}|` for one path.
pub fn isometry_residual<T: Real>(
    x: &[T],
    sak: &StochasticAggregateKernel<T>,
    f: &IncrementFamily<T>,
    tol: &Tolerances<T>,
) -> Result<T> {
    if x.len() != sak.steps() + 1 {
        return Err(Error::Dimension("integral path length differs from grid".into()));
    }
    Ok(isometry_gap(x, &sak.stoch_norm_sq(f, tol)?))
}

/// Realized quadratic variation `[X, X]` along one path.
pub fn quadratic_variation<T: Real>(x: &[T]) -> Vec<T> {
    realized_qv(x)
}

/// `ΔF_{k,i} = ΔX_k ΔP_{k,i}`: the realized covariation of `X` with the
/// assets, one family per path.
pub fn covariation_with_assets<T: Real>(x: &[Vec<T>], ensemble: &PathEnsemble<T>) -> Result<Vec<IncrementFamily<T>>> {
    if x.len() != ensemble.len() {
        return Err(Error::Dimension("one integral path per ensemble path expected".into()));
    }
    x.iter()
        .zip(ensemble.paths())
        .map(|(xp, path)| {
            if xp.len() != path.p.len() {
                return Err(Error::Dimension("integral path length differs from grid".into()));
            }
            let inc = path
                .price_increments()
                .iter()
                .zip(xp.windows(2))
                .map(|(dp, w)| {
                    let dx = w[1] - w[0];
                    dp.iter().map(|&v| dx * v).collect()
                })
                .collect();
            IncrementFamily::new(ensemble.labels().to_vec(), inc)
        })
        .collect()
}

/// PASS/FAIL outcome of a diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn is_pass(self) -> bool {
        self == Verdict::Pass
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
        })
    }
}

/// `∫_0^T ‖dA‖²_{dC}` at one refinement level.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementLevel<T> {
    pub steps: usize,
    pub mean_dt: T,
    pub value: T,
}

/// Refinement study of the drift norm under the model kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct StructuralReport<T> {
    pub levels: Vec<RefinementLevel<T>>,
    /// Growth exponent `e` in `value ∝ Δt^{-e}`, from least squares on
    /// `log value` against `log Δt`; `None` when some level is infinite.
    pub exponent: Option<T>,
    pub verdict: Verdict,
}

/// Least-squares slope of `ys` on `xs`.
pub(crate) fn ls_slope<T: Real>(xs: &[T], ys: &[T]) -> T {
    let n = T::from_count(xs.len());
    let mx = xs.iter().copied().sum::<T>() / n;
    let my = ys.iter().copied().sum::<T>() / n;
    let sxy = xs.iter().zip(ys).fold(T::zero(), |acc, (&x, &y)| acc + (x - mx) * (y - my));
    let sxx = xs.iter().fold(T::zero(), |acc, &x| acc + (x - mx) * (x - mx));
    sxy / sxx
}

/// Evaluates `∫_0^T ‖dA‖²_{dC}` for the model drift on `base` refined
/// dyadically `levels` times. A bounded sequence (exponent within
/// `exponent_tol` of zero) passes; growth under refinement or an infinite
/// value fails.
pub fn structural_condition_report<T: Real>(
    model: &SemimartingaleModel<T>,
    base: &TimeGrid<T>,
    levels: usize,
    exponent_tol: T,
    tol: &Tolerances<T>,
) -> Result<StructuralReport<T>> {
    if levels < 2 {
        return Err(Error::InvalidInput("structural report needs at least two refinement levels".into()));
    }
    let mut out = Vec::with_capacity(levels);
    let mut grid = base.clone();
    for l in 0..levels {
        if l > 0 {
            grid = grid.refine(2)?;
        }
        let sak = model.model_kernel(&grid)?;
        let drift = model.drift_family(&grid)?;
        let norm = sak.stoch_norm_sq(&drift, tol)?;
        out.push(RefinementLevel {
            steps: grid.steps(),
            mean_dt: grid.horizon() / T::from_count(grid.steps()),
            value: norm[norm.len() - 1],
        });
    }
    if out.iter().any(|l| !l.value.is_finite()) {
        return Ok(StructuralReport { levels: out, exponent: None, verdict: Verdict::Fail });
    }
    let tiny = T::min_positive_value();
    let exponent = if out.iter().all(|l| l.value <= tiny) {
        T::zero()
    } else {
        let xs: Vec<T> = out.iter().map(|l| l.mean_dt.ln()).collect();
        let ys: Vec<T> = out.iter().map(|l| l.value.max(tiny).ln()).collect();
        -ls_slope(&xs, &ys)
    };
    let verdict = Verdict::from_bool(exponent.abs() <= exponent_tol);
    Ok(StructuralReport { levels: out, exponent: Some(exponent), verdict })
}

/// Distances between `F` and `[X^F, P]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrip<T> {
    /// `R(C)` distance between `F` and its round trip.
    pub rc_distance: McEstimate<T>,
    /// `E[max_t ‖F(t) − [X^F, P](t)‖²]`, which shrinks linearly in `Δt`
    /// for model kernels.
    pub uniform_mean_square: McEstimate<T>,
    /// Recovered families, one per path.
    pub recovered: Vec<IncrementFamily<T>>,
}

/// Integrates `F`, maps the integral back to covariations with the assets
/// and measures the discrepancy.
pub fn roundtrip_residual<T: Real>(
    kernels: PerPath<'_, StochasticAggregateKernel<T>>,
    f: PerPath<'_, IncrementFamily<T>>,
    ensemble: &PathEnsemble<T>,
    tol: &Tolerances<T>,
) -> Result<RoundTrip<T>> {
    let integral = integrate(kernels, f, ensemble, tol)?;
    let recovered = covariation_with_assets(&integral.x, ensemble)?;
    let n = ensemble.len();
    let rc_distance = rc_metric(kernels, f, PerPath::Each(&recovered), n, None, tol)?;
    let samples: Vec<T> = (0..n)
        .map(|p| {
            let (a, b) = (f.get(p).path(), recovered[p].path());
            a.iter().zip(&b).fold(T::zero(), |m, (u, v)| {
                m.max(u.iter().zip(v).fold(T::zero(), |s, (&x, &y)| s + (x - y) * (x - y)))
            })
        })
        .collect();
    Ok(RoundTrip { rc_distance, uniform_mean_square: McEstimate::from_samples(&samples), recovered })
}

/// Distance between two integrals in the semimartingale topology:
/// `Σ 2^{-k} E[1 ∧ ∫_0^k |d(B_Z − B_X)|] + Σ 2^{-k} E[1 ∧ [L_Z − L_X](k)^{1/2}]`
/// with `B` the finite-variation and `L` the martingale parts.
pub fn cs_metric<T: Real>(
    x: &IntegralResult<T>,
    z: &IntegralResult<T>,
    grid: &TimeGrid<T>,
    k_max: Option<usize>,
) -> Result<McEstimate<T>> {
    if !x.has_decomposition() || !z.has_decomposition() {
        return Err(Error::MissingDecomposition);
    }
    if x.x.len() != z.x.len() {
        return Err(Error::Dimension("integrals carry different path counts".into()));
    }
    let indices = horizon_indices(grid, k_max)?;
    let samples: Vec<T> = (0..x.x.len())
        .map(|p| {
            let db: Vec<T> = z.fv_part[p].iter().zip(&x.fv_part[p]).map(|(&a, &b)| a - b).collect();
            let dl: Vec<T> = z.mart_part[p].iter().zip(&x.mart_part[p]).map(|(&a, &b)| a - b).collect();
            let mut tv = vec![T::zero()];
            for w in db.windows(2) {
                let last = tv[tv.len() - 1];
                tv.push(last + (w[1] - w[0]).abs());
            }
            let qv: Vec<T> = realized_qv(&dl).into_iter().map(|q| q.sqrt()).collect();
            dyadic_series(&tv, &indices) + dyadic_series(&qv, &indices)
        })
        .collect();
    Ok(McEstimate::from_samples(&samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Mat;
    use crate::simulation::{realized_covariation, simulate_ensemble, Drift};
    use std::sync::Arc;

    fn tol() -> Tolerances<f64> {
        Tolerances::default()
    }

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("a{i}")).collect()
    }

    fn two_asset_model() -> SemimartingaleModel<f64> {
        let sigma = Mat::from_rows(&[vec![0.3, 0.1], vec![-0.1, 0.25]]).unwrap();
        SemimartingaleModel::constant(labels(2), vec![1.0, 2.0], vec![0.04, 0.02], sigma).unwrap()
    }

    #[test]
    fn column_family_integrates_to_price() {
        let model = two_asset_model();
        let grid = TimeGrid::uniform(1.0, 40).unwrap();
        let ens = simulate_ensemble(&model, &grid, 5, 1).unwrap();
        let kernels = realized_covariation(&ens).unwrap();
        for j in 0..2 {
            let cols: Vec<_> = kernels.iter().map(|k| k.column_family(j)).collect();
            let r = integrate(PerPath::Each(&kernels), PerPath::Each(&cols), &ens, &tol()).unwrap();
            for (p, x) in r.x.iter().enumerate() {
                let path = ens.path(p);
                for k in 0..=40 {
                    let expect = path.p[k][j] - path.p[0][j];
                    assert!((x[k] - expect).abs() < 1e-12, "{} vs {}", x[k], expect);
                }
            }
        }
        // the same under the model kernel
        let sak = model.model_kernel(&grid).unwrap();
        let col = sak.column_family(1);
        let r = integrate(PerPath::Shared(&sak), PerPath::Shared(&col), &ens, &tol()).unwrap();
        for (p, x) in r.x.iter().enumerate() {
            assert!((x[40] - (ens.path(p).p[40][1] - 2.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_family_integrates_to_zero() {
        let model = two_asset_model();
        let grid = TimeGrid::uniform(1.0, 10).unwrap();
        let ens = simulate_ensemble(&model, &grid, 3, 2).unwrap();
        let sak = model.model_kernel(&grid).unwrap();
        let zero = IncrementFamily::zeros(labels(2), 10);
        let r = integrate(PerPath::Shared(&sak), PerPath::Shared(&zero), &ens, &tol()).unwrap();
        assert!(r.x.iter().flatten().all(|&v| v == 0.0));
        assert_eq!(r.isometry_residual, 0.0);
        assert_eq!(isometry_residual(&r.x[0], &sak, &zero, &tol()).unwrap(), 0.0);
    }

    #[test]
    fn constant_integrand_matches_direct_sum() {
        let model = two_asset_model();
        let grid = TimeGrid::uniform(1.0, 25).unwrap();
        let ens = simulate_ensemble(&model, &grid, 4, 3).unwrap();
        let sak = model.model_kernel(&grid).unwrap();
        let theta = vec![0.7, -1.3];
        let f = sak.apply(&vec![theta.clone(); 25]).unwrap();
        let r = integrate(PerPath::Shared(&sak), PerPath::Shared(&f), &ens, &tol()).unwrap();
        for (p, x) in r.x.iter().enumerate() {
            let mut direct = 0.0;
            for (k, dp) in ens.path(p).price_increments().iter().enumerate() {
                direct += theta[0] * dp[0] + theta[1] * dp[1];
                assert!((x[k + 1] - direct).abs() < 1e-12);
            }
            for k in 0..=25 {
                assert_eq!(x[k], r.fv_part[p][k] + r.mart_part[p][k]);
            }
        }
    }

    #[test]
    fn covariation_examples() {
        let model = two_asset_model();
        let grid = TimeGrid::uniform(1.0, 12).unwrap();
        let ens = simulate_ensemble(&model, &grid, 2, 4).unwrap();
        let kernels = realized_covariation(&ens).unwrap();
        let xs: Vec<Vec<f64>> = ens.paths().iter().map(|p| p.p.iter().map(|r| r[0] - p.p[0][0]).collect()).collect();
        let fams = covariation_with_assets(&xs, &ens).unwrap();
        for (fam, sak) in fams.iter().zip(&kernels) {
            let col = sak.column_family(0);
            for k in 0..12 {
                for i in 0..2 {
                    assert!((fam.step(k)[i] - col.step(k)[i]).abs() < 1e-15);
                }
            }
        }
        let consts = vec![vec![3.0; 13]; 2];
        let fams = covariation_with_assets(&consts, &ens).unwrap();
        assert!(fams.iter().all(|f| f.increments().iter().flatten().all(|&x| x == 0.0)));
    }

    #[test]
    fn realized_isometry_and_roundtrip_are_exact() {
        let model = two_asset_model();
        let grid = TimeGrid::uniform(1.0, 60).unwrap();
        let ens = simulate_ensemble(&model, &grid, 6, 5).unwrap();
        let kernels = realized_covariation(&ens).unwrap();
        let fams: Vec<_> = kernels
            .iter()
            .map(|sak| sak.apply(&(0..60).map(|k| vec![(k as f64 * 0.1).sin(), 1.5]).collect::<Vec<_>>()).unwrap())
            .collect();
        let r = integrate(PerPath::Each(&kernels), PerPath::Each(&fams), &ens, &tol()).unwrap();
        for p in 0..6 {
            let qv = quadratic_variation(&r.x[p]);
            let res = isometry_residual(&r.x[p], &kernels[p], &fams[p], &tol()).unwrap();
            assert!(res <= 1e-10 * (1.0 + qv[60]), "{res}");
        }
        let rt = roundtrip_residual(PerPath::Each(&kernels), PerPath::Each(&fams), &ens, &tol()).unwrap();
        assert!(rt.rc_distance.mean <= 1e-10, "{:?}", rt.rc_distance);
    }

    #[test]
    fn linearity() {
        let model = two_asset_model();
        let grid = TimeGrid::uniform(1.0, 30).unwrap();
        let ens = simulate_ensemble(&model, &grid, 3, 6).unwrap();
        let sak = model.model_kernel(&grid).unwrap();
        let f = sak.apply(&vec![vec![1.0, 0.5]; 30]).unwrap();
        let h = sak.apply(&(0..30).map(|k| vec![-0.2 * k as f64, 2.0]).collect::<Vec<_>>()).unwrap();
        let (a, b) = (1.7, -0.4);
        let comb = f.combine(a, &h, b).unwrap();
        let rf = integrate(PerPath::Shared(&sak), PerPath::Shared(&f), &ens, &tol()).unwrap();
        let rh = integrate(PerPath::Shared(&sak), PerPath::Shared(&h), &ens, &tol()).unwrap();
        let rc = integrate(PerPath::Shared(&sak), PerPath::Shared(&comb), &ens, &tol()).unwrap();
        for p in 0..3 {
            for k in 0..=30 {
                let lin = a * rf.x[p][k] + b * rh.x[p][k];
                assert!((rc.x[p][k] - lin).abs() <= 1e-12 * (1.0 + lin.abs()));
            }
        }
    }

    #[test]
    fn structural_condition_examples() {
        let base = TimeGrid::uniform(1.0, 64).unwrap();
        // a = σ λ: bounded, level independent
        let sigma = 0.4;
        let lambda = 0.5;
        let model =
            SemimartingaleModel::constant(labels(1), vec![1.0], vec![sigma * lambda], Mat::from_rows(&[vec![sigma]]).unwrap()).unwrap();
        let rep = structural_condition_report(&model, &base, 4, 0.05, &tol()).unwrap();
        assert_eq!(rep.verdict, Verdict::Pass);
        for l in &rep.levels {
            assert!((l.value - lambda * lambda).abs() < 1e-12);
        }
        // A(t) = 3 t^{1/3}, σ = 1
        let model = SemimartingaleModel::new(
            labels(1),
            vec![0.0],
            1,
            Drift::Cumulative(Arc::new(|t: f64| vec![3.0 * t.cbrt()])),
            |_| Mat::identity(1),
        )
        .unwrap();
        let rep = structural_condition_report(&model, &base, 4, 0.05, &tol()).unwrap();
        assert_eq!(rep.verdict, Verdict::Fail);
        let e = rep.exponent.unwrap();
        assert!((e - 1.0 / 3.0).abs() < 0.1, "{e}");
        // σ = 0 with drift: infinite at every level
        let model = SemimartingaleModel::constant(labels(1), vec![1.0], vec![0.1], Mat::zeros(1, 1)).unwrap();
        let rep = structural_condition_report(&model, &base, 2, 0.05, &tol()).unwrap();
        assert_eq!(rep.verdict, Verdict::Fail);
        assert!(rep.exponent.is_none() && rep.levels.iter().all(|l| l.value.is_infinite()));
    }

    #[test]
    fn cs_metric_examples() {
        let model = two_asset_model();
        let grid = TimeGrid::uniform(2.0, 40).unwrap();
        let ens = simulate_ensemble(&model, &grid, 50, 8).unwrap();
        let sak = model.model_kernel(&grid).unwrap();
        let f = sak.apply(&vec![vec![1.0, 0.0]; 40]).unwrap();
        let r = integrate(PerPath::Shared(&sak), PerPath::Shared(&f), &ens, &tol()).unwrap();
        assert_eq!(cs_metric(&r, &r, &grid, None).unwrap().mean, 0.0);
        let bare = IntegralResult::from_values(r.x.clone());
        assert_eq!(cs_metric(&r, &bare, &grid, None), Err(Error::MissingDecomposition));
        // pure finite-variation difference reduces to the FV metric
        let mut shifted = r.clone();
        for (fv, x) in shifted.fv_part.iter_mut().zip(shifted.x.iter_mut()) {
            for (k, (b, v)) in fv.iter_mut().zip(x.iter_mut()).enumerate() {
                *b += 0.01 * k as f64;
                *v += 0.01 * k as f64;
            }
        }
        let d = cs_metric(&r, &shifted, &grid, None).unwrap();
        let ramp: Vec<f64> = (0..=40).map(|k| 0.01 * k as f64).collect();
        let fv = crate::stoch_kernel::fv_metric(&grid, &vec![ramp; 50], None).unwrap();
        assert!((d.mean - fv.mean).abs() < 1e-14);
    }
}
