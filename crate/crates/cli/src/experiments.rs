//! One runner per experiment kind. Each fills a [`Report`] with tables,
//! statistics and verdicts; numerical failures that leave nothing to judge
//! propagate as errors.

use std::fs::File;

use stochrkhs::finance::{
    compute_ma_and_deflator, deflated_terminal, deflator_martingale_test, viability_bound_check, ExponentialForm,
    MartingaleTest, Strategy,
};
use stochrkhs::hjm::{
    apply_drift_restriction, bond_drift, bond_martingale_test, drift_restriction_residual, integrated_fields,
    simulate_surface_range, viability_norm_hjm, HjmModel, RestrictionRule,
};
use stochrkhs::integration::{
    integrate, isometry_residual, quadratic_variation, roundtrip_residual, structural_condition_report, StructuralReport,
};
use stochrkhs::io::{parse_node_values, parse_tree, read_kernel_csv, write_kernel_csv, write_surface_csv};
use stochrkhs::linalg::Mat;
use stochrkhs::rkhs::{Kernel, Tolerances};
use stochrkhs::simulation::{realized_covariation, simulate_ensemble, SemimartingaleModel};
use stochrkhs::stats::McEstimate;
use stochrkhs::stoch_kernel::{IncrementFamily, PerPath, StochasticAggregateKernel};
use stochrkhs::tree::{deflator_polytope, price_bounds, replicate_backward, superhedge_duality, DualityOptions};
use stochrkhs::{Error, TimeGrid64};

use crate::config::{ClaimConfig, ExperimentConfig, KernelSource, RestrictionConfig, VolatilityConfig};
use crate::error::{CliError, CliResult, Context};
use crate::report::{real, Report};

/// Tolerance for identities that hold exactly in exact arithmetic.
const EXACT: f64 = 1e-10;
/// Relative agreement required between the two norm routes.
const ROUTE_AGREEMENT: f64 = 1e-8;
/// Absolute tolerance of the linear programmes on trees.
const LP_GAP: f64 = 1e-9;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / (1.0 + a.abs().max(b.abs()))
}

fn seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seed.unwrap_or_default()
}

fn joined(v: &[f64]) -> String {
    v.iter().map(|&x| real(x)).collect::<Vec<_>>().join(";")
}

// ---------------------------------------------------------------- kernel

pub(crate) fn kernel(cfg: &ExperimentConfig, rep: &mut Report) -> CliResult<()> {
    let tol = cfg.tolerances.core();
    let schedule = cfg.tolerances.schedule();
    let mut norms = Vec::new();
    let mut profiles = Vec::new();
    for case in cfg.kernel.as_deref().unwrap_or_default() {
        rep.section(&format!("kernel {}", case.name));
        let built = match (&case.rows, &case.file) {
            (Some(rows), _) => {
                let m = Mat::from_rows(rows).context("kernel entries")?;
                let labels = case.labels.clone().unwrap_or_else(|| (1..=m.rows()).map(|i| i.to_string()).collect());
                Kernel::validate(m, labels, &tol)
            }
            (None, Some(path)) => {
                let full = cfg.resolve(path);
                let f = File::open(&full).map_err(|source| CliError::Io { path: full.display().to_string(), source })?;
                read_kernel_csv(f, &tol)
            }
            (None, None) => return Err(CliError::Config(format!("kernel `{}` has no entries", case.name))),
        };
        let kernel = match built {
            Ok(k) => k,
            Err(e @ (Error::Asymmetric { .. } | Error::NotPsd { .. })) => {
                rep.verdict(format!("{}: kernel valid", case.name), false, e.to_string());
                continue;
            }
            Err(e) => return Err(CliError::Core { context: format!("kernel `{}`", case.name), source: e }),
        };
        rep.line(format!("dimension {} rank {}", kernel.dim(), kernel.rank()));
        rep.csv_with(&format!("kernel_{}.csv", case.name), |w| write_kernel_csv(w, &kernel))?;
        for (i, f) in case.vectors.iter().enumerate() {
            let spectral = kernel.spectral_norm(f, &tol).context("spectral norm")?;
            let (limit, status) = match kernel.norm_via_limit(f, &schedule, &tol) {
                Ok(r) => (r.value, if r.is_finite() { "converged" } else { "diverged" }),
                Err(Error::Inconclusive { .. }) => (f64::NAN, "inconclusive"),
                Err(e) => return Err(CliError::Core { context: "regularized norm".into(), source: e }),
            };
            let same_membership = status != "inconclusive" && spectral.is_finite() == limit.is_finite();
            let gap = if spectral.is_finite() && limit.is_finite() { rel(spectral.value, limit) } else { 0.0 };
            let mut ok = same_membership && gap <= ROUTE_AGREEMENT;
            let mut detail = format!("spectral {} limit {} ({status})", real(spectral.value), real(limit));
            let expected = case.expected.as_ref().map(|e| e[i]);
            if let Some(e) = expected {
                let hit = if e.is_infinite() { spectral.value.is_infinite() } else { rel(spectral.value, e) <= 1e-9 };
                ok &= hit;
                detail.push_str(&format!(", expected {}", real(e)));
            }
            rep.verdict(format!("{}: vector {i}", case.name), ok, detail);
            norms.push(vec![
                case.name.clone(),
                i.to_string(),
                joined(f),
                real(spectral.value),
                real(limit),
                status.to_string(),
                real(gap),
                expected.map_or(String::new(), real),
            ]);
            if let Some(chain) = &case.chain {
                let chain: Vec<Vec<usize>> = chain
                    .iter()
                    .map(|level| kernel.indices_of(&level.iter().map(String::as_str).collect::<Vec<_>>()))
                    .collect::<Result<_, _>>()
                    .context("restriction chain")?;
                let profile = kernel.subset_norm_profile(f, &chain, &tol).context("restriction profile")?;
                let monotone = profile.windows(2).all(|w| w[1] >= w[0] - EXACT * (1.0 + w[0].abs()) || w[1].is_infinite());
                for (l, v) in profile.iter().enumerate() {
                    profiles.push(vec![case.name.clone(), i.to_string(), l.to_string(), chain[l].len().to_string(), real(*v)]);
                }
                rep.verdict(format!("{}: vector {i} chain monotone", case.name), monotone, joined(&profile));
            }
        }
    }
    rep.csv(
        "norms.csv",
        &["kernel", "vector", "f", "spectral_norm", "limit_norm", "limit_status", "relative_gap", "expected"],
        norms,
    )?;
    if !profiles.is_empty() {
        rep.csv("profile.csv", &["kernel", "vector", "level", "size", "norm"], profiles)?;
    }
    Ok(())
}

// ------------------------------------------------------------- integrate

pub(crate) fn integrate_experiment(cfg: &ExperimentConfig, rep: &mut Report) -> CliResult<()> {
    let tol = cfg.tolerances.core();
    let grid = cfg.grid.unwrap().build()?;
    let model = cfg.model.as_ref().unwrap().build()?;
    let ic = cfg.integrate.as_ref().unwrap();
    if ic.theta.len() != model.dim() {
        return Err(CliError::Config(format!("theta has {} entries for {} assets", ic.theta.len(), model.dim())));
    }
    rep.progress(&format!("simulating {} paths", ic.paths));
    let ens = simulate_ensemble(&model, &grid, ic.paths, seed(cfg)).context("simulation")?;
    let thetas = vec![ic.theta.clone(); grid.steps()];
    let (kernels, families): (Vec<StochasticAggregateKernel<f64>>, Vec<IncrementFamily<f64>>) = match ic.kernel {
        KernelSource::Realized => {
            let ks = realized_covariation(&ens).context("realized covariation")?;
            let fs = ks.iter().map(|k| k.apply(&thetas)).collect::<Result<_, _>>().context("integrand")?;
            (ks, fs)
        }
        KernelSource::Model => {
            let k = model.model_kernel(&grid).context("model kernel")?;
            let f = k.apply(&thetas).context("integrand")?;
            (vec![k], vec![f])
        }
    };
    let pick = |n: usize| if kernels.len() == 1 { PerPath::Shared(&kernels[0]) } else { PerPath::Each(&kernels[..n]) };
    let pick_f = |n: usize| if families.len() == 1 { PerPath::Shared(&families[0]) } else { PerPath::Each(&families[..n]) };
    let n = ens.len();
    let x = integrate(pick(n), pick_f(n), &ens, &tol).context("integration")?;

    let mut summary = Vec::with_capacity(n);
    let mut worst = 0.0f64;
    let mut gaps = Vec::with_capacity(n);
    for p in 0..n {
        let sak = &kernels[p.min(kernels.len() - 1)];
        let fam = &families[p.min(families.len() - 1)];
        let qv = quadratic_variation(&x.x[p]);
        let norm = sak.stoch_norm_sq(fam, &tol).context("stochastic norm")?;
        let res = isometry_residual(&x.x[p], sak, fam, &tol).context("isometry")?;
        let qt = qv[qv.len() - 1];
        worst = worst.max(res / (1.0 + qt));
        gaps.push(qt - norm[norm.len() - 1]);
        summary.push(vec![
            p.to_string(),
            real(x.terminal(p)),
            real(x.fv_part[p][grid.steps()]),
            real(x.mart_part[p][grid.steps()]),
            real(qt),
            real(norm[norm.len() - 1]),
            real(res),
        ]);
    }
    rep.csv("paths.csv", &["path", "X_T", "FV_T", "M_T", "QV_T", "norm_T", "isometry_residual"], summary)?;

    let shown = ic.write_paths.unwrap_or(5).min(n);
    let mut rows = Vec::new();
    for p in 0..shown {
        let qv = quadratic_variation(&x.x[p]);
        for (k, &t) in grid.times().iter().enumerate() {
            rows.push(vec![p.to_string(), k.to_string(), real(t), real(x.x[p][k]), real(x.fv_part[p][k]), real(x.mart_part[p][k]), real(qv[k])]);
        }
    }
    rep.csv("integral.csv", &["path", "step", "t", "X", "FV", "M", "QV"], rows)?;

    let rt = roundtrip_residual(pick(n), pick_f(n), &ens, &tol).context("round trip")?;
    rep.section("isometry and round trip");
    rep.stat("round trip R(C) distance", &rt.rc_distance, 0.0);
    rep.stat("round trip uniform mean square", &rt.uniform_mean_square, 0.0);
    let gap_est = McEstimate::from_samples(&gaps);
    rep.stat("[X,X](T) - norm(T)", &gap_est, 0.0);
    match ic.kernel {
        KernelSource::Realized => {
            rep.verdict("isometry", worst <= EXACT, format!("max residual / (1 + [X,X](T)) = {}", real(worst)));
            rep.verdict("round trip", rt.rc_distance.mean <= EXACT, format!("R(C) distance {}", real(rt.rc_distance.mean)));
        }
        KernelSource::Model => {
            let band = cfg.tolerances.se_band();
            rep.verdict("isometry in mean", gap_est.within(0.0, band), format!("z = {:.3}", gap_est.z_score(0.0)));
        }
    }
    Ok(())
}

// ------------------------------------------------------------- viability

fn structural(rep: &mut Report, report: &StructuralReport<f64>) -> CliResult<()> {
    let rows = report.levels.iter().map(|l| vec![l.steps.to_string(), real(l.mean_dt), real(l.value)]).collect();
    rep.csv("structural.csv", &["steps", "mean_dt", "drift_norm"], rows)?;
    let e = report.exponent.map_or("none (infinite norm)".to_string(), |e| format!("{e:.4}"));
    rep.verdict("structural condition", report.verdict.is_pass(), format!("growth exponent {e}"));
    Ok(())
}

fn martingale_rows(name: &str, t: &MartingaleTest<f64>, rows: &mut Vec<Vec<String>>, rep: &mut Report) {
    for (i, (e, &target)) in t.estimates.iter().zip(&t.targets).enumerate() {
        rep.stat(&format!("{name}: E[Y(T) {}(T)]", t.labels[i]), e, target);
        rows.push(vec![name.into(), t.labels[i].clone(), real(target), real(e.mean), real(e.std_error), real(e.z_score(target))]);
    }
    rep.stat(&format!("{name}: E[Y(T)]"), &t.deflator_mean, 1.0);
    rows.push(vec![
        name.into(),
        "Y".into(),
        real(1.0),
        real(t.deflator_mean.mean),
        real(t.deflator_mean.std_error),
        real(t.deflator_mean.z_score(1.0)),
    ]);
    rep.line(format!("{name}: paths {} excluded by positivity guard {}", t.paths, t.excluded));
}

pub(crate) fn viability(cfg: &ExperimentConfig, rep: &mut Report) -> CliResult<()> {
    let tol = cfg.tolerances.core();
    let band = cfg.tolerances.se_band();
    let grid = cfg.grid.unwrap().build()?;
    let model = cfg.model.as_ref().unwrap().build()?;
    let vc = cfg.viability.as_ref().unwrap();
    let form = match vc.form.as_deref() {
        None | Some("product") => ExponentialForm::Product,
        Some("exponential") => ExponentialForm::Exponential,
        Some(other) => return Err(CliError::Config(format!("unknown exponential form `{other}`"))),
    };
    let chunk = vc.chunk.unwrap_or(8192);

    rep.section("structural condition");
    let sr = structural_condition_report(&model, &grid, vc.refine_levels.unwrap_or(3), vc.exponent_tol.unwrap_or(0.05), &tol)
        .context("structural diagnostic")?;
    structural(rep, &sr)?;
    if !sr.verdict.is_pass() {
        rep.line("deflator construction skipped: the drift leaves the kernel range");
        return Ok(());
    }

    rep.section("deflator martingale tests");
    rep.progress(&format!("martingale test on {} paths", vc.paths));
    let mut rows = Vec::new();
    let base = deflator_martingale_test(&model, &grid, vc.paths, seed(cfg), chunk, None, form, &tol).context("deflator test")?;
    martingale_rows("canonical", &base, &mut rows, rep);
    rep.verdict("canonical deflator martingale", base.passes(band), format!("max |z| = {:.3}", base.max_abs_z()));
    for p in &vc.perturbation {
        let t = deflator_martingale_test(&model, &grid, vc.paths, seed(cfg), chunk, Some(&p.gamma), form, &tol)
            .context("perturbed deflator test")?;
        martingale_rows(&p.name, &t, &mut rows, rep);
        rep.verdict(
            format!("perturbation {} martingale", p.name),
            t.passes(band),
            format!("max |z| = {:.3}, orthogonal to asset drivers: {}", t.max_abs_z(), t.orthogonal),
        );
    }
    rep.csv("martingale.csv", &["test", "asset", "target", "mean", "std_error", "z"], rows)?;

    rep.section("viability bound");
    let table_paths = vc.table_paths.unwrap_or(vc.paths.min(20_000));
    let ens = simulate_ensemble(&model, &grid, table_paths, seed(cfg)).context("simulation")?;
    let sak = model.model_kernel(&grid).context("model kernel")?;
    let drift = model.drift_family(&grid).context("drift")?;
    let defl = compute_ma_and_deflator(&sak, &drift, &ens, form, &tol).context("deflator")?;
    let strategies = strategies(vc, &model)?;
    let levels = if vc.levels.is_empty() { vec![1.5, 2.0, 4.0] } else { vc.levels.clone() };
    let table = viability_bound_check(&ens, &defl, &strategies, &levels).context("viability table")?;
    let mut supermart = true;
    for s in &strategies {
        let wealth: Vec<Vec<f64>> = ens.paths().iter().map(|p| s.wealth(p)).collect::<Result<_, _>>().context("wealth")?;
        let e = deflated_terminal(&defl, &wealth);
        rep.stat(&format!("E[Y(T) X(T)] for {}", s.name), &e, 1.0);
        supermart &= e.mean <= 1.0 + band * e.std_error;
    }
    rep.verdict("deflated wealth at most initial wealth", supermart, format!("{} strategies", strategies.len()));
    let rows = table
        .iter()
        .map(|r| {
            vec![
                r.strategy.clone(),
                real(r.level),
                real(r.tail.mean),
                real(r.tail.std_error),
                real(r.deflated_bound),
                real(r.markov_bound),
                real(r.envelope),
            ]
        })
        .collect();
    rep.csv("viability.csv", &["strategy", "level", "tail", "tail_se", "deflated_bound", "markov_bound", "envelope"], rows)?;
    let inside = table.iter().all(|r| r.within_envelope(band));
    rep.verdict("tail within viability envelope", inside, format!("{} rows", table.len()));
    rep.line(format!("guarded paths: {}", defl.positivity_violations));

    let shown = ens.len().min(5);
    let mut rows = Vec::new();
    for p in 0..shown {
        for (k, &t) in grid.times().iter().enumerate() {
            rows.push(vec![p.to_string(), k.to_string(), real(t), real(defl.y[p][k])]);
        }
    }
    rep.csv("deflator.csv", &["path", "step", "t", "Y"], rows)?;
    Ok(())
}

fn strategies(vc: &crate::config::ViabilityConfig, model: &SemimartingaleModel<f64>) -> CliResult<Vec<Strategy<f64>>> {
    if vc.strategy.is_empty() {
        let d = model.dim() as f64;
        let units = model.initial().iter().map(|p| 1.0 / (d * p)).collect();
        return Ok(vec![Strategy::hold("equal-hold", units)]);
    }
    vc.strategy
        .iter()
        .map(|s| match (&s.hold, &s.proportional) {
            (Some(h), None) => Ok(Strategy::hold(&s.name, h.clone())),
            (None, Some(p)) => Ok(Strategy::proportional(&s.name, p.clone())),
            _ => Err(CliError::Config(format!("strategy `{}` needs exactly one of `hold` and `proportional`", s.name))),
        })
        .collect()
}

// ------------------------------------------------------------ hedge-tree

pub(crate) fn hedge_tree(cfg: &ExperimentConfig, rep: &mut Report) -> CliResult<()> {
    let tc = cfg.tree.as_ref().unwrap();
    let path = cfg.resolve(&tc.file);
    let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
    let tree = parse_tree::<f64>(&text).context("tree file")?;
    let k = match &tc.claim {
        ClaimConfig::Call { asset, strike } | ClaimConfig::Put { asset, strike } if *asset >= tree.assets() => {
            return Err(CliError::Config(format!("claim asset {asset} (strike {strike}) exceeds the {} assets", tree.assets())));
        }
        ClaimConfig::Call { asset, strike } => tree.terminal_claim(|p| (p[*asset] - strike).max(0.0)),
        ClaimConfig::Put { asset, strike } => tree.terminal_claim(|p| (strike - p[*asset]).max(0.0)),
        ClaimConfig::File { path } => {
            let full = cfg.resolve(path);
            let text = std::fs::read_to_string(&full).map_err(|source| CliError::Io { path: full.display().to_string(), source })?;
            parse_node_values(&text, &tree).context("claim file")?
        }
    };
    rep.line(format!("nodes {} assets {}", tree.len(), tree.assets()));

    let poly = match deflator_polytope(&tree) {
        Ok(p) => p,
        Err(Error::NoDeflator) => {
            rep.verdict("strictly positive deflator exists", false, "some node admits no strictly positive martingale measure");
            return Ok(());
        }
        Err(e) => return Err(CliError::Core { context: "deflator polytope".into(), source: e }),
    };
    rep.verdict("strictly positive deflator exists", true, format!("polytope dimension {}", poly.dimension));

    let mut nodes = Vec::new();
    let mut vertices = Vec::new();
    for (n, np) in poly.nodes.iter().enumerate() {
        let node = tree.node(n);
        let parent = node.parent.map_or("-".to_string(), |p| tree.node(p).id.clone());
        let (rank, dim, count) = np.as_ref().map_or((String::new(), String::new(), 0), |p| {
            (p.rank.to_string(), p.dimension.to_string(), p.vertices.len())
        });
        nodes.push(vec![node.id.clone(), parent, real(node.reach), rank, dim, count.to_string()]);
        if let Some(p) = np {
            for (v, q) in p.vertices.iter().enumerate() {
                for (&c, &qc) in node.children.iter().zip(q) {
                    vertices.push(vec![node.id.clone(), v.to_string(), tree.node(c).id.clone(), real(qc)]);
                }
            }
        }
    }
    rep.csv("nodes.csv", &["node", "parent", "reach", "rank", "dimension", "vertices"], nodes)?;
    rep.csv("vertices.csv", &["node", "vertex", "child", "q"], vertices)?;

    let duality = superhedge_duality(&tree, &k, &DualityOptions::default()).context("superhedging duality")?;
    let (lo, hi) = price_bounds(&tree, &k).context("price bounds")?;
    rep.section("duality");
    let entries = [
        ("primal", duality.primal),
        ("dual", duality.dual),
        ("gap", duality.gap),
        ("dp_root", duality.dp_values[0]),
        ("lower_price", lo),
        ("upper_price", hi),
        ("polytope_dimension", poly.dimension as f64),
    ];
    for (name, v) in entries {
        rep.line(format!("{name}: {}", real(v)));
    }
    rep.csv("duality.csv", &["quantity", "value"], entries.iter().map(|(n, v)| vec![n.to_string(), real(*v)]).collect())?;
    let scale = 1.0 + duality.primal.abs();
    rep.verdict("duality gap", duality.gap.abs() <= LP_GAP * scale, format!("gap {}", real(duality.gap)));
    let dp_gap = (duality.dp_values[0] - duality.primal).abs();
    rep.verdict("dynamic programme matches primal", dp_gap <= LP_GAP * scale, format!("difference {}", real(dp_gap)));

    let mut header = vec!["node".to_string()];
    header.extend((0..tree.assets()).map(|i| format!("h{i}")));
    let rows = duality
        .hedges
        .iter()
        .enumerate()
        .filter_map(|(n, h)| h.as_ref().map(|h| std::iter::once(tree.node(n).id.clone()).chain(h.iter().map(|&x| real(x))).collect()))
        .collect();
    rep.csv_owned("hedges.csv", &header, rows)?;
    let rows = duality.deflator.iter().enumerate().map(|(n, &y)| vec![tree.node(n).id.clone(), real(y)]).collect();
    rep.csv("deflator.csv", &["node", "Y"], rows)?;

    if poly.is_complete() {
        let r = replicate_backward(&tree, &k).context("replication")?;
        let rows = r.values.iter().enumerate().map(|(n, &v)| vec![tree.node(n).id.clone(), real(v)]).collect();
        rep.csv("replication.csv", &["node", "value"], rows)?;
        let ok = (r.cost - duality.primal).abs() <= LP_GAP * scale && (hi - lo).abs() <= LP_GAP * scale;
        rep.verdict("complete market replicates at the hedging price", ok, format!("cost {}", real(r.cost)));
    } else {
        rep.line(format!("market incomplete; price interval [{}, {}]", real(lo), real(hi)));
    }
    Ok(())
}

// ------------------------------------------------------------------- hjm

pub(crate) fn hjm(cfg: &ExperimentConfig, rep: &mut Report) -> CliResult<()> {
    let tol = cfg.tolerances.core();
    let band = cfg.tolerances.se_band();
    let grid = cfg.grid.unwrap().build()?;
    let hc = cfg.hjm.as_ref().unwrap();
    let m = hc.maturities.len();
    let initial = vec![hc.initial_rate; m];
    let vol = hc.volatility.clone();
    let sigma = move |t: f64, big_t: f64| match vol {
        VolatilityConfig::HoLee { sigma0 } => vec![sigma0],
        VolatilityConfig::Exponential { sigma0, decay } => vec![sigma0 * (-decay * (big_t - t)).exp()],
    };
    let raw = HjmModel::from_fns(grid.clone(), hc.maturities.clone(), initial, 1, sigma, |_, _| 0.0).context("hjm model")?;
    let rule = match hc.restriction {
        RestrictionConfig::Pointwise => RestrictionRule::Pointwise,
        _ => RestrictionRule::Midpoint,
    };
    let restricted = match hc.restriction {
        RestrictionConfig::None => raw,
        _ => apply_drift_restriction(&raw, rule),
    };
    let model = if hc.kappa_bias != 0.0 { restricted.with_kappa_bias(hc.kappa_bias) } else { restricted };

    rep.section("drift restriction");
    let residual = drift_restriction_residual(&model, RestrictionRule::Midpoint);
    rep.line(format!("max |κ − κ_restricted|: {}", real(residual)));
    let fields = integrated_fields(&model);
    let alpha = bond_drift(&model);
    let rows = (0..m)
        .map(|j| {
            vec![
                real(hc.maturities[j]),
                real(model.kappa()[0][j]),
                real(model.sigma()[0][(j, 0)]),
                real(fields.kappa_star[0][j]),
                real(fields.sigma_star[0][(j, 0)]),
                real(alpha[0][j]),
            ]
        })
        .collect();
    rep.csv("fields.csv", &["maturity", "kappa", "sigma", "kappa_star", "sigma_star", "alpha"], rows)?;

    let norm = viability_norm_hjm(&model, &tol).context("hjm viability norm")?;
    let rows = grid.times().iter().zip(&norm).map(|(&t, &v)| vec![real(t), real(v)]).collect();
    rep.csv("viability_norm.csv", &["t", "norm"], rows)?;
    let total = norm[norm.len() - 1];
    rep.verdict("structural condition", total.is_finite(), format!("viability norm {}", real(total)));
    rep.verdict("bond drift vanishes", total <= 1e-12, format!("viability norm {}", real(total)));

    rep.section("bond martingale test");
    rep.progress(&format!("bond test on {} paths", hc.paths));
    let t = bond_martingale_test(&model, hc.paths, seed(cfg), hc.chunk.unwrap_or(8192)).context("bond martingale test")?;
    let mut rows = Vec::new();
    for (j, (e, &target)) in t.estimates.iter().zip(&t.targets).enumerate() {
        rep.stat(&format!("E[P(T_h; {})]", real(hc.maturities[j])), e, target);
        rows.push(vec![real(hc.maturities[j]), real(target), real(e.mean), real(e.std_error), real(e.z_score(target))]);
    }
    rep.csv("bond_test.csv", &["maturity", "target", "mean", "std_error", "z"], rows)?;
    rep.verdict("discounted bonds are martingales", t.passes(band), format!("max |z| = {:.3}", t.max_abs_z()));

    let shown = hc.surfaces_out.unwrap_or(1).min(hc.paths);
    for (i, s) in simulate_surface_range(&model, seed(cfg), 0..shown).iter().enumerate() {
        rep.csv_with(&format!("surface_{i}.csv"), |w| write_surface_csv(w, grid.times(), &hc.maturities, s))?;
    }
    Ok(())
}

// ---------------------------------------------------------- refine-study

pub(crate) fn refine_study(cfg: &ExperimentConfig, rep: &mut Report) -> CliResult<()> {
    let tol = cfg.tolerances.core();
    let base = cfg.grid.unwrap().build()?;
    let model = cfg.model.as_ref().unwrap().build()?;
    let rc = cfg.refine.clone().unwrap_or(crate::config::RefineConfig { levels: None, exponent_tol: None, roundtrip_paths: 0, theta: None });
    let levels = rc.levels.unwrap_or(4);

    rep.section("structural condition under refinement");
    let sr = structural_condition_report(&model, &base, levels, rc.exponent_tol.unwrap_or(0.05), &tol).context("structural diagnostic")?;
    for l in &sr.levels {
        rep.line(format!("steps {}: drift norm {}", l.steps, real(l.value)));
    }
    structural(rep, &sr)?;

    if rc.roundtrip_paths > 0 {
        rep.section("model-kernel round trip under refinement");
        let theta = rc.theta.clone().unwrap_or_else(|| vec![1.0; model.dim()]);
        let study = Study { levels, paths: rc.roundtrip_paths, seed: seed(cfg) };
        let ratios = roundtrip_scaling(&model, &base, &theta, &study, &tol, rep)?;
        let ok = ratios.iter().all(|r| (0.4..=0.6).contains(r));
        let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.3}")).collect();
        rep.verdict("round trip halves with the step", ok, format!("ratios {}", shown.join(", ")));
    }
    Ok(())
}

struct Study {
    levels: usize,
    paths: usize,
    seed: u64,
}

/// Uniform mean-square round-trip discrepancy of `F = C θ` under the model
/// kernel at each dyadic level; returns the successive ratios.
fn roundtrip_scaling(
    model: &SemimartingaleModel<f64>,
    base: &TimeGrid64,
    theta: &[f64],
    study: &Study,
    tol: &Tolerances<f64>,
    rep: &mut Report,
) -> CliResult<Vec<f64>> {
    let Study { levels, paths, seed } = *study;
    let mut grid = base.clone();
    let mut rows = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for l in 0..levels {
        if l > 0 {
            grid = grid.refine(2).context("refinement")?;
        }
        let ens = simulate_ensemble(model, &grid, paths, seed).context("simulation")?;
        let sak = model.model_kernel(&grid).context("model kernel")?;
        let f = sak.apply(&vec![theta.to_vec(); grid.steps()]).context("integrand")?;
        let rt = roundtrip_residual(PerPath::Shared(&sak), PerPath::Shared(&f), &ens, tol).context("round trip")?;
        rep.stat(&format!("uniform mean square at {} steps", grid.steps()), &rt.uniform_mean_square, 0.0);
        let ratio = values.last().map_or(f64::NAN, |&prev| rt.uniform_mean_square.mean / prev);
        rows.push(vec![
            grid.steps().to_string(),
            real(grid.horizon() / grid.steps() as f64),
            real(rt.uniform_mean_square.mean),
            real(rt.uniform_mean_square.std_error),
            real(ratio),
        ]);
        values.push(rt.uniform_mean_square.mean);
    }
    rep.csv("roundtrip.csv", &["steps", "dt", "uniform_mean_square", "std_error", "ratio"], rows)?;
    Ok(values.windows(2).map(|w| w[1] / w[0]).collect())
}
