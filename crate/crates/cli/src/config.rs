//! Experiment configuration, read from a TOML file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;
use stochrkhs::linalg::Mat;
use stochrkhs::rkhs::{Schedule, Tolerances};
use stochrkhs::simulation::{Drift, SemimartingaleModel};
use stochrkhs::TimeGrid64;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Kernel,
    Integrate,
    Viability,
    HedgeTree,
    Hjm,
    RefineStudy,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        ExperimentKind::Kernel,
        ExperimentKind::Integrate,
        ExperimentKind::Viability,
        ExperimentKind::HedgeTree,
        ExperimentKind::Hjm,
        ExperimentKind::RefineStudy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Kernel => "kernel",
            ExperimentKind::Integrate => "integrate",
            ExperimentKind::Viability => "viability",
            ExperimentKind::HedgeTree => "hedge-tree",
            ExperimentKind::Hjm => "hjm",
            ExperimentKind::RefineStudy => "refine-study",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentKind {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown experiment kind `{s}`")))
    }
}

/// Whole configuration file. Only the sections used by the chosen
/// experiment need to be present.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub tolerances: TolerancesConfig,
    pub grid: Option<GridConfig>,
    pub model: Option<ModelConfig>,
    pub kernel: Option<Vec<KernelCase>>,
    pub integrate: Option<IntegrateConfig>,
    pub viability: Option<ViabilityConfig>,
    pub tree: Option<TreeConfig>,
    pub hjm: Option<HjmConfig>,
    pub refine: Option<RefineConfig>,
    /// Directory that relative file references are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TolerancesConfig {
    pub psd: Option<f64>,
    pub membership: Option<f64>,
    pub divergence_ratio: Option<f64>,
    pub convergence: Option<f64>,
    /// Decades `[lo, hi]` of the regularization schedule.
    pub schedule: Option<[i32; 2]>,
    /// Standard errors allowed by every Monte Carlo test.
    pub se_band: Option<f64>,
}

impl TolerancesConfig {
    pub fn core(&self) -> Tolerances<f64> {
        let d = Tolerances::default();
        Tolerances {
            psd: self.psd.unwrap_or(d.psd),
            membership: self.membership.unwrap_or(d.membership),
            divergence_ratio: self.divergence_ratio.unwrap_or(d.divergence_ratio),
            convergence: self.convergence.unwrap_or(d.convergence),
        }
    }

    pub fn schedule(&self) -> Schedule<f64> {
        let [lo, hi] = self.schedule.unwrap_or([0, 12]);
        Schedule::decades(lo, hi)
    }

    pub fn se_band(&self) -> f64 {
        self.se_band.unwrap_or(3.0)
    }
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: f64,
    pub steps: usize,
}

impl GridConfig {
    pub fn build(&self) -> CliResult<TimeGrid64> {
        Ok(TimeGrid64::uniform(self.horizon, self.steps)?)
    }
}

/// Drift specification of an asset model.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DriftConfig {
    /// Constant rate per asset.
    Rate { values: Vec<f64> },
    /// Cumulative drift `A_i(t) = scale_i · t^exponent`.
    Power { scale: Vec<f64>, exponent: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub labels: Vec<String>,
    pub initial: Vec<f64>,
    /// Assets × drivers.
    pub sigma: Vec<Vec<f64>>,
    pub drift: DriftConfig,
}

impl ModelConfig {
    pub fn build(&self) -> CliResult<SemimartingaleModel<f64>> {
        let sigma = Mat::from_rows(&self.sigma)?;
        let d = self.labels.len();
        match &self.drift {
            DriftConfig::Rate { values } => {
                Ok(SemimartingaleModel::constant(self.labels.clone(), self.initial.clone(), values.clone(), sigma)?)
            }
            DriftConfig::Power { scale, exponent } => {
                if scale.len() != d {
                    return Err(CliError::Config(format!("drift scale has {} entries for {d} assets", scale.len())));
                }
                if sigma.rows() != d {
                    return Err(CliError::Config(format!("sigma has {} rows for {d} assets", sigma.rows())));
                }
                let (scale, e) = (scale.clone(), *exponent);
                let drivers = sigma.cols();
                let drift = Drift::Cumulative(std::sync::Arc::new(move |t: f64| scale.iter().map(|s| s * t.powf(e)).collect()));
                Ok(SemimartingaleModel::new(self.labels.clone(), self.initial.clone(), drivers, drift, move |_| sigma.clone())?)
            }
        }
    }
}

/// One kernel with the vectors to measure against it.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelCase {
    pub name: String,
    /// Inline entries; alternative to `file`.
    pub rows: Option<Vec<Vec<f64>>>,
    /// CSV file with a label header row.
    pub file: Option<PathBuf>,
    pub labels: Option<Vec<String>>,
    pub vectors: Vec<Vec<f64>>,
    /// Known norms (`inf` allowed), one per vector.
    pub expected: Option<Vec<f64>>,
    /// Nested label subsets for the restriction profile.
    pub chain: Option<Vec<Vec<String>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelSource {
    /// `ΔC_k = ΔP_k ΔP_kᵀ`.
    #[default]
    Realized,
    /// `ΔC_k = σσᵀ Δt_k`.
    Model,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrateConfig {
    pub paths: usize,
    /// Constant holdings `θ`; the integrand is `F = C θ`.
    pub theta: Vec<f64>,
    #[serde(default)]
    pub kernel: KernelSource,
    /// Paths written in full to `integral.csv`.
    pub write_paths: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub name: String,
    /// Loadings `γ` on the drivers.
    pub gamma: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub name: String,
    pub hold: Option<Vec<f64>>,
    pub proportional: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViabilityConfig {
    pub paths: usize,
    pub chunk: Option<usize>,
    /// `product` (default) or `exponential`.
    pub form: Option<String>,
    #[serde(default)]
    pub perturbation: Vec<PerturbationConfig>,
    #[serde(default)]
    pub strategy: Vec<StrategyConfig>,
    #[serde(default)]
    pub levels: Vec<f64>,
    /// Paths used for the wealth table (default: min(paths, 20000)).
    pub table_paths: Option<usize>,
    /// Refinement levels of the structural diagnostic (default 3).
    pub refine_levels: Option<usize>,
    pub exponent_tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClaimConfig {
    /// Terminal `max(P_asset − strike, 0)`.
    Call { asset: usize, strike: f64 },
    /// Terminal `max(strike − P_asset, 0)`.
    Put { asset: usize, strike: f64 },
    /// `id value` lines, one withdrawal per node.
    File { path: PathBuf },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeConfig {
    pub file: PathBuf,
    pub claim: ClaimConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RestrictionConfig {
    #[default]
    Midpoint,
    Pointwise,
    /// Keep the drift as configured (zero plus `kappa_bias`).
    None,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VolatilityConfig {
    /// Constant `σ₀`.
    HoLee { sigma0: f64 },
    /// `σ₀ e^{−a (T − t)}`.
    Exponential { sigma0: f64, decay: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjmConfig {
    pub maturities: Vec<f64>,
    /// Flat initial forward rate.
    pub initial_rate: f64,
    pub volatility: VolatilityConfig,
    #[serde(default)]
    pub restriction: RestrictionConfig,
    #[serde(default)]
    pub kappa_bias: f64,
    pub paths: usize,
    pub chunk: Option<usize>,
    /// Surfaces written to `surface_<i>.csv` (default 1).
    pub surfaces_out: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RefineConfig {
    pub levels: Option<usize>,
    pub exponent_tol: Option<f64>,
    /// Paths for the round-trip scaling study; zero skips it.
    #[serde(default)]
    pub roundtrip_paths: usize,
    /// Holdings for the round-trip integrand `F = C θ`.
    pub theta: Option<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> CliResult<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Checks that the sections needed by `kind` exist, the seed is set and
    /// every referenced file is present.
    pub fn validate(&self, kind: ExperimentKind) -> CliResult<()> {
        if self.seed.is_none() {
            return Err(CliError::Config("a seed is required (config `seed` or --seed)".into()));
        }
        let missing = |what: &str| CliError::Config(format!("experiment `{kind}` needs a [{what}] section"));
        match kind {
            ExperimentKind::Kernel => {
                let cases = self.kernel.as_ref().filter(|c| !c.is_empty()).ok_or_else(|| missing("kernel"))?;
                for c in cases {
                    match (&c.rows, &c.file) {
                        (Some(_), None) => {}
                        (None, Some(f)) => self.require_file(f)?,
                        _ => return Err(CliError::Config(format!("kernel `{}` needs exactly one of `rows` and `file`", c.name))),
                    }
                    if c.expected.as_ref().is_some_and(|e| e.len() != c.vectors.len()) {
                        return Err(CliError::Config(format!("kernel `{}`: one expected norm per vector", c.name)));
                    }
                }
            }
            ExperimentKind::Integrate => {
                self.grid.ok_or_else(|| missing("grid"))?;
                self.model.as_ref().ok_or_else(|| missing("model"))?;
                self.integrate.as_ref().ok_or_else(|| missing("integrate"))?;
            }
            ExperimentKind::Viability => {
                self.grid.ok_or_else(|| missing("grid"))?;
                self.model.as_ref().ok_or_else(|| missing("model"))?;
                self.viability.as_ref().ok_or_else(|| missing("viability"))?;
            }
            ExperimentKind::HedgeTree => {
                let tree = self.tree.as_ref().ok_or_else(|| missing("tree"))?;
                self.require_file(&tree.file)?;
                if let ClaimConfig::File { path } = &tree.claim {
                    self.require_file(path)?;
                }
            }
            ExperimentKind::Hjm => {
                self.grid.ok_or_else(|| missing("grid"))?;
                self.hjm.as_ref().ok_or_else(|| missing("hjm"))?;
            }
            ExperimentKind::RefineStudy => {
                self.grid.ok_or_else(|| missing("grid"))?;
                self.model.as_ref().ok_or_else(|| missing("model"))?;
            }
        }
        Ok(())
    }

    fn require_file(&self, p: &Path) -> CliResult<()> {
        let full = self.resolve(p);
        if full.is_file() {
            Ok(())
        } else {
            Err(CliError::Config(format!("referenced file {} does not exist", full.display())))
        }
    }
}
