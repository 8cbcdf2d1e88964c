use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use alr_core::data::{gen_blobs, read_idx, Dataset};
use alr_core::problems::{GradientMode, Logistic, Problem};
use alr_core::{Error, HyperParams, Method, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSpec {
    Blobs { n: usize, d_in: usize, classes: usize, spread: f64, seed: u64 },
    Idx { images: PathBuf, labels: PathBuf, per_class: Option<usize>, split_seed: u64 },
}

impl DataSpec {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSpec::Blobs { n, d_in, classes, spread, seed } => gen_blobs(*n, *d_in, *classes, *spread, *seed),
            DataSpec::Idx { images, labels, per_class, split_seed } => {
                read_idx(images, labels, *per_class, *split_seed)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemSpec {
    Quadratic { eigenvalues: Vec<f64> },
    /// Eigenvalues spaced geometrically over `[lo, hi]`.
    QuadraticLog { dim: usize, lo: f64, hi: f64 },
    Rosenbrock { dim: usize },
    Logistic { data: DataSpec, #[serde(default)] l2: f64 },
    Mlp { data: DataSpec, hidden: usize, #[serde(default)] l2: f64, #[serde(default)] init_seed: u64 },
}

impl ProblemSpec {
    /// Named presets used by the CLI's `--problem` flag.
    pub fn preset(name: &str) -> Result<Self> {
        let blobs = |d_in, classes| DataSpec::Blobs { n: 300, d_in, classes, spread: 0.5, seed: 0 };
        Ok(match name {
            "quadratic" => ProblemSpec::QuadraticLog { dim: 10, lo: 0.1, hi: 1.0 },
            "rosenbrock" => ProblemSpec::Rosenbrock { dim: 2 },
            "logistic" => ProblemSpec::Logistic { data: blobs(2, 2), l2: 0.0 },
            "mlp" => ProblemSpec::Mlp { data: blobs(4, 3), hidden: 16, l2: 0.0, init_seed: 0 },
            other => return Err(Error::Config(format!("unknown problem preset {other:?}"))),
        })
    }

    pub fn label(&self) -> String {
        match self {
            ProblemSpec::Quadratic { eigenvalues } => format!("quadratic(d={})", eigenvalues.len()),
            ProblemSpec::QuadraticLog { dim, lo, hi } => format!("quadratic(d={dim},[{lo},{hi}])"),
            ProblemSpec::Rosenbrock { dim } => format!("rosenbrock(d={dim})"),
            ProblemSpec::Logistic { l2, .. } => format!("logistic(l2={l2})"),
            ProblemSpec::Mlp { hidden, l2, .. } => format!("mlp(h={hidden},l2={l2})"),
        }
    }

    /// Builds the problem. Logistic `f*` is solved (or read from `cache_dir`)
    /// only when `need_f_star` is set.
    pub fn build(&self, need_f_star: bool, cache_dir: Option<&Path>) -> Result<Problem> {
        match self {
            ProblemSpec::Quadratic { eigenvalues } => Problem::quadratic(eigenvalues.clone()),
            ProblemSpec::QuadraticLog { dim, lo, hi } => {
                Ok(Problem::Quadratic(alr_core::problems::Quadratic::log_spaced(*dim, *lo, *hi)?))
            }
            ProblemSpec::Rosenbrock { dim } => Problem::rosenbrock(*dim),
            ProblemSpec::Logistic { data, l2 } => {
                let logistic = Logistic::new(Arc::new(data.load()?), *l2)?;
                if !need_f_star {
                    return Ok(Problem::Logistic(logistic));
                }
                let f_star = logistic_f_star(&logistic, cache_dir)?;
                Ok(Problem::Logistic(logistic.with_f_star(f_star)))
            }
            ProblemSpec::Mlp { data, hidden, l2, .. } => Problem::mlp(Arc::new(data.load()?), *hidden, *l2),
        }
    }

    /// Starting point used when the config gives none.
    pub fn default_x0(&self, problem: &Problem) -> Vec<f64> {
        match (self, problem) {
            (ProblemSpec::Rosenbrock { dim }, _) => {
                (0..*dim).map(|i| if i % 2 == 0 { -1.2 } else { 1.0 }).collect()
            }
            (ProblemSpec::Mlp { init_seed, .. }, Problem::Mlp(m)) => m.init_params(*init_seed),
            (ProblemSpec::Logistic { .. }, _) => vec![0.0; problem.dim()],
            _ => vec![1.0; problem.dim()],
        }
    }
}

const F_STAR_STEPS: usize = 1_000_000;

#[derive(Serialize, Deserialize)]
struct FStarEntry {
    dataset: String,
    l2: f64,
    f_star: f64,
}

fn logistic_f_star(l: &Logistic, cache_dir: Option<&Path>) -> Result<f64> {
    let path = cache_dir.map(|d| d.join(format!("fstar-{}-{}.json", &l.data.hash[..16], l.l2.to_bits())));
    if let Some(p) = &path {
        if let Ok(text) = fs::read_to_string(p) {
            let e: FStarEntry = serde_json::from_str(&text)?;
            if e.dataset == l.data.hash && e.l2.to_bits() == l.l2.to_bits() {
                return Ok(e.f_star);
            }
        }
    }
    let f_star = l.solve_f_star(F_STAR_STEPS);
    if let (Some(p), Some(dir)) = (&path, cache_dir) {
        fs::create_dir_all(dir)?;
        let e = FStarEntry { dataset: l.data.hash.clone(), l2: l.l2, f_star };
        fs::write(p, serde_json::to_string_pretty(&e)?)?;
    }
    Ok(f_star)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSpec {
    /// Gradient-norm bound; `None` means unbounded.
    #[serde(default)]
    pub g_max: Option<f64>,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub mode: GradientMode,
}

impl Default for OracleSpec {
    fn default() -> Self {
        Self { g_max: None, sigma: 0.0, seed: 0, mode: GradientMode::Gaussian }
    }
}

fn default_replicates() -> usize {
    1
}

fn default_divergence_loss() -> f64 {
    1e30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub oracle: OracleSpec,
    pub method: Method,
    pub hyper_params: HyperParams,
    pub iters: u64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Record an A-LR snapshot every k steps; 0 disables snapshots.
    #[serde(default)]
    pub snapshot_every: u64,
    #[serde(default)]
    pub z_check: bool,
    /// A loss above this (or non-finite) aborts the run as diverged.
    #[serde(default = "default_divergence_loss")]
    pub divergence_loss: f64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemSpec, method: Method, hyper_params: HyperParams, iters: u64) -> Self {
        Self {
            problem,
            x0: None,
            oracle: OracleSpec::default(),
            method,
            hyper_params,
            iters,
            replicates: 1,
            snapshot_every: 0,
            z_check: false,
            divergence_loss: default_divergence_loss(),
            out: None,
            cache_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iters == 0 {
            return Err(Error::Config("iters must be >= 1".into()));
        }
        if self.replicates == 0 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if let Some(g) = self.oracle.g_max {
            if !(g > 0.0) {
                return Err(Error::Config(format!("g_max must be positive, got {g}")));
            }
        }
        if !(self.oracle.sigma.is_finite() && self.oracle.sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be >= 0, got {}", self.oracle.sigma)));
        }
        if !(self.divergence_loss > 0.0) {
            return Err(Error::Config("divergence_loss must be positive".into()));
        }
        self.hyper_params.validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Oracle seed of replicate `r`.
    pub fn replicate_seed(&self, r: usize) -> u64 {
        // splitmix64 of (seed, r) keeps neighbouring replicates decorrelated
        let mut z = self.oracle.seed.wrapping_add((r as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
}
