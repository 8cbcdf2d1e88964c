use std::path::PathBuf;
use std::process::ExitCode;

use alr_core::{Error, HyperParams, Method, Result};
use alr_harness::output::{write_json, write_table_csv};
use alr_harness::study::RateRow;
use alr_harness::{
    compare, grid_search, rate_study, run, EtaRule, ExperimentConfig, GridMetric, Lattice, ProblemSpec, RateMetric,
    RateStudy,
};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "alr-bench", version, about = "Run, grid-search, rate-study and compare adaptive optimizers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Replicated runs with full traces.
    Run(Common),
    /// Grid search over a hyper-parameter lattice.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "final-train-loss")]
        metric: GridMetricArg,
        /// JSON lattice file; defaults to the standard lattice.
        #[arg(long)]
        lattice: Option<PathBuf>,
    },
    /// Log-log rate study over a horizon grid.
    Rate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "100,1000,10000")]
        t_grid: Vec<u64>,
        #[arg(long, value_enum, default_value = "const-over-sqrt-t")]
        rule: RuleArg,
        #[arg(long, value_enum, default_value = "min-grad-norm-sq")]
        metric: RateMetricArg,
        /// Step-size constant; calibrated at the smallest horizon when omitted.
        #[arg(long)]
        c: Option<f64>,
    },
    /// Mean ± std table across methods on one problem.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        methods: Vec<String>,
        #[arg(long, value_enum, default_value = "final-train-loss")]
        metric: GridMetricArg,
    },
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    /// Preset name: quadratic, rosenbrock, logistic, mlp.
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Softplus sharpness.
    #[arg(long)]
    beta: Option<f64>,
    /// Exponent of the power calibrator.
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    iters: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long)]
    snapshot_every: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    g_max: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum GridMetricArg {
    FinalTrainLoss,
    TestAccuracy,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    ConstOverSqrtT,
    ConstOverT,
    LogTOverT,
    ConstOverTSq,
    Fixed,
}

#[derive(Clone, Copy, ValueEnum)]
enum RateMetricArg {
    MinGradNormSq,
    AvgIterateGap,
    FinalGap,
}

impl From<GridMetricArg> for GridMetric {
    fn from(m: GridMetricArg) -> Self {
        match m {
            GridMetricArg::FinalTrainLoss => GridMetric::FinalTrainLoss,
            GridMetricArg::TestAccuracy => GridMetric::TestAccuracy,
        }
    }
}

fn parse_method(s: &str) -> Result<Method> {
    s.parse::<Method>().map_err(|e| Error::Config(format!("{e}")))
}

impl Common {
    fn build(&self, method_override: Option<Method>) -> Result<ExperimentConfig> {
        let method = match (method_override, &self.method) {
            (Some(m), _) => Some(m),
            (None, Some(s)) => Some(parse_method(s)?),
            (None, None) => None,
        };
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => {
                let method = method.ok_or_else(|| Error::Config("--method or --config is required".into()))?;
                let problem = ProblemSpec::preset(self.problem.as_deref().unwrap_or("quadratic"))?;
                ExperimentConfig::new(problem, method, HyperParams::for_method(method, 1e-3), 1000)
            }
        };
        if let Some(m) = method {
            if m != cfg.method {
                cfg.hyper_params = HyperParams::for_method(m, cfg.hyper_params.eta);
                cfg.method = m;
            }
        }
        if self.config.is_some() {
            if let Some(p) = &self.problem {
                cfg.problem = ProblemSpec::preset(p)?;
                cfg.x0 = None;
            }
        }
        let hp = &mut cfg.hyper_params;
        if let Some(eta) = self.eta {
            *hp = hp.clone().with_eta(eta);
        }
        if let Some(v) = self.beta1 {
            hp.beta1 = v;
        }
        if let Some(v) = self.beta2 {
            hp.beta2 = v;
        }
        if let Some(v) = self.epsilon {
            hp.calibrator.epsilon = v;
        }
        if let Some(v) = self.beta {
            hp.calibrator.beta = v;
        }
        if let Some(v) = self.p {
            hp.calibrator.p = v;
        }
        if let Some(v) = self.iters {
            cfg.iters = v;
        }
        if let Some(v) = self.seed {
            cfg.oracle.seed = v;
        }
        if let Some(v) = self.replicates {
            cfg.replicates = v;
        }
        if let Some(v) = self.snapshot_every {
            cfg.snapshot_every = v;
        }
        if let Some(v) = self.sigma {
            cfg.oracle.sigma = v;
        }
        if let Some(v) = self.g_max {
            cfg.oracle.g_max = Some(v);
        }
        cfg.out = Some(self.out.clone());
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct GridSummary<'a> {
    base: &'a ExperimentConfig,
    lattice: &'a Lattice,
    rows: &'a [alr_harness::GridRow],
}

#[derive(Serialize)]
struct RateSummary<'a> {
    study: &'a RateStudy,
    c: f64,
    calibration: &'a [(f64, Option<f64>)],
    slope: f64,
    rows: &'a [RateRow],
}

#[derive(Serialize)]
struct CompareSummary<'a> {
    configs: &'a [ExperimentConfig],
    rows: &'a [alr_harness::CompareRow],
}

/// Returns whether any run diverged.
fn execute(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Run(common) => {
            let cfg = common.build(None)?;
            let report = run(&cfg)?;
            for r in &report.summary.replicates {
                println!(
                    "replicate {} seed {}: final loss {} |grad|^2 {}{}",
                    r.replicate,
                    r.seed,
                    r.final_loss,
                    r.final_grad_norm_sq,
                    r.diverged_at.map(|t| format!(" DIVERGED at step {t}")).unwrap_or_default()
                );
            }
            println!("wrote {}", common.out.display());
            Ok(report.summary.diverged)
        }
        Cmd::Grid { common, metric, lattice } => {
            let cfg = common.build(None)?;
            let lattice = match lattice {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
                None => Lattice::default(),
            };
            let rows = grid_search(&cfg, &lattice, metric.into())?;
            write_table_csv(&common.out.join("grid.csv"), &rows)?;
            write_json(&common.out.join("summary.json"), &GridSummary { base: &cfg, lattice: &lattice, rows: &rows })?;
            if let Some(best) = rows.first() {
                println!("best cell {}: eta {} beta1 {} beta2 {} beta {:?} -> {:?}", best.cell, best.eta, best.beta1, best.beta2, best.beta, best.mean);
            }
            // diverged cells are part of the table, not a failed command
            Ok(false)
        }
        Cmd::Rate { common, t_grid, rule, metric, c } => {
            let base = common.build(None)?;
            let study = RateStudy {
                base,
                t_grid,
                rule: match rule {
                    RuleArg::ConstOverSqrtT => EtaRule::ConstOverSqrtT,
                    RuleArg::ConstOverT => EtaRule::ConstOverT,
                    RuleArg::LogTOverT => EtaRule::LogTOverT,
                    RuleArg::ConstOverTSq => EtaRule::ConstOverTSq,
                    RuleArg::Fixed => EtaRule::Fixed,
                },
                metric: match metric {
                    RateMetricArg::MinGradNormSq => RateMetric::MinGradNormSq,
                    RateMetricArg::AvgIterateGap => RateMetric::AvgIterateGap,
                    RateMetricArg::FinalGap => RateMetric::FinalGap,
                },
                c,
                c_candidates: vec![0.01, 0.03, 0.1, 0.3, 1.0, 3.0],
            };
            let res = match rate_study(&study) {
                Err(Error::Diverged(msg)) => {
                    eprintln!("{msg}");
                    return Ok(true);
                }
                other => other?,
            };
            write_table_csv(&common.out.join("rate.csv"), &res.rows)?;
            write_json(
                &common.out.join("summary.json"),
                &RateSummary { study: &study, c: res.c, calibration: &res.calibration, slope: res.slope, rows: &res.rows },
            )?;
            println!("c = {}, slope = {}", res.c, res.slope);
            Ok(false)
        }
        Cmd::Compare { common, methods, metric } => {
            let configs = methods
                .iter()
                .map(|m| common.build(Some(parse_method(m)?)))
                .collect::<Result<Vec<_>>>()?;
            let rows = compare(&configs, metric.into())?;
            write_table_csv(&common.out.join("compare.csv"), &rows)?;
            write_json(&common.out.join("summary.json"), &CompareSummary { configs: &configs, rows: &rows })?;
            for r in &rows {
                println!("{:<28} {}", r.label, r.formatted);
            }
            Ok(rows.iter().any(|r| r.diverged > 0))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(false) => ExitCode::SUCCESS,
        Ok(true) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
