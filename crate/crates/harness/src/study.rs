//! Rate-scaling studies, grid search and replicated comparisons.

use std::sync::Arc;

use alr_core::numerics::{loglog_slope, mean, sample_std};
use alr_core::problems::Problem;
use alr_core::{CalibratorKind, Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::runner::{build_problem, simulate, Outcome};

/// Base-LR schedule as a function of the horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaRule {
    ConstOverSqrtT,
    ConstOverT,
    /// `c·ln(T)/T`: the usual strongly-convex horizon schedule.
    LogTOverT,
    ConstOverTSq,
    Fixed,
}

impl EtaRule {
    pub fn eta(self, c: f64, horizon: u64) -> f64 {
        let t = horizon as f64;
        match self {
            EtaRule::ConstOverSqrtT => c / t.sqrt(),
            EtaRule::ConstOverT => c / t,
            EtaRule::LogTOverT => c * t.ln() / t,
            EtaRule::ConstOverTSq => c / (t * t),
            EtaRule::Fixed => c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMetric {
    /// `min_t E‖∇f(x_t)‖²`: replicate mean per step, then the minimum over `t ≤ T`.
    MinGradNormSq,
    /// `E[f(x̄_T)] − f*` with `x̄_T` the running average of `x_1..x_T`.
    AvgIterateGap,
    /// `E[f(x_{T+1})] − f*`.
    FinalGap,
}

impl RateMetric {
    fn needs_f_star(self) -> bool {
        !matches!(self, RateMetric::MinGradNormSq)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateStudy {
    pub base: ExperimentConfig,
    pub t_grid: Vec<u64>,
    pub rule: EtaRule,
    pub metric: RateMetric,
    /// Fixed constant; when absent it is picked from `c_candidates` at the smallest `T`.
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default = "default_candidates")]
    pub c_candidates: Vec<f64>,
}

fn default_candidates() -> Vec<f64> {
    vec![0.01, 0.03, 0.1, 0.3, 1.0, 3.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub t: u64,
    pub eta: f64,
    pub metric: f64,
    /// Sample std of the per-replicate metric (zero for `min_grad_norm_sq`,
    /// which is defined on the replicate mean).
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub c: f64,
    /// `(c, metric at the smallest T)` for each calibration candidate; `None` if it diverged.
    pub calibration: Vec<(f64, Option<f64>)>,
    pub rows: Vec<RateRow>,
    pub slope: f64,
}

impl RateResult {
    /// Metric strictly decreases along the `T` grid.
    pub fn monotone_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].metric < w[0].metric)
    }
}

/// Log-log slope of a metric table; exposed so metrics computed elsewhere
/// can be fitted the same way.
pub fn fit_rate(ts: &[u64], metric: &[f64]) -> Result<f64> {
    let ts: Vec<f64> = ts.iter().map(|&t| t as f64).collect();
    loglog_slope(&ts, metric)
}

fn study_metric(metric: RateMetric, problem: &Problem, runs: &[Outcome], horizon: u64) -> Result<(f64, f64)> {
    match metric {
        RateMetric::MinGradNormSq => {
            let n = runs.len() as f64;
            let min = (0..horizon as usize)
                .map(|t| runs.iter().map(|o| o.grad_norm_sq[t]).sum::<f64>() / n)
                .fold(f64::INFINITY, f64::min);
            Ok((min, 0.0))
        }
        RateMetric::AvgIterateGap | RateMetric::FinalGap => {
            let gaps = runs
                .iter()
                .map(|o| {
                    let x = if metric == RateMetric::AvgIterateGap { &o.x_avg } else { &o.x_final };
                    problem.optimality_gap(x)
                })
                .collect::<Result<Vec<f64>>>()?;
            Ok((mean(&gaps).unwrap_or(f64::NAN), sample_std(&gaps)))
        }
    }
}

fn run_horizon(study: &RateStudy, problem: &Arc<Problem>, c: f64, horizon: u64) -> Result<(Vec<Outcome>, ExperimentConfig)> {
    let mut cfg = study.base.clone();
    cfg.iters = horizon;
    cfg.hyper_params = cfg.hyper_params.clone().with_eta(study.rule.eta(c, horizon));
    cfg.validate()?;
    let runs = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| simulate(&cfg, problem, r, false))
        .collect::<Result<Vec<_>>>()?;
    Ok((runs, cfg))
}

pub fn rate_study(study: &RateStudy) -> Result<RateResult> {
    if study.t_grid.len() < 3 || study.t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("T grid must be strictly increasing with at least 3 points".into()));
    }
    let problem = build_problem(&study.base, study.metric.needs_f_star())?;
    if study.metric.needs_f_star() && problem.f_star().is_none() {
        return Err(Error::Config(format!("metric {:?} needs a known f* for {}", study.metric, problem.name())));
    }

    let t0 = study.t_grid[0];
    let mut calibration = Vec::new();
    let c = match study.c {
        Some(c) => c,
        None => {
            let mut best: Option<(f64, f64)> = None;
            for &c in &study.c_candidates {
                let (runs, _) = run_horizon(study, &problem, c, t0)?;
                let m = if runs.iter().any(Outcome::diverged) {
                    None
                } else {
                    Some(study_metric(study.metric, &problem, &runs, t0)?.0).filter(|m| m.is_finite())
                };
                calibration.push((c, m));
                if let Some(m) = m {
                    if best.is_none_or(|(_, b)| m < b) {
                        best = Some((c, m));
                    }
                }
            }
            best.ok_or_else(|| Error::Config("every calibration candidate diverged".into()))?.0
        }
    };

    let mut rows = Vec::with_capacity(study.t_grid.len());
    for &horizon in &study.t_grid {
        let (runs, cfg) = run_horizon(study, &problem, c, horizon)?;
        let failed: Vec<String> = runs
            .iter()
            .enumerate()
            .filter_map(|(r, o)| o.diverged_at.map(|t| format!("T={horizon} replicate {r} at step {t}")))
            .collect();
        if !failed.is_empty() {
            return Err(Error::Diverged(format!("rate study runs {}", failed.join(", "))));
        }
        let (metric, std) = study_metric(study.metric, &problem, &runs, horizon)?;
        rows.push(RateRow { t: horizon, eta: cfg.hyper_params.eta, metric, std });
    }
    let ts: Vec<u64> = rows.iter().map(|r| r.t).collect();
    let ms: Vec<f64> = rows.iter().map(|r| r.metric).collect();
    let slope = fit_rate(&ts, &ms)?;
    Ok(RateResult { c, calibration, rows, slope })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub eta: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    /// Only applied to softplus-calibrated methods.
    pub beta: Vec<f64>,
}

impl Default for Lattice {
    fn default() -> Self {
        Self {
            eta: vec![10.0, 1.0, 0.1, 0.01, 0.001, 0.0001],
            beta1: vec![0.9, 0.99],
            beta2: vec![0.99, 0.999],
            beta: vec![10.0, 50.0, 100.0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMetric {
    FinalTrainLoss,
    TestAccuracy,
}

impl GridMetric {
    fn higher_is_better(self) -> bool {
        self == GridMetric::TestAccuracy
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub rank: usize,
    pub cell: usize,
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta: Option<f64>,
    /// Mean over replicates; `None` for diverged cells.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub diverged: bool,
}

fn final_metric(metric: GridMetric, problem: &Problem, o: &Outcome) -> Result<f64> {
    match metric {
        GridMetric::FinalTrainLoss => Ok(o.final_loss),
        GridMetric::TestAccuracy => {
            let ds = problem
                .dataset()
                .ok_or_else(|| Error::Config(format!("test accuracy needs a dataset problem, got {}", problem.name())))?;
            problem.accuracy(&o.x_final, &ds.test)
        }
    }
}

/// Runs every lattice cell (replicated) and ranks the cells by metric mean.
/// Diverged cells are kept, flagged and ranked last.
pub fn grid_search(base: &ExperimentConfig, lattice: &Lattice, metric: GridMetric) -> Result<Vec<GridRow>> {
    base.validate()?;
    if lattice.eta.is_empty() || lattice.beta1.is_empty() || lattice.beta2.is_empty() {
        return Err(Error::Config("lattice axes must be nonempty".into()));
    }
    let softplus = base.hyper_params.calibrator.kind == CalibratorKind::Softplus;
    let betas: Vec<Option<f64>> = if softplus && !lattice.beta.is_empty() {
        lattice.beta.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let mut cells = Vec::new();
    for &eta in &lattice.eta {
        for &beta1 in &lattice.beta1 {
            for &beta2 in &lattice.beta2 {
                for &beta in &betas {
                    let mut cfg = base.clone();
                    cfg.hyper_params = cfg.hyper_params.clone().with_eta(eta);
                    cfg.hyper_params.beta1 = beta1;
                    cfg.hyper_params.beta2 = beta2;
                    if let Some(b) = beta {
                        cfg.hyper_params.calibrator.beta = b;
                    }
                    cfg.validate()?;
                    cells.push(cfg);
                }
            }
        }
    }
    let problem = build_problem(base, false)?;
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..base.replicates).map(move |r| (c, r))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(c, r)| simulate(&cells[c], &problem, r, false))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(cells.len());
    for (c, cfg) in cells.iter().enumerate() {
        let runs = &outcomes[c * base.replicates..(c + 1) * base.replicates];
        let diverged = runs.iter().any(Outcome::diverged);
        let (m, s) = if diverged {
            (None, None)
        } else {
            let vals = runs.iter().map(|o| final_metric(metric, &problem, o)).collect::<Result<Vec<_>>>()?;
            (mean(&vals), Some(sample_std(&vals)))
        };
        let hp = &cfg.hyper_params;
        rows.push(GridRow {
            rank: 0,
            cell: c,
            eta: hp.eta,
            beta1: hp.beta1,
            beta2: hp.beta2,
            beta: softplus.then_some(hp.calibrator.beta),
            mean: m,
            std: s,
            diverged,
        });
    }
    rows.sort_by(|a, b| match (a.mean, b.mean) {
        (Some(x), Some(y)) => {
            let ord = if metric.higher_is_better() { y.total_cmp(&x) } else { x.total_cmp(&y) };
            ord.then(a.cell.cmp(&b.cell))
        }
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => a.cell.cmp(&b.cell),
    });
    for (i, r) in rows.iter_mut().enumerate() {
        r.rank = i + 1;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub label: String,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub replicates: usize,
    pub diverged: usize,
    /// `mean±std` with two decimals, in the style of a results table.
    pub formatted: String,
}

/// Label used in comparison tables, e.g. `adam(eps=1e-8)` or `sadam(beta=50)`.
pub fn method_label(cfg: &ExperimentConfig) -> String {
    let c = &cfg.hyper_params.calibrator;
    let detail = match cfg.method.canonical_calibrator().or_else(|| cfg.method.uses_calibrator().then_some(c.kind)) {
        Some(CalibratorKind::EpsShift) => format!("eps={:e}", c.epsilon),
        Some(CalibratorKind::Softplus) => format!("beta={}", c.beta),
        Some(CalibratorKind::PowerP) => format!("p={}", c.p),
        Some(CalibratorKind::Clip) => format!("clip=[{},{}]", c.eta_lower, c.eta_upper),
        None => format!("eta={}", cfg.hyper_params.eta),
    };
    format!("{}({detail})", cfg.method)
}

/// Per-config mean ± sample std of the final metric over replicates.
pub fn compare(configs: &[ExperimentConfig], metric: GridMetric) -> Result<Vec<CompareRow>> {
    let first = configs.first().ok_or_else(|| Error::Config("nothing to compare".into()))?;
    for c in configs {
        c.validate()?;
        if c.problem != first.problem || c.iters != first.iters {
            return Err(Error::Config("compared configs must share problem and T".into()));
        }
    }
    let problem = build_problem(first, false)?;
    let jobs: Vec<(usize, usize)> =
        configs.iter().enumerate().flat_map(|(i, c)| (0..c.replicates).map(move |r| (i, r))).collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(i, r)| simulate(&configs[i], &problem, r, false))
        .collect::<Result<Vec<_>>>()?;
    let scale = if metric == GridMetric::TestAccuracy { 100.0 } else { 1.0 };
    let mut rows = Vec::with_capacity(configs.len());
    let mut offset = 0;
    for cfg in configs {
        let runs = &outcomes[offset..offset + cfg.replicates];
        offset += cfg.replicates;
        let ok: Vec<&Outcome> = runs.iter().filter(|o| !o.diverged()).collect();
        let vals = ok.iter().map(|o| final_metric(metric, &problem, o)).collect::<Result<Vec<_>>>()?;
        let m = mean(&vals);
        let s = (!vals.is_empty()).then(|| sample_std(&vals));
        let formatted = match (m, s) {
            (Some(m), Some(s)) => format!("{:.2}±{:.2}", m * scale, s * scale),
            _ => "diverged".to_string(),
        };
        rows.push(CompareRow {
            label: method_label(cfg),
            mean: m,
            std: s,
            replicates: cfg.replicates,
            diverged: runs.len() - ok.len(),
            formatted,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProblemSpec;
    use alr_core::{HyperParams, Method};

    fn quad_cfg(method: Method, eta: f64) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(
            ProblemSpec::QuadraticLog { dim: 5, lo: 0.2, hi: 1.0 },
            method,
            HyperParams::for_method(method, eta),
            200,
        );
        c.oracle.sigma = 0.1;
        c
    }

    #[test]
    fn synthetic_rate_slope() {
        let ts = [100u64, 1_000, 10_000, 100_000];
        let ys: Vec<f64> = ts.iter().map(|&t| 3.0 / (t as f64).sqrt()).collect();
        assert!((fit_rate(&ts, &ys).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn eta_rules() {
        assert_eq!(EtaRule::ConstOverSqrtT.eta(2.0, 100), 0.2);
        assert_eq!(EtaRule::ConstOverT.eta(2.0, 100), 0.02);
        assert_eq!(EtaRule::LogTOverT.eta(1.0, 1), 0.0);
        assert_eq!(EtaRule::ConstOverTSq.eta(2.0, 10), 0.02);
        assert_eq!(EtaRule::Fixed.eta(2.0, 10), 2.0);
    }

    #[test]
    fn rate_study_validation() {
        let study = RateStudy {
            base: quad_cfg(Method::Adam, 0.1),
            t_grid: vec![10, 100],
            rule: EtaRule::ConstOverSqrtT,
            metric: RateMetric::MinGradNormSq,
            c: Some(0.1),
            c_candidates: default_candidates(),
        };
        assert!(rate_study(&study).is_err());
        let mut s = study.clone();
        s.t_grid = vec![10, 100, 100];
        assert!(rate_study(&s).is_err());
        let mut s = study;
        s.base = ExperimentConfig::new(ProblemSpec::preset("mlp").unwrap(), Method::Adam, HyperParams::default(), 1);
        s.t_grid = vec![10, 20, 40];
        s.metric = RateMetric::FinalGap;
        assert!(rate_study(&s).is_err());
    }

    #[test]
    fn rate_study_reports_divergence() {
        let mut base = quad_cfg(Method::Sgd, 1.0);
        base.oracle.sigma = 0.0;
        let study = RateStudy {
            base,
            t_grid: vec![50, 100, 200],
            rule: EtaRule::Fixed,
            metric: RateMetric::FinalGap,
            c: Some(50.0),
            c_candidates: vec![],
        };
        let err = rate_study(&study).unwrap_err().to_string();
        assert!(err.contains("T=50 replicate 0"), "{err}");
    }

    #[test]
    fn calibration_picks_a_candidate() {
        let mut base = quad_cfg(Method::Adam, 0.1);
        base.replicates = 2;
        let study = RateStudy {
            base,
            t_grid: vec![50, 100, 200],
            rule: EtaRule::ConstOverSqrtT,
            metric: RateMetric::FinalGap,
            c: None,
            c_candidates: vec![0.01, 0.3, 1e6],
        };
        let res = rate_study(&study).unwrap();
        assert_eq!(res.calibration.len(), 3);
        assert!(res.c == 0.01 || res.c == 0.3);
        assert_eq!(res.rows.len(), 3);
    }

    #[test]
    fn grid_single_cell_matches_run() {
        let mut cfg = quad_cfg(Method::Adam, 0.1);
        cfg.replicates = 2;
        let lattice = Lattice { eta: vec![0.1], beta1: vec![0.9], beta2: vec![0.999], beta: vec![50.0] };
        let rows = grid_search(&cfg, &lattice, GridMetric::FinalTrainLoss).unwrap();
        assert_eq!(rows.len(), 1);
        let report = crate::runner::run(&cfg).unwrap();
        assert_eq!(rows[0].mean, report.summary.final_loss_mean);
        assert_eq!(rows[0].beta, None);
    }

    #[test]
    fn grid_ranks_diverged_last() {
        let mut cfg = quad_cfg(Method::Sgd, 0.1);
        cfg.oracle.sigma = 0.0;
        cfg.iters = 300;
        let lattice = Lattice { eta: vec![100.0, 0.5, 0.1, 0.1], beta1: vec![0.9], beta2: vec![0.999], beta: vec![] };
        let rows = grid_search(&cfg, &lattice, GridMetric::FinalTrainLoss).unwrap();
        assert_eq!(rows.len(), 4);
        let last = rows.last().unwrap();
        assert!(last.diverged && last.eta == 100.0 && last.mean.is_none());
        assert_eq!(rows[0].eta, 0.5);
        // identical lattice points give identical metrics
        let twins: Vec<&GridRow> = rows.iter().filter(|r| r.eta == 0.1).collect();
        assert_eq!(twins[0].mean, twins[1].mean);
    }

    #[test]
    fn grid_sweeps_beta_for_softplus() {
        let mut cfg = quad_cfg(Method::Sadam, 0.1);
        cfg.iters = 20;
        let lattice = Lattice { eta: vec![0.1], beta1: vec![0.9], beta2: vec![0.999], beta: vec![10.0, 50.0, 100.0] };
        let rows = grid_search(&cfg, &lattice, GridMetric::FinalTrainLoss).unwrap();
        let mut betas: Vec<f64> = rows.iter().map(|r| r.beta.unwrap()).collect();
        betas.sort_by(f64::total_cmp);
        assert_eq!(betas, vec![10.0, 50.0, 100.0]);
    }

    #[test]
    fn compare_rows() {
        let mut a = quad_cfg(Method::Adam, 0.1);
        a.oracle.sigma = 0.0;
        a.replicates = 6;
        let rows = compare(&[a.clone(), a.clone()], GridMetric::FinalTrainLoss).unwrap();
        assert_eq!(rows[0], rows[1]);
        assert_eq!(rows[0].std, Some(0.0));
        assert_eq!(rows[0].label, "adam(eps=1e-8)");
        let mut b = quad_cfg(Method::Sadam, 0.1);
        b.problem = ProblemSpec::Rosenbrock { dim: 2 };
        assert!(compare(&[a, b], GridMetric::FinalTrainLoss).is_err());
    }
}
