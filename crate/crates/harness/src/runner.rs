use std::fs;
use std::path::Path;
use std::sync::Arc;

use alr_core::instrument::{snapshot_alr, z_residual, RunMeta, StepRecord, TrajectoryRecord, ZWindow};
use alr_core::numerics::{first_non_finite, mean, norm_sq, sample_std};
use alr_core::problems::{Oracle, Problem};
use alr_core::{Error, FirstMomentRule, OptimizerState, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

/// Everything one replicate produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// Full trace; `None` when rows were not requested.
    pub record: Option<TrajectoryRecord>,
    /// `‖∇f(x_t)‖²` for `t = 1..` up to the last evaluated iterate.
    pub grad_norm_sq: Vec<f64>,
    /// `(1/T)·Σ_{t=1..T} x_t` over the completed steps.
    pub x_avg: Vec<f64>,
    pub x_final: Vec<f64>,
    pub final_loss: f64,
    pub diverged_at: Option<u64>,
    pub clip_events: u64,
    pub seed: u64,
}

impl Outcome {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

pub(crate) fn check_z_support(cfg: &ExperimentConfig) -> Result<()> {
    if cfg.z_check {
        let (first, _) = cfg.method.rules();
        if first != FirstMomentRule::Ema || !cfg.method.uses_calibrator() {
            return Err(Error::Config(format!("z_check needs an adaptive momentum method, got {}", cfg.method)));
        }
        if cfg.hyper_params.bias_correction {
            return Err(Error::Config("z_check needs bias_correction = false".into()));
        }
    }
    Ok(())
}

/// Builds the configured problem, solving for `f*` when `need_f_star` is set.
pub fn build_problem(cfg: &ExperimentConfig, need_f_star: bool) -> Result<Arc<Problem>> {
    Ok(Arc::new(cfg.problem.build(need_f_star, cfg.cache_dir.as_deref())?))
}

/// Runs replicate `r` of `cfg` against an already built problem.
pub fn simulate(cfg: &ExperimentConfig, problem: &Arc<Problem>, r: usize, keep_rows: bool) -> Result<Outcome> {
    cfg.validate()?;
    check_z_support(cfg)?;
    let hp = &cfg.hyper_params;
    let x0 = cfg.x0.clone().unwrap_or_else(|| cfg.problem.default_x0(problem));
    let dim = problem.dim();
    let mut state = OptimizerState::init(cfg.method, dim, x0, hp)?;
    let seed = cfg.replicate_seed(r);
    let mut oracle = Oracle::new(problem.clone(), cfg.oracle.g_max.unwrap_or(f64::INFINITY), cfg.oracle.sigma, seed)?
        .with_mode(cfg.oracle.mode)?;

    let mut record = keep_rows.then(|| {
        TrajectoryRecord::new(RunMeta {
            method: cfg.method,
            hyper_params: hp.clone(),
            seed,
            problem: cfg.problem.label(),
            iters: cfg.iters,
            snapshot_every: cfg.snapshot_every,
            diverged_at: None,
        })
    });
    let mut grad_norm_sq = Vec::with_capacity(cfg.iters as usize + 1);
    let mut x_sum = vec![0.0; dim];
    let mut completed = 0usize;
    let mut prev_x = state.x.clone();
    let mut diverged_at = None;
    let mut final_loss = f64::NAN;
    let bad = |f: f64, g: &[f64]| !f.is_finite() || f > cfg.divergence_loss || first_non_finite(g).is_some();

    for t in 1..=cfg.iters {
        let (f, grad) = problem.eval_and_grad(&state.x)?;
        let gns = norm_sq(&grad);
        grad_norm_sq.push(gns);
        final_loss = f;
        let mut row = StepRecord { t, loss: f, grad_norm_sq: gns, eta_t: None, snapshot: None, z_residual: None };
        if bad(f, &grad) {
            diverged_at = Some(t);
            if let Some(rec) = record.as_mut() {
                rec.push(row)?;
            }
            break;
        }
        let g = oracle.stochastic_grad_with(&state.x, &grad)?;
        let before = cfg.z_check.then(|| state.clone());
        let x_t = (!cfg.z_check).then(|| state.x.clone());
        if state.step(&g, hp).is_err() {
            diverged_at = Some(t);
            if let Some(rec) = record.as_mut() {
                rec.push(row)?;
            }
            break;
        }
        let x_t = before.as_ref().map(|b| &b.x).or(x_t.as_ref()).expect("one of the two is set");
        for (s, x) in x_sum.iter_mut().zip(x_t) {
            *s += x;
        }
        completed += 1;
        if let Some(rec) = record.as_mut() {
            row.eta_t = Some(hp.eta_at(t));
            if cfg.snapshot_every > 0 && t % cfg.snapshot_every == 0 {
                row.snapshot = Some(snapshot_alr(&state, hp)?);
            }
            if let Some(b) = &before {
                row.z_residual = Some(z_residual(&ZWindow::from_states(&prev_x, b, &state, &g), hp)?);
            }
            rec.push(row)?;
        }
        if let Some(b) = before {
            prev_x = b.x;
        }
    }
    if diverged_at.is_none() {
        let (f, grad) = problem.eval_and_grad(&state.x)?;
        let gns = norm_sq(&grad);
        grad_norm_sq.push(gns);
        final_loss = f;
        if bad(f, &grad) {
            diverged_at = Some(cfg.iters + 1);
        }
        if let Some(rec) = record.as_mut() {
            let t = cfg.iters + 1;
            rec.push(StepRecord { t, loss: f, grad_norm_sq: gns, eta_t: None, snapshot: None, z_residual: None })?;
        }
    }
    if let Some(rec) = record.as_mut() {
        rec.meta.diverged_at = diverged_at;
    }
    let x_avg = x_sum.iter().map(|s| s / completed.max(1) as f64).collect();
    Ok(Outcome {
        record,
        grad_norm_sq,
        x_avg,
        x_final: state.x,
        final_loss,
        diverged_at,
        clip_events: oracle.clip_events(),
        seed,
    })
}

/// Runs replicate `r` and returns its trace.
pub fn run_replicate(cfg: &ExperimentConfig, r: usize) -> Result<TrajectoryRecord> {
    let problem = build_problem(cfg, false)?;
    let out = simulate(cfg, &problem, r, true)?;
    Ok(out.record.expect("rows requested"))
}

/// Runs every replicate in parallel; results are in replicate order.
pub fn run_all(cfg: &ExperimentConfig, problem: &Arc<Problem>, keep_rows: bool) -> Result<Vec<Outcome>> {
    (0..cfg.replicates).into_par_iter().map(|r| simulate(cfg, problem, r, keep_rows)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSummary {
    pub replicate: usize,
    pub seed: u64,
    pub final_loss: f64,
    pub final_grad_norm_sq: f64,
    pub min_grad_norm_sq: f64,
    pub test_accuracy: Option<f64>,
    pub clip_events: u64,
    pub diverged_at: Option<u64>,
    pub max_alr_spread: Option<f64>,
    pub max_z_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub problem: String,
    pub replicates: Vec<ReplicateSummary>,
    pub final_loss_mean: Option<f64>,
    pub final_loss_std: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub records: Vec<TrajectoryRecord>,
    pub summary: RunSummary,
}

/// Runs all replicates of `cfg`, writing traces and `summary.json` into
/// `cfg.out` when set.
pub fn run(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let problem = build_problem(cfg, false)?;
    let outcomes = run_all(cfg, &problem, true)?;
    let mut replicates = Vec::with_capacity(outcomes.len());
    let mut records = Vec::with_capacity(outcomes.len());
    for (r, mut o) in outcomes.into_iter().enumerate() {
        let rec = o.record.take().expect("rows requested");
        let test_accuracy = match problem.dataset() {
            Some(ds) if !o.diverged() && !ds.test.is_empty() => Some(problem.accuracy(&o.x_final, &ds.test)?),
            _ => None,
        };
        replicates.push(ReplicateSummary {
            replicate: r,
            seed: o.seed,
            final_loss: o.final_loss,
            final_grad_norm_sq: *o.grad_norm_sq.last().unwrap_or(&f64::NAN),
            min_grad_norm_sq: o.grad_norm_sq.iter().copied().fold(f64::INFINITY, f64::min),
            test_accuracy,
            clip_events: o.clip_events,
            diverged_at: o.diverged_at,
            max_alr_spread: rec.snapshots().map(|s| s.spread()).reduce(f64::max),
            max_z_residual: rec.max_z_residual(),
        });
        records.push(rec);
    }
    let losses: Vec<f64> = replicates.iter().filter(|r| r.diverged_at.is_none()).map(|r| r.final_loss).collect();
    let summary = RunSummary {
        config: cfg.clone(),
        problem: cfg.problem.label(),
        diverged: replicates.iter().any(|r| r.diverged_at.is_some()),
        final_loss_mean: mean(&losses),
        final_loss_std: sample_std(&losses),
        replicates,
    };
    if let Some(dir) = &cfg.out {
        write_run(dir, &records, &summary)?;
    }
    Ok(RunReport { records, summary })
}

pub fn write_run(dir: &Path, records: &[TrajectoryRecord], summary: &RunSummary) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (r, rec) in records.iter().enumerate() {
        rec.write_files(dir, &format!("trace-{r:03}"))?;
    }
    crate::output::write_json(&dir.join("summary.json"), summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ProblemSpec;
    use alr_core::{HyperParams, Method};

    #[test]
    fn sgd_hand_example() {
        let mut cfg = ExperimentConfig::new(
            ProblemSpec::Quadratic { eigenvalues: vec![1.0] },
            Method::Sgd,
            HyperParams::for_method(Method::Sgd, 0.5),
            1,
        );
        cfg.x0 = Some(vec![1.0]);
        let problem = build_problem(&cfg, false).unwrap();
        let out = simulate(&cfg, &problem, 0, true).unwrap();
        assert_eq!(out.x_final, vec![0.5]);
        let losses: Vec<f64> = out.record.unwrap().steps.iter().map(|s| s.loss).collect();
        assert_eq!(losses, vec![0.5, 0.125]);
        assert_eq!(out.x_avg, vec![1.0]);
    }

    #[test]
    fn huge_step_diverges() {
        let mut cfg = ExperimentConfig::new(
            ProblemSpec::Quadratic { eigenvalues: vec![1.0, 2.0] },
            Method::Sgd,
            HyperParams::for_method(Method::Sgd, 100.0),
            1000,
        );
        cfg.x0 = Some(vec![1.0, 1.0]);
        let problem = build_problem(&cfg, false).unwrap();
        let out = simulate(&cfg, &problem, 0, true).unwrap();
        let t = out.diverged_at.unwrap();
        assert!(t < 1000);
        let rec = out.record.unwrap();
        assert_eq!(rec.meta.diverged_at, Some(t));
        assert_eq!(rec.steps.len() as u64, t);
    }

    #[test]
    fn z_check_requires_momentum_method() {
        let mut cfg = ExperimentConfig::new(
            ProblemSpec::Rosenbrock { dim: 2 },
            Method::Sgd,
            HyperParams::for_method(Method::Sgd, 1e-3),
            5,
        );
        cfg.z_check = true;
        assert!(run_replicate(&cfg, 0).is_err());
        cfg.method = Method::Sadam;
        cfg.hyper_params = HyperParams::for_method(Method::Sadam, 1e-3);
        let rec = run_replicate(&cfg, 0).unwrap();
        assert!(rec.max_z_residual().unwrap() < 1e-9);
    }
}
