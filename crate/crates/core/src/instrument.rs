//! A-LR distribution snapshots, the auxiliary-sequence (`z_t`) residual, and
//! trajectory records with their CSV/JSON trace format.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrators::AlrBounds;
use crate::error::{check_len, Error, Result};
use crate::numerics::{norm, percentile_of_sorted};
use crate::optim::{FirstMomentRule, HyperParams, Method, OptimizerState};

pub const TRACE_HEADER: [&str; 10] = [
    "t",
    "loss",
    "grad_norm_sq",
    "eta_t",
    "alr_min",
    "alr_p25",
    "alr_median",
    "alr_p75",
    "alr_max",
    "z_residual",
];

/// Nearest-rank summary of one A-LR vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlrSnapshot {
    pub t: u64,
    pub min: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub max: f64,
}

impl AlrSnapshot {
    pub fn from_alr(t: u64, alr: &[f64]) -> Result<Self> {
        if alr.is_empty() {
            return Err(Error::InputDomain("empty A-LR vector".into()));
        }
        if let Some(j) = alr.iter().position(|a| a.is_nan()) {
            return Err(Error::InputDomain(format!("A-LR coordinate {j} is NaN")));
        }
        let mut sorted = alr.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            t,
            min: sorted[0],
            p25: percentile_of_sorted(&sorted, 25.0)?,
            median: percentile_of_sorted(&sorted, 50.0)?,
            p75: percentile_of_sorted(&sorted, 75.0)?,
            max: sorted[sorted.len() - 1],
        })
    }

    /// `max / min`, the anisotropy ratio.
    pub fn spread(&self) -> f64 {
        self.max / self.min
    }
}

/// Statistics of `1/denominator(√v_t)` for the current state.
pub fn snapshot_alr(state: &OptimizerState, hp: &HyperParams) -> Result<AlrSnapshot> {
    if state.t == 0 {
        return Err(Error::InputDomain("no moments before the first step (t = 0)".into()));
    }
    AlrSnapshot::from_alr(state.t, &state.alr(hp))
}

/// Consecutive quantities around step `t` of one trajectory.
///
/// At `t = 1` pass `x_prev = x`, `m_prev = 0` and `v_prev = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZWindow {
    pub t: u64,
    pub x_prev: Vec<f64>,
    pub x: Vec<f64>,
    pub x_next: Vec<f64>,
    pub m_prev: Vec<f64>,
    pub v_prev: Vec<f64>,
    pub v: Vec<f64>,
    pub g: Vec<f64>,
    /// Method that produced `x` and method that produced `x_next`.
    pub methods: [Method; 2],
}

impl ZWindow {
    /// Window for the step that turns `before` into `after` under gradient `g`.
    /// `prev_x` is the iterate before `before.x`.
    pub fn from_states(prev_x: &[f64], before: &OptimizerState, after: &OptimizerState, g: &[f64]) -> Self {
        Self {
            t: after.t,
            x_prev: prev_x.to_vec(),
            x: before.x.clone(),
            x_next: after.x.clone(),
            m_prev: before.m.clone(),
            v_prev: before.v.clone(),
            v: after.v.clone(),
            g: g.to_vec(),
            methods: [before.method, after.method],
        }
    }
}

/// `‖z_{t+1} − z_t − RHS‖ / max(1, ‖z_t‖)` with
/// `z_t = x_t + β₁/(1−β₁)·(x_t − x_{t−1})` and
/// `RHS = β₁/(1−β₁)·m_{t−1}⊙(η_{t−1}/d(v_{t−1}) − η_t/d(v_t)) − η_t·g_t/d(v_t)`.
///
/// With a constant step size this is the usual momentum auxiliary-sequence
/// identity; using `η_{t−1}` on the first term keeps it exact across decay stages.
pub fn z_residual(w: &ZWindow, hp: &HyperParams) -> Result<f64> {
    let [m0, m1] = w.methods;
    if m0 != m1 {
        return Err(Error::Config(format!("window mixes methods {m0} and {m1}")));
    }
    let (first, _) = m0.rules();
    if first != FirstMomentRule::Ema || !m0.uses_calibrator() {
        return Err(Error::Unsupported(format!("{m0} is not an adaptive momentum method")));
    }
    if hp.bias_correction {
        return Err(Error::Unsupported("z residual assumes bias correction is off".into()));
    }
    if w.t == 0 {
        return Err(Error::InputDomain("window step must be >= 1".into()));
    }
    let d = w.x.len();
    for len in [w.x_prev.len(), w.x_next.len(), w.m_prev.len(), w.v_prev.len(), w.v.len(), w.g.len()] {
        check_len(d, len)?;
    }
    let k = hp.beta1 / (1.0 - hp.beta1);
    let eta_t = hp.eta_at(w.t);
    let eta_prev = hp.eta_at(w.t.saturating_sub(1).max(1));
    let cal = &hp.calibrator;
    let mut res_sq = 0.0;
    let mut z_sq = 0.0;
    for j in 0..d {
        let dt = cal.denominator_coord(w.v[j].sqrt(), w.t);
        let prev_term = if w.m_prev[j] == 0.0 {
            0.0
        } else {
            let dp = cal.denominator_coord(w.v_prev[j].sqrt(), w.t.saturating_sub(1).max(1));
            eta_prev / dp
        };
        let rhs = k * w.m_prev[j] * (prev_term - eta_t / dt) - eta_t * w.g[j] / dt;
        let step_next = w.x_next[j] - w.x[j];
        let step_prev = w.x[j] - w.x_prev[j];
        let lhs = step_next + k * (step_next - step_prev);
        let r = lhs - rhs;
        if !r.is_finite() {
            return Err(Error::InputDomain(format!("non-finite residual at coordinate {j}")));
        }
        res_sq += r * r;
        let z = w.x[j] + k * step_prev;
        z_sq += z * z;
    }
    Ok(res_sq.sqrt() / z_sq.sqrt().max(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    /// `f(x_t)`.
    pub loss: f64,
    /// `‖∇f(x_t)‖²` of the exact gradient.
    pub grad_norm_sq: f64,
    /// Step size of the update out of `x_t`; absent on the final row.
    pub eta_t: Option<f64>,
    pub snapshot: Option<AlrSnapshot>,
    pub z_residual: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub method: Method,
    pub hyper_params: HyperParams,
    pub seed: u64,
    pub problem: String,
    pub iters: u64,
    pub snapshot_every: u64,
    /// Step whose update failed, if the run aborted.
    pub diverged_at: Option<u64>,
}

impl RunMeta {
    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    #[serde(flatten)]
    meta: &'a RunMeta,
    diverged: bool,
    rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub meta: RunMeta,
    pub steps: Vec<StepRecord>,
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl TrajectoryRecord {
    pub fn new(meta: RunMeta) -> Self {
        Self { meta, steps: Vec::new() }
    }

    /// Appends a row; step indices must run 1, 2, 3, ...
    pub fn push(&mut self, row: StepRecord) -> Result<()> {
        let expected = self.steps.len() as u64 + 1;
        if row.t != expected {
            return Err(Error::InputDomain(format!("expected step {expected}, got {}", row.t)));
        }
        self.steps.push(row);
        Ok(())
    }

    pub fn snapshots(&self) -> impl Iterator<Item = &AlrSnapshot> {
        self.steps.iter().filter_map(|s| s.snapshot.as_ref())
    }

    pub fn max_z_residual(&self) -> Option<f64> {
        self.steps.iter().filter_map(|s| s.z_residual).reduce(f64::max)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(TRACE_HEADER)?;
        for s in &self.steps {
            let snap = s.snapshot.as_ref();
            w.write_record([
                s.t.to_string(),
                s.loss.to_string(),
                s.grad_norm_sq.to_string(),
                cell(s.eta_t),
                cell(snap.map(|a| a.min)),
                cell(snap.map(|a| a.p25)),
                cell(snap.map(|a| a.median)),
                cell(snap.map(|a| a.p75)),
                cell(snap.map(|a| a.max)),
                cell(s.z_residual),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn sidecar_json(&self) -> Result<String> {
        let sidecar = Sidecar { meta: &self.meta, diverged: self.meta.diverged(), rows: self.steps.len() };
        Ok(serde_json::to_string_pretty(&sidecar)?)
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`; returns both paths.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let json_path = dir.join(format!("{stem}.json"));
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        fs::write(&csv_path, buf)?;
        fs::write(&json_path, self.sidecar_json()?)?;
        Ok((csv_path, json_path))
    }
}

/// Number of snapshots that fall outside `bounds` by more than a relative 1e-12.
pub fn bound_violations(traj: &TrajectoryRecord, bounds: &AlrBounds) -> Result<usize> {
    let mut seen = false;
    let mut count = 0;
    for s in traj.snapshots() {
        seen = true;
        if s.min < bounds.mu_lower * (1.0 - 1e-12) || s.max > bounds.mu_upper * (1.0 + 1e-12) {
            count += 1;
        }
    }
    if !seen {
        return Err(Error::InputDomain("trajectory carries no A-LR snapshots".into()));
    }
    Ok(count)
}

/// Relative size of `a − b` scaled by `max(1, ‖b‖)`; handy for comparing iterates.
pub fn relative_gap(a: &[f64], b: &[f64]) -> Result<f64> {
    let diff = crate::numerics::sub(a, b)?;
    Ok(norm(&diff) / norm(b).max(1.0))
}
