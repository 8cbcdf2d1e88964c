//! Elementwise kernels, a numerically stable softplus, nearest-rank order
//! statistics and log-log slope fitting.
//!
//! Vectors are plain `[f64]` slices. Every kernel that combines two vectors
//! checks lengths and returns [`Error::DimensionMismatch`] instead of
//! silently truncating the way `zip` would.

use crate::error::{check_len, Error, Result};

/// Above this value of `β·x` softplus is evaluated as `x + log1p(e^{-βx})/β`.
pub const SOFTPLUS_BRANCH: f64 = 30.0;

/// `(1/β)·ln(1 + e^{βx})` for `x ≥ 0`, `β > 0`, without overflow.
pub fn softplus_stable(x: f64, beta: f64) -> Result<f64> {
    if !beta.is_finite() || beta <= 0.0 {
        return Err(Error::Config(format!("softplus beta must be positive, got {beta}")));
    }
    if !x.is_finite() || x < 0.0 {
        return Err(Error::InputDomain(format!(
            "softplus argument must be finite and nonnegative, got {x}"
        )));
    }
    Ok(softplus_unchecked(x, beta))
}

/// Softplus without argument validation. Callers guarantee `x ≥ 0` and `β > 0`.
#[inline]
pub(crate) fn softplus_unchecked(x: f64, beta: f64) -> f64 {
    let bx = beta * x;
    if bx > SOFTPLUS_BRANCH {
        x + (-bx).exp().ln_1p() / beta
    } else {
        bx.exp().ln_1p() / beta
    }
}

/// Order statistic at rank `ceil(q/100 · d)` (rank 1 for `q = 0`) of a sorted copy.
pub fn percentile_nearest_rank(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InputDomain("percentile of an empty vector".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_of_sorted(&sorted, q)
}

/// Same as [`percentile_nearest_rank`] for input that is already sorted ascending.
pub fn percentile_of_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InputDomain("percentile of an empty vector".into()));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::InputDomain(format!("percentile must lie in [0, 100], got {q}")));
    }
    let d = sorted.len();
    let rank = ((q / 100.0) * d as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, d) - 1])
}

/// Least-squares slope of `ln(ys)` against `ln(ts)`.
pub fn loglog_slope(ts: &[f64], ys: &[f64]) -> Result<f64> {
    check_len(ts.len(), ys.len())?;
    if ts.len() < 2 {
        return Err(Error::InputDomain("slope fit needs at least two points".into()));
    }
    if let Some(bad) = ts.iter().chain(ys).find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InputDomain(format!("log-log fit needs positive entries, got {bad}")));
    }
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in lx.iter().zip(&ly) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        return Err(Error::InputDomain("slope fit needs at least two distinct abscissae".into()));
    }
    Ok(sxy / sxx)
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum())
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn hadamard(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y).collect())
}

pub fn elementwise_max(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x.max(*y)).collect())
}

pub fn elementwise_sqrt(a: &[f64]) -> Result<Vec<f64>> {
    a.iter()
        .map(|&x| {
            if x >= 0.0 {
                Ok(x.sqrt())
            } else {
                Err(Error::InputDomain(format!("sqrt of negative coordinate {x}")))
            }
        })
        .collect()
}

/// `y ← y + alpha·x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) -> Result<()> {
    check_len(y.len(), x.len())?;
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
    Ok(())
}

pub fn sub(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// Index of the first non-finite coordinate, if any.
pub fn first_non_finite(a: &[f64]) -> Option<usize> {
    a.iter().position(|x| !x.is_finite())
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Sample standard deviation (n − 1 denominator); zero for fewer than two values.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = values.iter().sum::<f64>() / n as f64;
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (n - 1) as f64).sqrt()
}
