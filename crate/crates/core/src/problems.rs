//! Objectives with exact gradients, and stochastic oracles that enforce a
//! gradient-norm bound `G` and a noise scale `σ`.

use std::sync::Arc;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_len, Error, Result};
use crate::numerics::{norm, norm_sq};

/// `f(x) = ½ Σ a_j x_j²`, i.e. `½ xᵀAx` with `A = diag(spectrum)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quadratic {
    pub spectrum: Vec<f64>,
}

impl Quadratic {
    pub fn new(spectrum: Vec<f64>) -> Result<Self> {
        if spectrum.is_empty() {
            return Err(Error::Config("quadratic needs at least one eigenvalue".into()));
        }
        if let Some(a) = spectrum.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(Error::Config(format!("quadratic eigenvalues must be >= 0, got {a}")));
        }
        Ok(Self { spectrum })
    }

    /// `d` eigenvalues spaced geometrically from `lo` to `hi`.
    pub fn log_spaced(d: usize, lo: f64, hi: f64) -> Result<Self> {
        if d == 0 || !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("log-spaced spectrum needs d > 0 and 0 < lo <= hi, got {d}, {lo}, {hi}")));
        }
        if d == 1 {
            return Self::new(vec![hi]);
        }
        let ratio = (hi / lo).ln() / (d - 1) as f64;
        Self::new((0..d).map(|j| lo * (ratio * j as f64).exp()).collect())
    }
}

/// Chained Rosenbrock `Σ 100(x_{i+1} − x_i²)² + (1 − x_i)²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rosenbrock {
    pub dim: usize,
}

/// Softmax regression: `k × d_in` weights followed by `k` biases.
#[derive(Debug, Clone)]
pub struct Logistic {
    pub data: Arc<Dataset>,
    pub l2: f64,
    pub f_star: Option<f64>,
}

/// Two-layer tanh network `d_in → hidden → k` with softmax cross-entropy.
///
/// Parameter layout: `W1 (hidden × d_in)`, `b1 (hidden)`, `W2 (k × hidden)`, `b2 (k)`.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub data: Arc<Dataset>,
    pub hidden: usize,
    pub l2: f64,
}

pub const MLP_MAX_HIDDEN: usize = 64;

#[derive(Debug, Clone)]
pub enum Problem {
    Quadratic(Quadratic),
    Rosenbrock(Rosenbrock),
    Logistic(Logistic),
    Mlp(Mlp),
}

fn log_softmax_ce(logits: &mut [f64], label: usize) -> f64 {
    // turns `logits` into probabilities in place and returns −log p[label]
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    let loss = -(logits[label] / sum).ln();
    for z in logits.iter_mut() {
        *z /= sum;
    }
    loss
}

impl Logistic {
    pub fn new(data: Arc<Dataset>, l2: f64) -> Result<Self> {
        if !(l2.is_finite() && l2 >= 0.0) {
            return Err(Error::Config(format!("l2 must be >= 0, got {l2}")));
        }
        Ok(Self { data, l2, f_star: None })
    }

    pub fn dim(&self) -> usize {
        self.data.num_classes * (self.data.d_in + 1)
    }

    fn logits(&self, x: &[f64], row: &[f64], out: &mut [f64]) {
        let d = self.data.d_in;
        let k = self.data.num_classes;
        for c in 0..k {
            let w = &x[c * d..(c + 1) * d];
            out[c] = w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + x[k * d + c];
        }
    }

    fn loss_and_grad(&self, x: &[f64], rows: &[usize], grad: Option<&mut [f64]>) -> f64 {
        let d = self.data.d_in;
        let k = self.data.num_classes;
        let mut probs = vec![0.0; k];
        let mut total = 0.0;
        let n = rows.len() as f64;
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        for &i in rows {
            let row = self.data.row(i);
            self.logits(x, row, &mut probs);
            let label = self.data.labels[i];
            total += log_softmax_ce(&mut probs, label);
            if let Some(g) = grad.as_deref_mut() {
                for c in 0..k {
                    let dz = (probs[c] - if c == label { 1.0 } else { 0.0 }) / n;
                    for (gw, xv) in g[c * d..(c + 1) * d].iter_mut().zip(row) {
                        *gw += dz * xv;
                    }
                    g[k * d + c] += dz;
                }
            }
        }
        if let Some(g) = grad {
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += self.l2 * xj;
            }
        }
        total / n + 0.5 * self.l2 * norm_sq(x)
    }

    /// Analytic smoothness bound `½·mean‖[x_i; 1]‖² + l2` (softmax Hessian ≤ ½I).
    pub fn smoothness(&self) -> f64 {
        let rows = &self.data.train;
        let s: f64 = rows.iter().map(|&i| norm_sq(self.data.row(i)) + 1.0).sum();
        0.5 * s / rows.len() as f64 + self.l2
    }

    /// Minimum of the training objective by deterministic full-batch gradient
    /// descent with step `1/L` from the origin.
    pub fn solve_f_star(&self, max_steps: usize) -> f64 {
        let step = 1.0 / self.smoothness();
        let mut x = vec![0.0; self.dim()];
        let mut g = vec![0.0; self.dim()];
        let mut f = self.loss_and_grad(&x, &self.data.train, Some(&mut g));
        for _ in 0..max_steps {
            if norm_sq(&g) < 1e-26 {
                break;
            }
            for (xj, gj) in x.iter_mut().zip(&g) {
                *xj -= step * gj;
            }
            f = self.loss_and_grad(&x, &self.data.train, Some(&mut g));
        }
        f
    }

    pub fn with_f_star(mut self, f_star: f64) -> Self {
        self.f_star = Some(f_star);
        self
    }

    fn predict(&self, x: &[f64], i: usize) -> usize {
        let mut z = vec![0.0; self.data.num_classes];
        self.logits(x, self.data.row(i), &mut z);
        argmax(&z)
    }
}

fn argmax(z: &[f64]) -> usize {
    z.iter().enumerate().fold(0, |best, (c, v)| if *v > z[best] { c } else { best })
}

impl Mlp {
    pub fn new(data: Arc<Dataset>, hidden: usize, l2: f64) -> Result<Self> {
        if hidden == 0 || hidden > MLP_MAX_HIDDEN {
            return Err(Error::Config(format!("hidden width must lie in 1..={MLP_MAX_HIDDEN}, got {hidden}")));
        }
        if !(l2.is_finite() && l2 >= 0.0) {
            return Err(Error::Config(format!("l2 must be >= 0, got {l2}")));
        }
        Ok(Self { data, hidden, l2 })
    }

    pub fn dim(&self) -> usize {
        let (d, h, k) = (self.data.d_in, self.hidden, self.data.num_classes);
        h * d + h + k * h + k
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let (d, h, k) = (self.data.d_in, self.hidden, self.data.num_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = vec![0.0; self.dim()];
        let r1 = (6.0 / (d + h) as f64).sqrt();
        let r2 = (6.0 / (h + k) as f64).sqrt();
        for w in &mut x[..h * d] {
            *w = rng.random_range(-r1..r1);
        }
        let w2 = h * d + h;
        for w in &mut x[w2..w2 + k * h] {
            *w = rng.random_range(-r2..r2);
        }
        x
    }

    fn forward(&self, x: &[f64], row: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let (d, h, k) = (self.data.d_in, self.hidden, self.data.num_classes);
        let (w1, rest) = x.split_at(h * d);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(k * h);
        for u in 0..h {
            let a: f64 = w1[u * d..(u + 1) * d].iter().zip(row).map(|(w, v)| w * v).sum();
            hidden[u] = (a + b1[u]).tanh();
        }
        for c in 0..k {
            out[c] = w2[c * h..(c + 1) * h].iter().zip(hidden.iter()).map(|(w, v)| w * v).sum::<f64>() + b2[c];
        }
    }

    fn loss_and_grad(&self, x: &[f64], rows: &[usize], grad: Option<&mut [f64]>) -> f64 {
        let (d, h, k) = (self.data.d_in, self.hidden, self.data.num_classes);
        let mut hid = vec![0.0; h];
        let mut probs = vec![0.0; k];
        let mut dh = vec![0.0; h];
        let n = rows.len() as f64;
        let mut total = 0.0;
        let mut grad = grad;
        if let Some(g) = grad.as_deref_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
        let w2_off = h * d + h;
        let b2_off = w2_off + k * h;
        for &i in rows {
            let row = self.data.row(i);
            self.forward(x, row, &mut hid, &mut probs);
            let label = self.data.labels[i];
            total += log_softmax_ce(&mut probs, label);
            let Some(g) = grad.as_deref_mut() else { continue };
            dh.iter_mut().for_each(|v| *v = 0.0);
            for c in 0..k {
                let dz = (probs[c] - if c == label { 1.0 } else { 0.0 }) / n;
                let w2row = &x[w2_off + c * h..w2_off + (c + 1) * h];
                for u in 0..h {
                    g[w2_off + c * h + u] += dz * hid[u];
                    dh[u] += dz * w2row[u];
                }
                g[b2_off + c] += dz;
            }
            for u in 0..h {
                let da = dh[u] * (1.0 - hid[u] * hid[u]);
                for (gw, xv) in g[u * d..(u + 1) * d].iter_mut().zip(row) {
                    *gw += da * xv;
                }
                g[h * d + u] += da;
            }
        }
        if let Some(g) = grad {
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += self.l2 * xj;
            }
        }
        total / n + 0.5 * self.l2 * norm_sq(x)
    }

    fn predict(&self, x: &[f64], i: usize) -> usize {
        let mut hid = vec![0.0; self.hidden];
        let mut z = vec![0.0; self.data.num_classes];
        self.forward(x, self.data.row(i), &mut hid, &mut z);
        argmax(&z)
    }
}

impl Rosenbrock {
    fn eval(&self, x: &[f64]) -> f64 {
        x.windows(2).map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2)).sum()
    }

    fn grad(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        for i in 0..x.len() - 1 {
            let r = x[i + 1] - x[i] * x[i];
            g[i] += -400.0 * x[i] * r - 2.0 * (1.0 - x[i]);
            g[i + 1] += 200.0 * r;
        }
        g
    }
}

impl Problem {
    pub fn quadratic(spectrum: Vec<f64>) -> Result<Self> {
        Ok(Problem::Quadratic(Quadratic::new(spectrum)?))
    }

    pub fn rosenbrock(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::Config("rosenbrock needs dim >= 2".into()));
        }
        Ok(Problem::Rosenbrock(Rosenbrock { dim }))
    }

    pub fn logistic(data: Arc<Dataset>, l2: f64) -> Result<Self> {
        Ok(Problem::Logistic(Logistic::new(data, l2)?))
    }

    pub fn mlp(data: Arc<Dataset>, hidden: usize, l2: f64) -> Result<Self> {
        Ok(Problem::Mlp(Mlp::new(data, hidden, l2)?))
    }

    pub fn name(&self) -> &'static str {
        match self {
            Problem::Quadratic(_) => "quadratic",
            Problem::Rosenbrock(_) => "rosenbrock",
            Problem::Logistic(_) => "logistic",
            Problem::Mlp(_) => "mlp",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Problem::Quadratic(q) => q.spectrum.len(),
            Problem::Rosenbrock(r) => r.dim,
            Problem::Logistic(l) => l.dim(),
            Problem::Mlp(m) => m.dim(),
        }
    }

    pub fn dataset(&self) -> Option<&Arc<Dataset>> {
        match self {
            Problem::Logistic(l) => Some(&l.data),
            Problem::Mlp(m) => Some(&m.data),
            _ => None,
        }
    }

    /// Objective value; dataset problems average over the training split.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_len(self.dim(), x.len())?;
        Ok(match self {
            Problem::Quadratic(q) => 0.5 * q.spectrum.iter().zip(x).map(|(a, v)| a * v * v).sum::<f64>(),
            Problem::Rosenbrock(r) => r.eval(x),
            Problem::Logistic(l) => l.loss_and_grad(x, &l.data.train, None),
            Problem::Mlp(m) => m.loss_and_grad(x, &m.data.train, None),
        })
    }

    pub fn exact_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len())?;
        Ok(match self {
            Problem::Quadratic(q) => q.spectrum.iter().zip(x).map(|(a, v)| a * v).collect(),
            Problem::Rosenbrock(r) => r.grad(x),
            Problem::Logistic(l) => {
                let mut g = vec![0.0; x.len()];
                l.loss_and_grad(x, &l.data.train, Some(&mut g));
                g
            }
            Problem::Mlp(m) => {
                let mut g = vec![0.0; x.len()];
                m.loss_and_grad(x, &m.data.train, Some(&mut g));
                g
            }
        })
    }

    /// Objective and exact gradient in one pass.
    pub fn eval_and_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_len(self.dim(), x.len())?;
        match self {
            Problem::Logistic(l) => {
                let mut g = vec![0.0; x.len()];
                let f = l.loss_and_grad(x, &l.data.train, Some(&mut g));
                Ok((f, g))
            }
            Problem::Mlp(m) => {
                let mut g = vec![0.0; x.len()];
                let f = m.loss_and_grad(x, &m.data.train, Some(&mut g));
                Ok((f, g))
            }
            _ => Ok((self.eval(x)?, self.exact_grad(x)?)),
        }
    }

    /// Mean gradient over the given dataset rows (plus the L2 term).
    pub fn batch_grad(&self, x: &[f64], rows: &[usize]) -> Result<Vec<f64>> {
        check_len(self.dim(), x.len())?;
        if rows.is_empty() {
            return Err(Error::InputDomain("empty mini-batch".into()));
        }
        let mut g = vec![0.0; x.len()];
        match self {
            Problem::Logistic(l) => {
                l.loss_and_grad(x, rows, Some(&mut g));
            }
            Problem::Mlp(m) => {
                m.loss_and_grad(x, rows, Some(&mut g));
            }
            _ => return Err(Error::Unsupported(format!("{} has no dataset", self.name()))),
        }
        Ok(g)
    }

    /// Smoothness constant where one is known analytically.
    pub fn smoothness(&self) -> Option<f64> {
        match self {
            Problem::Quadratic(q) => q.spectrum.iter().copied().reduce(f64::max),
            Problem::Logistic(l) => Some(l.smoothness()),
            Problem::Rosenbrock(_) | Problem::Mlp(_) => None,
        }
    }

    /// P-L constant: the smallest eigenvalue of a positive-definite quadratic.
    pub fn pl_lambda(&self) -> Option<f64> {
        match self {
            Problem::Quadratic(q) => q.spectrum.iter().copied().reduce(f64::min).filter(|l| *l > 0.0),
            _ => None,
        }
    }

    pub fn f_star(&self) -> Option<f64> {
        match self {
            Problem::Quadratic(_) | Problem::Rosenbrock(_) => Some(0.0),
            Problem::Logistic(l) => l.f_star,
            Problem::Mlp(_) => None,
        }
    }

    pub fn optimality_gap(&self, x: &[f64]) -> Result<f64> {
        let f_star = self.f_star().ok_or_else(|| {
            Error::Unsupported(format!("f* is not available for {}", self.name()))
        })?;
        Ok(self.eval(x)? - f_star)
    }

    /// Classification accuracy on the given rows.
    pub fn accuracy(&self, x: &[f64], rows: &[usize]) -> Result<f64> {
        check_len(self.dim(), x.len())?;
        let data = self
            .dataset()
            .ok_or_else(|| Error::Unsupported(format!("{} has no dataset", self.name())))?;
        if rows.is_empty() {
            return Err(Error::InputDomain("accuracy over no rows".into()));
        }
        let correct = rows
            .iter()
            .filter(|&&i| {
                let pred = match self {
                    Problem::Logistic(l) => l.predict(x, i),
                    Problem::Mlp(m) => m.predict(x, i),
                    _ => unreachable!(),
                };
                pred == data.labels[i]
            })
            .count();
        Ok(correct as f64 / rows.len() as f64)
    }

    /// Largest `‖∇f(x)−∇f(y)‖/‖x−y‖` over random pairs in a ball around `center`.
    pub fn empirical_smoothness(&self, center: &[f64], radius: f64, pairs: usize, seed: u64) -> Result<f64> {
        check_len(self.dim(), center.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: f64 = 0.0;
        for _ in 0..pairs {
            let x: Vec<f64> = center.iter().map(|c| c + rng.random_range(-radius..radius)).collect();
            let y: Vec<f64> = center.iter().map(|c| c + rng.random_range(-radius..radius)).collect();
            let gx = self.exact_grad(&x)?;
            let gy = self.exact_grad(&y)?;
            let num = norm(&crate::numerics::sub(&gx, &gy)?);
            let den = norm(&crate::numerics::sub(&x, &y)?);
            if den > 0.0 {
                best = best.max(num / den);
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum GradientMode {
    /// Exact gradient plus `N(0, σ²/d)` noise per coordinate.
    #[default]
    Gaussian,
    /// Mean gradient over a uniformly sampled training mini-batch (plus
    /// Gaussian noise when `σ > 0`).
    MiniBatch { batch: usize },
}

/// Stochastic first-order oracle. Gradients are rescaled to norm `G` when
/// they exceed it.
#[derive(Debug, Clone)]
pub struct Oracle {
    pub problem: Arc<Problem>,
    pub g_max: f64,
    pub sigma: f64,
    pub mode: GradientMode,
    rng: ChaCha8Rng,
    draws: u64,
    clip_events: u64,
}

impl Oracle {
    pub fn new(problem: Arc<Problem>, g_max: f64, sigma: f64, seed: u64) -> Result<Self> {
        if !(g_max > 0.0) {
            return Err(Error::Config(format!("G must be positive, got {g_max}")));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::Config(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        Ok(Self {
            problem,
            g_max,
            sigma,
            mode: GradientMode::Gaussian,
            rng: ChaCha8Rng::seed_from_u64(seed),
            draws: 0,
            clip_events: 0,
        })
    }

    pub fn with_mode(mut self, mode: GradientMode) -> Result<Self> {
        if let GradientMode::MiniBatch { batch } = mode {
            let data = self
                .problem
                .dataset()
                .ok_or_else(|| Error::Config("mini-batch mode needs a dataset problem".into()))?;
            if batch == 0 || batch > data.train.len() {
                return Err(Error::Config(format!(
                    "batch size must lie in 1..={}, got {batch}",
                    data.train.len()
                )));
            }
        }
        self.mode = mode;
        Ok(self)
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Number of draws whose norm exceeded `G` and were rescaled.
    pub fn clip_events(&self) -> u64 {
        self.clip_events
    }

    pub fn stochastic_grad(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        self.draw(x, None)
    }

    /// Same as [`Oracle::stochastic_grad`], reusing an exact gradient already
    /// computed at `x` when the mode allows it.
    pub fn stochastic_grad_with(&mut self, x: &[f64], exact: &[f64]) -> Result<Vec<f64>> {
        check_len(self.problem.dim(), exact.len())?;
        self.draw(x, Some(exact))
    }

    fn draw(&mut self, x: &[f64], exact: Option<&[f64]>) -> Result<Vec<f64>> {
        let mut g = match self.mode {
            GradientMode::Gaussian => match exact {
                Some(e) => {
                    check_len(self.problem.dim(), x.len())?;
                    e.to_vec()
                }
                None => self.problem.exact_grad(x)?,
            },
            GradientMode::MiniBatch { batch } => {
                let data = self.problem.dataset().expect("validated in with_mode");
                let rows: Vec<usize> = index::sample(&mut self.rng, data.train.len(), batch)
                    .into_iter()
                    .map(|k| data.train[k])
                    .collect();
                self.problem.batch_grad(x, &rows)?
            }
        };
        if self.sigma > 0.0 {
            let scale = self.sigma / (g.len() as f64).sqrt();
            for gj in g.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut self.rng);
                *gj += scale * z;
            }
        }
        self.draws += 1;
        let n = norm(&g);
        if n > self.g_max {
            self.clip_events += 1;
            let s = self.g_max / n;
            g.iter_mut().for_each(|v| *v *= s);
            while norm(&g) > self.g_max {
                g.iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
            }
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_blobs;
    use approx::assert_relative_eq;
    use proptest::prelude::{any, prop_assert, proptest};

    fn blobs() -> Arc<Dataset> {
        Arc::new(gen_blobs(60, 3, 3, 0.5, 5).unwrap())
    }

    fn all_problems() -> Vec<Problem> {
        vec![
            Problem::quadratic(vec![0.5, 1.0, 4.0]).unwrap(),
            Problem::rosenbrock(4).unwrap(),
            Problem::logistic(blobs(), 0.01).unwrap(),
            Problem::mlp(blobs(), 8, 1e-3).unwrap(),
        ]
    }

    /// Central finite differences with step `h`.
    fn fd_grad(p: &Problem, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                let mut xp = x.to_vec();
                let mut xm = x.to_vec();
                xp[j] += h;
                xm[j] -= h;
                (p.eval(&xp).unwrap() - p.eval(&xm).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn eval_examples() {
        let q = Problem::quadratic(vec![1.0]).unwrap();
        assert_eq!(q.eval(&[0.0]).unwrap(), 0.0);
        assert_eq!(q.exact_grad(&[3.0]).unwrap(), vec![3.0]);
        let q = Problem::quadratic(vec![1.0, 4.0]).unwrap();
        assert_eq!(q.eval(&[1.0, 1.0]).unwrap(), 2.5);
        let r = Problem::rosenbrock(2).unwrap();
        assert_eq!(r.eval(&[1.0, 1.0]).unwrap(), 0.0);
        assert_eq!(r.exact_grad(&[1.0, 1.0]).unwrap(), vec![0.0, 0.0]);
        assert_relative_eq!(r.eval(&[-1.2, 1.0]).unwrap(), 24.2, max_relative = 1e-14);
    }

    #[test]
    fn dimension_mismatch() {
        for p in all_problems() {
            assert!(matches!(p.eval(&[0.0]), Err(Error::DimensionMismatch { .. })));
            assert!(matches!(p.exact_grad(&[0.0]), Err(Error::DimensionMismatch { .. })));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for p in all_problems() {
            for _ in 0..20 {
                let x: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
                let g = p.exact_grad(&x).unwrap();
                let fd = fd_grad(&p, &x, 1e-5);
                let err = norm(&crate::numerics::sub(&g, &fd).unwrap());
                assert!(err <= 1e-5 * norm(&g), "{}: err {err} vs |g| {}", p.name(), norm(&g));
            }
        }
    }

    #[test]
    fn gap_and_f_star() {
        let q = Problem::quadratic(vec![1.0, 2.0]).unwrap();
        assert_eq!(q.optimality_gap(&[0.0, 0.0]).unwrap(), 0.0);
        let r = Problem::rosenbrock(3).unwrap();
        assert_eq!(r.optimality_gap(&[1.0, 1.0, 1.0]).unwrap(), 0.0);
        let m = Problem::mlp(blobs(), 4, 0.0).unwrap();
        assert!(matches!(m.optimality_gap(&vec![0.0; m.dim()]), Err(Error::Unsupported(_))));
        let l = Problem::logistic(blobs(), 0.1).unwrap();
        assert!(l.optimality_gap(&vec![0.0; l.dim()]).is_err());
    }

    #[test]
    fn logistic_f_star_by_descent() {
        let Problem::Logistic(l) = Problem::logistic(blobs(), 0.05).unwrap() else { unreachable!() };
        let f_star = l.solve_f_star(1_000_000);
        let p = Problem::Logistic(l.with_f_star(f_star));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            assert!(p.optimality_gap(&x).unwrap() >= -1e-12);
        }
        // first-order optimality at the GD limit
        let Problem::Logistic(l) = &p else { unreachable!() };
        assert!(f_star < l.loss_and_grad(&vec![0.0; p.dim()], &l.data.train, None));
    }

    #[test]
    fn pl_and_smoothness_declarations() {
        let q = Problem::quadratic(vec![0.25, 3.0]).unwrap();
        assert_eq!(q.pl_lambda(), Some(0.25));
        assert_eq!(q.smoothness(), Some(3.0));
        assert_eq!(Problem::quadratic(vec![0.0, 1.0]).unwrap().pl_lambda(), None);
        assert_eq!(Problem::logistic(blobs(), 0.0).unwrap().pl_lambda(), None);
        let s = Quadratic::log_spaced(4, 1e-3, 1.0).unwrap();
        assert_relative_eq!(s.spectrum[0], 1e-3);
        assert_relative_eq!(s.spectrum[3], 1.0, max_relative = 1e-14);
        assert_relative_eq!(s.spectrum[1], 1e-2, max_relative = 1e-12);
    }

    #[test]
    fn smoothness_spot_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for p in [Problem::quadratic(vec![0.1, 2.0, 7.0]).unwrap(), Problem::logistic(blobs(), 0.01).unwrap()] {
            let l = p.smoothness().unwrap();
            for _ in 0..100 {
                let x: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
                let y: Vec<f64> = (0..p.dim()).map(|_| rng.random_range(-3.0..3.0)).collect();
                let dg = norm(&crate::numerics::sub(&p.exact_grad(&x).unwrap(), &p.exact_grad(&y).unwrap()).unwrap());
                let dx = norm(&crate::numerics::sub(&x, &y).unwrap());
                assert!(dg <= l * dx * (1.0 + 1e-12));
            }
        }
        // MLP: certify on one sample set, confirm on fresh pairs
        let p = Problem::mlp(blobs(), 6, 0.0).unwrap();
        let center = match &p {
            Problem::Mlp(m) => m.init_params(2),
            _ => unreachable!(),
        };
        let l_cert = 2.0 * p.empirical_smoothness(&center, 0.5, 400, 1).unwrap();
        assert!(p.empirical_smoothness(&center, 0.5, 100, 99).unwrap() <= l_cert);
    }

    #[test]
    fn pl_inequality_on_quadratic() {
        let p = Problem::quadratic(vec![0.3, 1.0, 5.0]).unwrap();
        let lambda = p.pl_lambda().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
            let g = p.exact_grad(&x).unwrap();
            assert!(norm_sq(&g) >= 2.0 * lambda * p.optimality_gap(&x).unwrap() * (1.0 - 1e-12));
        }
    }

    #[test]
    fn minibatches_average_to_full_gradient() {
        for p in [Problem::logistic(blobs(), 0.02).unwrap(), Problem::mlp(blobs(), 5, 0.01).unwrap()] {
            let data = p.dataset().unwrap().clone();
            let x: Vec<f64> = (0..p.dim()).map(|j| ((j * 7 % 11) as f64 - 5.0) / 10.0).collect();
            let full = p.exact_grad(&x).unwrap();
            let batch = 8;
            assert_eq!(data.train.len() % batch, 0);
            let chunks: Vec<&[usize]> = data.train.chunks(batch).collect();
            let mut avg = vec![0.0; p.dim()];
            for c in &chunks {
                let g = p.batch_grad(&x, c).unwrap();
                for (a, v) in avg.iter_mut().zip(g) {
                    *a += v / chunks.len() as f64;
                }
            }
            for (a, f) in avg.iter().zip(&full) {
                assert!((a - f).abs() <= 1e-14 * (1.0 + f.abs()));
            }
        }
    }

    #[test]
    fn noiseless_oracle_is_exact() {
        let p = Arc::new(Problem::rosenbrock(3).unwrap());
        let mut o = Oracle::new(p.clone(), f64::INFINITY, 0.0, 1).unwrap();
        let x = [0.3, -0.2, 1.7];
        assert_eq!(o.stochastic_grad(&x).unwrap(), p.exact_grad(&x).unwrap());
        let mut a = Oracle::new(p.clone(), 2.0, 0.3, 5).unwrap();
        let mut b = a.clone();
        let e = p.exact_grad(&x).unwrap();
        assert_eq!(a.stochastic_grad(&x).unwrap(), b.stochastic_grad_with(&x, &e).unwrap());
    }

    #[test]
    fn clipped_oracle_hits_bound() {
        let p = Arc::new(Problem::quadratic(vec![10.0; 5]).unwrap());
        let mut o = Oracle::new(p, 0.5, 1.0, 3).unwrap();
        for _ in 0..100 {
            let g = o.stochastic_grad(&[3.0; 5]).unwrap();
            let n = norm(&g);
            assert!(n <= 0.5 && n >= 0.5 * (1.0 - 1e-15));
        }
        assert_eq!(o.clip_events(), 100);
    }

    #[test]
    fn oracle_is_unbiased() {
        // Monte-Carlo oracle: mean of 1e5 draws within 3σ/√(N·d) per coordinate
        let d = 4;
        let p = Arc::new(Problem::quadratic(vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let x = [0.5, -0.5, 0.25, 1.0];
        let exact = p.exact_grad(&x).unwrap();
        let mut o = Oracle::new(p, f64::INFINITY, 1.0, 17).unwrap();
        let n = 100_000;
        let mut mean = vec![0.0; d];
        for _ in 0..n {
            for (m, g) in mean.iter_mut().zip(o.stochastic_grad(&x).unwrap()) {
                *m += g / n as f64;
            }
        }
        let tol = 3.0 * 1.0 / ((n * d) as f64).sqrt();
        for (m, e) in mean.iter().zip(&exact) {
            assert!((m - e).abs() < tol, "{m} vs {e}");
        }
    }

    #[test]
    fn minibatch_mode_validation() {
        let p = Arc::new(Problem::quadratic(vec![1.0]).unwrap());
        assert!(Oracle::new(p, 1.0, 0.0, 0).unwrap().with_mode(GradientMode::MiniBatch { batch: 4 }).is_err());
        let p = Arc::new(Problem::logistic(blobs(), 0.0).unwrap());
        let o = Oracle::new(p.clone(), 1.0, 0.0, 0).unwrap();
        assert!(o.clone().with_mode(GradientMode::MiniBatch { batch: 0 }).is_err());
        let mut o = o.with_mode(GradientMode::MiniBatch { batch: 10 }).unwrap();
        let g = o.stochastic_grad(&vec![0.1; p.dim()]).unwrap();
        assert!(norm(&g) <= 1.0);
    }

    #[test]
    fn accuracy_requires_dataset() {
        let q = Problem::quadratic(vec![1.0]).unwrap();
        assert!(q.accuracy(&[0.0], &[0]).is_err());
    }

    proptest! {
        #[test]
        fn clipped_outputs_never_exceed_bound(seed in any::<u64>(), g_max in 1e-3f64..10.0, sigma in 0.0f64..5.0) {
            let p = Arc::new(Problem::rosenbrock(3).unwrap());
            let mut o = Oracle::new(p, g_max, sigma, seed).unwrap();
            for k in 0..10 {
                let x = [k as f64 * 0.3 - 1.0, 0.5, -0.7];
                prop_assert!(norm(&o.stochastic_grad(&x).unwrap()) <= g_max);
            }
        }
    }
}
