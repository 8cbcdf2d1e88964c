//! Optimizer state machines.
//!
//! Every method is a composition of a first-moment rule, a second-moment rule
//! and a [`Calibrator`]:
//!
//! ```text
//! m_t     = first(m_{t-1}, g_t)
//! v_t     = second(v_{t-1}, g_t)
//! x_{t+1} = x_t - η_t · m_t / denominator(√v_t)
//! ```
//!
//! Methods without a second moment (SGD, S-Momentum) use a unit denominator.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibrators::{Calibrator, CalibratorKind};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstMomentRule {
    /// `m_t = g_t`
    Plain,
    /// `m_t = β₁·m_{t-1} + (1-β₁)·g_t`
    Ema,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecondMomentRule {
    /// No second moment; the denominator is 1.
    None,
    /// `v_t = β₂·v_{t-1} + (1-β₂)·g_t²`
    Ema,
    /// `ṽ_t = β₂·ṽ_{t-1} + (1-β₂)·g_t²`, `v_t = max(v_{t-1}, ṽ_t)`
    Ams,
    /// `v_t = v_{t-1} - (1-β₂)·sign(v_{t-1} - g_t²)·g_t²`, `sign(0) = 0`
    Yogi,
    /// `v_t = v_{t-1} + g_t²`
    Adagrad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Sgd,
    SMomentum,
    Adagrad,
    Adam,
    AmsGrad,
    Yogi,
    PAdam,
    PAmsGrad,
    AdaBound,
    AmsBound,
    Sadam,
    SamsGrad,
    /// Any moment-rule pairing; accepts every calibrator.
    Custom { first: FirstMomentRule, second: SecondMomentRule },
}

impl Method {
    pub const NAMED: [Method; 12] = [
        Method::Sgd,
        Method::SMomentum,
        Method::Adagrad,
        Method::Adam,
        Method::AmsGrad,
        Method::Yogi,
        Method::PAdam,
        Method::PAmsGrad,
        Method::AdaBound,
        Method::AmsBound,
        Method::Sadam,
        Method::SamsGrad,
    ];

    pub fn rules(self) -> (FirstMomentRule, SecondMomentRule) {
        use FirstMomentRule as F;
        use SecondMomentRule as S;
        match self {
            Method::Sgd => (F::Plain, S::None),
            Method::SMomentum => (F::Ema, S::None),
            Method::Adagrad => (F::Plain, S::Adagrad),
            Method::Adam | Method::PAdam | Method::AdaBound | Method::Sadam => (F::Ema, S::Ema),
            Method::AmsGrad | Method::PAmsGrad | Method::AmsBound | Method::SamsGrad => {
                (F::Ema, S::Ams)
            }
            Method::Yogi => (F::Ema, S::Yogi),
            Method::Custom { first, second } => (first, second),
        }
    }

    /// The calibrator kind a named adaptive method is defined with.
    pub fn canonical_calibrator(self) -> Option<CalibratorKind> {
        match self {
            Method::Adagrad | Method::Adam | Method::AmsGrad | Method::Yogi => {
                Some(CalibratorKind::EpsShift)
            }
            Method::PAdam | Method::PAmsGrad => Some(CalibratorKind::PowerP),
            Method::AdaBound | Method::AmsBound => Some(CalibratorKind::Clip),
            Method::Sadam | Method::SamsGrad => Some(CalibratorKind::Softplus),
            Method::Sgd | Method::SMomentum | Method::Custom { .. } => None,
        }
    }

    pub fn uses_calibrator(self) -> bool {
        self.rules().1 != SecondMomentRule::None
    }

    /// Methods whose second moment is a running maximum.
    pub fn is_ams_family(self) -> bool {
        self.rules().1 == SecondMomentRule::Ams
    }

    pub fn name(self) -> String {
        match self {
            Method::Sgd => "sgd".into(),
            Method::SMomentum => "s-momentum".into(),
            Method::Adagrad => "adagrad".into(),
            Method::Adam => "adam".into(),
            Method::AmsGrad => "amsgrad".into(),
            Method::Yogi => "yogi".into(),
            Method::PAdam => "padam".into(),
            Method::PAmsGrad => "pamsgrad".into(),
            Method::AdaBound => "adabound".into(),
            Method::AmsBound => "amsbound".into(),
            Method::Sadam => "sadam".into(),
            Method::SamsGrad => "samsgrad".into(),
            Method::Custom { first, second } => format!("custom:{first:?}/{second:?}").to_lowercase(),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
        Method::NAMED
            .into_iter()
            .find(|m| m.name().replace('-', "") == key)
            .ok_or_else(|| Error::Config(format!("unknown method '{s}'")))
    }
}

/// Multiply the base LR by `factor` from iteration `step` onwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayStage {
    pub step: u64,
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub calibrator: Calibrator,
    #[serde(default)]
    pub bias_correction: bool,
    #[serde(default)]
    pub decay: Vec<DecayStage>,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            eta: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            calibrator: Calibrator::default(),
            bias_correction: false,
            decay: Vec::new(),
        }
    }
}

impl HyperParams {
    /// Defaults with the calibrator a named method expects
    /// (ε = 1e-8, β = 50, p = 1/8, clip `[η/100, 10η]`).
    pub fn for_method(method: Method, eta: f64) -> Self {
        let calibrator = match method.canonical_calibrator() {
            Some(CalibratorKind::Softplus) => Calibrator::softplus(50.0),
            Some(CalibratorKind::PowerP) => Calibrator::power_p(0.125, 1e-8),
            Some(CalibratorKind::Clip) => Calibrator::clip(eta / 100.0, eta * 10.0, eta),
            Some(CalibratorKind::EpsShift) | None => Calibrator::eps_shift(1e-8),
        };
        Self { eta, calibrator, ..Self::default() }
    }

    /// Change the base LR. A clip interval moves with it, so the clipped
    /// step `η·clip(η_ref/√v)/η_ref` keeps its shape.
    pub fn with_eta(mut self, eta: f64) -> Self {
        if self.calibrator.kind == CalibratorKind::Clip && self.eta > 0.0 {
            let r = eta / self.eta;
            self.calibrator.eta_lower *= r;
            self.calibrator.eta_upper *= r;
            self.calibrator.eta_ref *= r;
        }
        self.eta = eta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        for w in self.decay.windows(2) {
            if w[1].step <= w[0].step {
                return Err(Error::Config("decay steps must be strictly increasing".into()));
            }
        }
        if let Some(s) = self.decay.iter().find(|s| !(s.factor > 0.0 && s.factor <= 1.0)) {
            return Err(Error::Config(format!("decay factor must lie in (0, 1], got {}", s.factor)));
        }
        self.calibrator.validate()
    }

    /// Base LR in effect at iteration `t` (1-based).
    pub fn eta_at(&self, t: u64) -> f64 {
        self.decay.iter().filter(|s| s.step <= t).fold(self.eta, |eta, s| eta * s.factor)
    }

    fn check_pairing(&self, method: Method) -> Result<()> {
        match method.canonical_calibrator() {
            Some(kind) if kind != self.calibrator.kind => Err(Error::Config(format!(
                "{method} requires a {kind:?} calibrator, got {:?}",
                self.calibrator.kind
            ))),
            _ => Ok(()),
        }
    }
}

#[inline]
fn ema(prev: f64, x: f64, beta: f64) -> f64 {
    beta * prev + (1.0 - beta) * x
}

#[inline]
fn yogi(prev: f64, g2: f64, beta2: f64) -> f64 {
    let diff = prev - g2;
    let sign = if diff > 0.0 {
        1.0
    } else if diff < 0.0 {
        -1.0
    } else {
        0.0
    };
    prev - (1.0 - beta2) * sign * g2
}

/// `β₁·m_prev + (1-β₁)·g`
pub fn first_moment(m_prev: &[f64], g: &[f64], beta1: f64) -> Result<Vec<f64>> {
    check_len(m_prev.len(), g.len())?;
    Ok(m_prev.iter().zip(g).map(|(&m, &gi)| ema(m, gi, beta1)).collect())
}

/// Returns `(v, ṽ)`. Only the AMS rule touches `ṽ`; other rules pass it through.
pub fn second_moment(
    rule: SecondMomentRule,
    v_prev: &[f64],
    v_tilde_prev: &[f64],
    g: &[f64],
    beta2: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(v_prev.len(), g.len())?;
    check_len(v_prev.len(), v_tilde_prev.len())?;
    if let Some(j) = v_prev.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::InputDomain(format!("v_prev[{j}] = {} is negative", v_prev[j])));
    }
    let mut v = v_prev.to_vec();
    let mut vt = v_tilde_prev.to_vec();
    for j in 0..g.len() {
        let g2 = g[j] * g[j];
        match rule {
            SecondMomentRule::None => {}
            SecondMomentRule::Ema => v[j] = ema(v_prev[j], g2, beta2),
            SecondMomentRule::Ams => {
                vt[j] = ema(v_tilde_prev[j], g2, beta2);
                v[j] = v_prev[j].max(vt[j]);
            }
            SecondMomentRule::Yogi => v[j] = yogi(v_prev[j], g2, beta2),
            SecondMomentRule::Adagrad => v[j] = v_prev[j] + g2,
        }
    }
    Ok((v, vt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub method: Method,
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub v_tilde: Vec<f64>,
    pub t: u64,
    /// Set once a non-finite gradient has been offered; every later step fails.
    #[serde(default)]
    pub poisoned: bool,
}

impl OptimizerState {
    pub fn init(method: Method, dim: usize, x0: Vec<f64>, hp: &HyperParams) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        check_len(dim, x0.len())?;
        if let Some(j) = crate::numerics::first_non_finite(&x0) {
            return Err(Error::InputDomain(format!("x0[{j}] is not finite")));
        }
        hp.validate()?;
        hp.check_pairing(method)?;
        Ok(Self {
            method,
            x: x0,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            v_tilde: vec![0.0; dim],
            t: 0,
            poisoned: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    fn bias_factors(&self, hp: &HyperParams, t: u64) -> (f64, f64) {
        if !hp.bias_correction || t == 0 {
            return (1.0, 1.0);
        }
        let (first, second) = self.method.rules();
        let exp = i32::try_from(t).unwrap_or(i32::MAX);
        let c1 = if first == FirstMomentRule::Ema { 1.0 - hp.beta1.powi(exp) } else { 1.0 };
        let c2 = match second {
            SecondMomentRule::Ema | SecondMomentRule::Ams | SecondMomentRule::Yogi => {
                1.0 - hp.beta2.powi(exp)
            }
            SecondMomentRule::None | SecondMomentRule::Adagrad => 1.0,
        };
        (c1, c2)
    }

    /// Per-coordinate denominators the most recent step divided by.
    pub fn denominators(&self, hp: &HyperParams) -> Vec<f64> {
        if !self.method.uses_calibrator() {
            return vec![1.0; self.dim()];
        }
        let (_, c2) = self.bias_factors(hp, self.t);
        let t = self.t.max(1);
        self.v.iter().map(|v| hp.calibrator.denominator_coord((v / c2).sqrt(), t)).collect()
    }

    /// The A-LR vector `1 / denominator(√v_t)`.
    pub fn alr(&self, hp: &HyperParams) -> Vec<f64> {
        self.denominators(hp).into_iter().map(|d| 1.0 / d).collect()
    }

    /// Advance one iteration with stochastic gradient `g`.
    ///
    /// On error the state is left exactly as it was. A non-finite gradient
    /// additionally marks the state as poisoned.
    pub fn step(&mut self, g: &[f64], hp: &HyperParams) -> Result<()> {
        check_len(self.dim(), g.len())?;
        let t_next = self.t + 1;
        if self.poisoned {
            return Err(Error::PoisonedState { step: t_next, coord: 0 });
        }
        if let Some(coord) = crate::numerics::first_non_finite(g) {
            self.poisoned = true;
            return Err(Error::PoisonedState { step: t_next, coord });
        }
        hp.check_pairing(self.method)?;

        let (first, second) = self.method.rules();
        let eta_t = hp.eta_at(t_next);
        let (c1, c2) = self.bias_factors(hp, t_next);
        let d = self.dim();
        let mut x = Vec::with_capacity(d);
        let mut m = Vec::with_capacity(d);
        let mut v = Vec::with_capacity(d);
        let mut vt = Vec::with_capacity(d);
        for j in 0..d {
            let gj = g[j];
            let g2 = gj * gj;
            let mj = match first {
                FirstMomentRule::Plain => gj,
                FirstMomentRule::Ema => ema(self.m[j], gj, hp.beta1),
            };
            let (vj, vtj) = match second {
                SecondMomentRule::None => (self.v[j], self.v_tilde[j]),
                SecondMomentRule::Ema => (ema(self.v[j], g2, hp.beta2), self.v_tilde[j]),
                SecondMomentRule::Ams => {
                    let vtj = ema(self.v_tilde[j], g2, hp.beta2);
                    (self.v[j].max(vtj), vtj)
                }
                SecondMomentRule::Yogi => (yogi(self.v[j], g2, hp.beta2), self.v_tilde[j]),
                SecondMomentRule::Adagrad => (self.v[j] + g2, self.v_tilde[j]),
            };
            let denom = if second == SecondMomentRule::None {
                1.0
            } else {
                hp.calibrator.denominator_coord((vj / c2).sqrt(), t_next)
            };
            let xj = self.x[j] - eta_t * (mj / c1) / denom;
            if !xj.is_finite() {
                return Err(Error::InputDomain(format!(
                    "update of coordinate {j} at step {t_next} is not finite (denominator {denom})"
                )));
            }
            x.push(xj);
            m.push(mj);
            v.push(vj);
            vt.push(vtj);
        }
        self.x = x;
        self.m = m;
        self.v = v;
        self.v_tilde = vt;
        self.t = t_next;
        Ok(())
    }
}
