//! A-LR denominator rules.
//!
//! Every adaptive method divides the first moment by a per-coordinate
//! denominator built from `√v_t`; the adaptive learning rate (A-LR) of a
//! coordinate is `1 / denominator`. A [`Calibrator`] names that rule:
//!
//! | kind       | denominator                         | A-LR bounds `(μ_l, μ_u)`                    |
//! |------------|-------------------------------------|---------------------------------------------|
//! | `EpsShift` | `√v + ε`                            | `1/(√(σ²+G²)+ε)`, `1/ε`                     |
//! | `Softplus` | `(1/β)·ln(1+e^{β√v})`               | `1/softplus(√(σ²+G²))`, `β/ln 2`            |
//! | `PowerP`   | `v^p + ε`                           | `1/((σ²+G²)^p+ε)`, `1/ε`                    |
//! | `Clip`     | `η_ref / clip(η_ref/√v, η_l, η_u)`  | `η_l/η_ref`, `η_u/η_ref`                    |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{softplus_stable, softplus_unchecked};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibratorKind {
    EpsShift,
    Softplus,
    PowerP,
    Clip,
}

/// How the clip interval evolves with the step counter.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClipSchedule {
    /// `[eta_lower, eta_upper]` at every step.
    #[default]
    Fixed,
    /// AdaBound-style interval shrinking onto `[eta_lower, eta_upper]`:
    /// `[η_l·(1 − 1/(γt+1)), η_u·(1 + 1/(γt))]`.
    Converging { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibrator {
    pub kind: CalibratorKind,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub eta_lower: f64,
    #[serde(default)]
    pub eta_upper: f64,
    /// Reference base LR the clip interval is expressed against.
    #[serde(default = "default_eta_ref")]
    pub eta_ref: f64,
    #[serde(default)]
    pub schedule: ClipSchedule,
}

fn default_beta() -> f64 {
    50.0
}
fn default_p() -> f64 {
    0.125
}
fn default_eta_ref() -> f64 {
    1.0
}

impl Default for Calibrator {
    fn default() -> Self {
        Self::eps_shift(1e-8)
    }
}

/// Closed-form lower and upper bounds on every A-LR coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlrBounds {
    pub mu_lower: f64,
    pub mu_upper: f64,
}

impl AlrBounds {
    pub fn contains(&self, alr: f64) -> bool {
        self.mu_lower <= alr && alr <= self.mu_upper
    }

    /// Scale the interval towards its centre; `factor > 1` tightens it.
    pub fn tightened(&self, factor: f64) -> Self {
        Self { mu_lower: self.mu_lower * factor, mu_upper: self.mu_upper / factor }
    }
}

impl Calibrator {
    fn base(kind: CalibratorKind) -> Self {
        Self {
            kind,
            epsilon: 0.0,
            beta: default_beta(),
            p: default_p(),
            eta_lower: 0.0,
            eta_upper: 0.0,
            eta_ref: default_eta_ref(),
            schedule: ClipSchedule::Fixed,
        }
    }

    pub fn eps_shift(epsilon: f64) -> Self {
        Self { epsilon, ..Self::base(CalibratorKind::EpsShift) }
    }

    pub fn softplus(beta: f64) -> Self {
        Self { beta, ..Self::base(CalibratorKind::Softplus) }
    }

    pub fn power_p(p: f64, epsilon: f64) -> Self {
        Self { p, epsilon, ..Self::base(CalibratorKind::PowerP) }
    }

    pub fn clip(eta_lower: f64, eta_upper: f64, eta_ref: f64) -> Self {
        Self { eta_lower, eta_upper, eta_ref, ..Self::base(CalibratorKind::Clip) }
    }

    pub fn with_schedule(mut self, schedule: ClipSchedule) -> Self {
        self.schedule = schedule;
        self
    }

    /// Checks the parameters that are meaningful for this kind.
    ///
    /// `EpsShift` and `PowerP` accept `ε = 0`; such calibrators are usable on
    /// strictly positive moments but [`Calibrator::alr_bounds`] refuses them.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match self.kind {
            CalibratorKind::EpsShift => {
                if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
                    return bad(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
                }
            }
            CalibratorKind::Softplus => {
                if !(self.beta.is_finite() && self.beta > 0.0) {
                    return bad(format!("softplus beta must be positive, got {}", self.beta));
                }
            }
            CalibratorKind::PowerP => {
                if !(self.p > 0.0 && self.p <= 0.5) {
                    return bad(format!("power p must lie in (0, 1/2], got {}", self.p));
                }
                if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
                    return bad(format!("epsilon must be finite and >= 0, got {}", self.epsilon));
                }
            }
            CalibratorKind::Clip => {
                if !(self.eta_lower.is_finite() && self.eta_lower > 0.0) {
                    return bad(format!("clip lower bound must be positive, got {}", self.eta_lower));
                }
                if !(self.eta_upper.is_finite() && self.eta_upper >= self.eta_lower) {
                    return bad(format!(
                        "clip interval [{}, {}] is empty",
                        self.eta_lower, self.eta_upper
                    ));
                }
                if !(self.eta_ref.is_finite() && self.eta_ref > 0.0) {
                    return bad(format!("clip reference LR must be positive, got {}", self.eta_ref));
                }
                if let ClipSchedule::Converging { gamma } = self.schedule {
                    if !(gamma.is_finite() && gamma > 0.0) {
                        return bad(format!("clip schedule gamma must be positive, got {gamma}"));
                    }
                }
            }
        }
        Ok(())
    }

    /// Clip interval in effect at step `t` (1-based).
    pub fn clip_interval(&self, t: u64) -> (f64, f64) {
        match self.schedule {
            ClipSchedule::Fixed => (self.eta_lower, self.eta_upper),
            ClipSchedule::Converging { gamma } => {
                let gt = gamma * t.max(1) as f64;
                (self.eta_lower * (1.0 - 1.0 / (gt + 1.0)), self.eta_upper * (1.0 + 1.0 / gt))
            }
        }
    }

    /// Denominator for a single coordinate, without validation.
    #[inline]
    pub(crate) fn denominator_coord(&self, sqrt_v: f64, t: u64) -> f64 {
        match self.kind {
            CalibratorKind::EpsShift => sqrt_v + self.epsilon,
            CalibratorKind::Softplus => softplus_unchecked(sqrt_v, self.beta),
            CalibratorKind::PowerP => (sqrt_v * sqrt_v).powf(self.p) + self.epsilon,
            CalibratorKind::Clip => {
                let (lo, hi) = self.clip_interval(t);
                let lr = if sqrt_v == 0.0 { hi } else { (self.eta_ref / sqrt_v).clamp(lo, hi) };
                self.eta_ref / lr
            }
        }
    }

    /// Coordinatewise denominator for `√v`, using the clip interval of step 1.
    pub fn denominator(&self, sqrt_v: &[f64]) -> Result<Vec<f64>> {
        self.denominator_at(sqrt_v, 1)
    }

    /// Coordinatewise denominator for `√v` at step `t`.
    pub fn denominator_at(&self, sqrt_v: &[f64], t: u64) -> Result<Vec<f64>> {
        self.validate()?;
        sqrt_v
            .iter()
            .enumerate()
            .map(|(j, &s)| {
                if !(s.is_finite() && s >= 0.0) {
                    return Err(Error::InputDomain(format!(
                        "sqrt(v) coordinate {j} must be finite and >= 0, got {s}"
                    )));
                }
                let d = self.denominator_coord(s, t);
                if d > 0.0 && d.is_finite() {
                    Ok(d)
                } else {
                    Err(Error::InputDomain(format!(
                        "zero denominator at coordinate {j}; use epsilon > 0"
                    )))
                }
            })
            .collect()
    }

    /// A-LR bounds for gradients with `‖g‖ ≤ G` and noise variance `σ²`.
    pub fn alr_bounds(&self, g_bound: f64, sigma: f64) -> Result<AlrBounds> {
        self.validate()?;
        if !(g_bound.is_finite() && g_bound > 0.0) {
            return Err(Error::InputDomain(format!("G must be finite and positive, got {g_bound}")));
        }
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InputDomain(format!("sigma must be finite and >= 0, got {sigma}")));
        }
        let v_max = sigma * sigma + g_bound * g_bound;
        let (mu_lower, mu_upper) = match self.kind {
            CalibratorKind::EpsShift => {
                if self.epsilon == 0.0 {
                    return Err(Error::UnboundedAbove("1/(sqrt(v)+eps) with eps = 0".into()));
                }
                (1.0 / (v_max.sqrt() + self.epsilon), 1.0 / self.epsilon)
            }
            CalibratorKind::Softplus => (
                1.0 / softplus_stable(v_max.sqrt(), self.beta)?,
                self.beta / std::f64::consts::LN_2,
            ),
            CalibratorKind::PowerP => {
                if self.epsilon == 0.0 {
                    return Err(Error::UnboundedAbove("1/(v^p+eps) with eps = 0".into()));
                }
                (1.0 / (v_max.powf(self.p) + self.epsilon), 1.0 / self.epsilon)
            }
            CalibratorKind::Clip => {
                let (lo, hi) = match self.schedule {
                    ClipSchedule::Fixed => (self.eta_lower, self.eta_upper),
                    // widest interval is the one at t = 1
                    ClipSchedule::Converging { .. } => self.clip_interval(1),
                };
                (lo / self.eta_ref, hi / self.eta_ref)
            }
        };
        Ok(AlrBounds { mu_lower, mu_upper })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::LN_2;

    #[test]
    fn eps_shift_at_zero_moment() {
        let c = Calibrator::eps_shift(1e-8);
        let d = c.denominator(&[0.0]).unwrap();
        assert_eq!(d, vec![1e-8]);
        assert_relative_eq!(1.0 / d[0], 1e8, max_relative = 1e-15);
    }

    #[test]
    fn softplus_at_zero_moment() {
        let c = Calibrator::softplus(50.0);
        let d = c.denominator(&[0.0]).unwrap();
        assert_relative_eq!(d[0], LN_2 / 50.0, max_relative = 1e-15);
        assert_relative_eq!(1.0 / d[0], 72.134_752_044_448_17, max_relative = 1e-14);
    }

    #[test]
    fn power_half_recovers_square_root() {
        let c = Calibrator::power_p(0.5, 0.0);
        assert_eq!(c.denominator(&[2.0]).unwrap(), vec![2.0]);
        let c = Calibrator::power_p(0.125, 1e-8);
        let d = c.denominator(&[3.0]).unwrap();
        assert_relative_eq!(d[0], 9f64.powf(0.125) + 1e-8, max_relative = 1e-15);
    }

    #[test]
    fn clip_maps_zero_moment_to_upper_bound() {
        let c = Calibrator::clip(0.01, 0.5, 0.1);
        let d = c.denominator(&[0.0, 0.1, 1e6]).unwrap();
        // η_ref / d is the clipped LR
        assert_relative_eq!(0.1 / d[0], 0.5, max_relative = 1e-15);
        assert_relative_eq!(0.1 / d[1], 0.5, max_relative = 1e-15);
        assert_relative_eq!(0.1 / d[2], 0.01, max_relative = 1e-15);
        let d = c.denominator(&[0.5]).unwrap();
        assert_relative_eq!(d[0], 0.5, max_relative = 1e-15);
    }

    #[test]
    fn converging_clip_schedule_narrows() {
        let c = Calibrator::clip(0.01, 0.1, 0.1).with_schedule(ClipSchedule::Converging { gamma: 1e-3 });
        let (l1, h1) = c.clip_interval(1);
        let (l2, h2) = c.clip_interval(10_000);
        assert!(l1 < l2 && l2 < 0.01);
        assert!(h1 > h2 && h2 > 0.1);
        let b = c.alr_bounds(1.0, 0.0).unwrap();
        assert_relative_eq!(b.mu_lower, l1 / 0.1);
        assert_relative_eq!(b.mu_upper, h1 / 0.1);
    }

    #[test]
    fn denominator_rejects_negative_input() {
        for c in [Calibrator::eps_shift(1e-8), Calibrator::softplus(50.0), Calibrator::power_p(0.25, 1e-8)] {
            assert!(matches!(c.denominator(&[0.1, -1e-3]), Err(Error::InputDomain(_))));
        }
        assert!(Calibrator::eps_shift(0.0).denominator(&[0.0]).is_err());
    }

    #[test]
    fn invalid_calibrators() {
        assert!(Calibrator::eps_shift(-1.0).validate().is_err());
        assert!(Calibrator::softplus(0.0).validate().is_err());
        assert!(Calibrator::power_p(0.75, 1e-8).validate().is_err());
        assert!(Calibrator::power_p(0.0, 1e-8).validate().is_err());
        assert!(Calibrator::clip(0.2, 0.1, 1.0).validate().is_err());
        assert!(Calibrator::clip(0.0, 0.1, 1.0).validate().is_err());
    }

    #[test]
    fn eps_shift_bounds() {
        let b = Calibrator::eps_shift(1e-8).alr_bounds(1.0, 0.0).unwrap();
        assert_relative_eq!(b.mu_lower, 1.0 / (1.0 + 1e-8), max_relative = 1e-15);
        assert_relative_eq!(b.mu_lower, 0.999_999_99, max_relative = 1e-9);
        assert_relative_eq!(b.mu_upper, 1e8, max_relative = 1e-15);
    }

    #[test]
    fn softplus_bounds() {
        let b = Calibrator::softplus(50.0).alr_bounds(1.0, 0.0).unwrap();
        // 1/softplus(1; 50) = 1 - 3.857e-24 to 50 digits
        assert_eq!(b.mu_lower, 1.0);
        assert_relative_eq!(b.mu_upper, 72.134_752_044_448_17, max_relative = 1e-14);
        for beta in [1e-3, 1.0, 10.0, 50.0, 100.0, 1e5] {
            let b = Calibrator::softplus(beta).alr_bounds(0.3, 2.0).unwrap();
            assert_relative_eq!(b.mu_upper * LN_2 / beta, 1.0, max_relative = 1e-15);
        }
    }

    #[test]
    fn bounds_refuse_zero_epsilon() {
        assert!(matches!(
            Calibrator::eps_shift(0.0).alr_bounds(1.0, 0.1),
            Err(Error::UnboundedAbove(_))
        ));
        assert!(matches!(
            Calibrator::power_p(0.125, 0.0).alr_bounds(1.0, 0.1),
            Err(Error::UnboundedAbove(_))
        ));
        assert!(Calibrator::softplus(50.0).alr_bounds(0.0, 0.1).is_err());
        assert!(Calibrator::softplus(50.0).alr_bounds(f64::INFINITY, 0.1).is_err());
    }

    #[test]
    fn serde_field_names() {
        let json = serde_json::to_value(Calibrator::softplus(50.0)).unwrap();
        for key in ["kind", "epsilon", "beta", "p", "eta_lower", "eta_upper"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        let parsed: Calibrator = serde_json::from_str(r#"{"kind":"power_p","p":0.0625,"epsilon":1e-8}"#).unwrap();
        assert_eq!(parsed, Calibrator::power_p(0.0625, 1e-8));
    }

    fn any_bounded_calibrator() -> impl Strategy<Value = Calibrator> {
        prop_oneof![
            (1e-10f64..1.0).prop_map(Calibrator::eps_shift),
            (1e-2f64..1e4).prop_map(Calibrator::softplus),
            (0.01f64..=0.5, 1e-10f64..1.0).prop_map(|(p, e)| Calibrator::power_p(p, e)),
            (1e-4f64..1.0, 1.0f64..100.0, 1e-3f64..10.0)
                .prop_map(|(lo, w, r)| Calibrator::clip(lo, lo * w, r)),
        ]
    }

    proptest! {
        #[test]
        fn realized_alr_within_bounds(
            c in any_bounded_calibrator(),
            g in 1e-3f64..10.0,
            sigma in 0.0f64..5.0,
            fracs in prop::collection::vec(0.0f64..=1.0, 1..32),
        ) {
            let b = c.alr_bounds(g, sigma).unwrap();
            prop_assert!(0.0 < b.mu_lower && b.mu_lower <= b.mu_upper);
            let cap = (sigma * sigma + g * g).sqrt();
            let sqrt_v: Vec<f64> = fracs.iter().map(|f| f * cap).collect();
            for d in c.denominator(&sqrt_v).unwrap() {
                let alr = 1.0 / d;
                prop_assert!(alr >= b.mu_lower * (1.0 - 1e-12) && alr <= b.mu_upper * (1.0 + 1e-12),
                    "alr {} outside [{}, {}]", alr, b.mu_lower, b.mu_upper);
            }
        }

        #[test]
        fn denominator_monotone(
            c in prop_oneof![
                (0.0f64..1.0).prop_map(Calibrator::eps_shift),
                (1e-2f64..1e4).prop_map(Calibrator::softplus),
                (0.01f64..=0.5, 0.0f64..1.0).prop_map(|(p, e)| Calibrator::power_p(p, e)),
            ],
            s in 1e-6f64..10.0,
            ds in 0.0f64..10.0,
        ) {
            let a = c.denominator(&[s]).unwrap()[0];
            let b = c.denominator(&[s + ds]).unwrap()[0];
            prop_assert!(b >= a);
        }

        #[test]
        fn softplus_dominates_bare_sqrt(beta in 1e-3f64..1e4, s in 0.0f64..100.0) {
            let sp = Calibrator::softplus(beta).denominator(&[s]).unwrap()[0];
            prop_assert!(sp >= s);
        }

        #[test]
        fn large_beta_denominator_is_sqrt(beta in 1e3f64..1e6, s in 0.05f64..100.0) {
            let sp = Calibrator::softplus(beta).denominator(&[s]).unwrap()[0];
            prop_assert!(((sp - s) / s).abs() < 1e-6);
        }
    }
}
