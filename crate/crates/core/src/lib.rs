//! Softplus-calibrated adaptive gradient methods and the tooling to study them.
//!
//! * [`numerics`]: elementwise kernels, stable softplus, order statistics.
//! * [`calibrators`]: A-LR denominator rules and their analytic bounds.
//! * [`optim`]: SGD, S-Momentum, Adagrad, Adam, AMSGrad, Yogi, PAdam,
//!   PAMSGrad, AdaBound, AmsBound, Sadam and SAMSGrad.
//! * [`problems`]: objectives with exact gradients and assumption-enforcing
//!   stochastic oracles.
//! * [`data`]: synthetic blobs and IDX datasets.
//! * [`instrument`]: A-LR snapshots, auxiliary-sequence residuals and traces.

pub mod calibrators;
pub mod data;
pub mod error;
pub mod instrument;
pub mod numerics;
pub mod optim;
pub mod problems;

pub use calibrators::{AlrBounds, Calibrator, CalibratorKind, ClipSchedule};
pub use error::{Error, Result};
pub use optim::{DecayStage, FirstMomentRule, HyperParams, Method, OptimizerState, SecondMomentRule};
pub use instrument::{AlrSnapshot, RunMeta, StepRecord, TrajectoryRecord};
pub use problems::{GradientMode, Oracle, Problem};
