//! Experiment runner for the `alr-core` optimizers: replicated runs,
//! rate-scaling studies, grid search and comparison tables.

pub mod config;
pub mod output;
pub mod runner;
pub mod study;

pub use config::{DataSpec, ExperimentConfig, OracleSpec, ProblemSpec};
pub use runner::{run, run_replicate, simulate, Outcome, RunReport, RunSummary};
pub use study::{
    compare, grid_search, rate_study, CompareRow, EtaRule, GridMetric, GridRow, Lattice, RateMetric, RateResult,
    RateStudy,
};
