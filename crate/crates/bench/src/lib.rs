//! Experiment runner for the vicious-classifier benchmark: declarative
//! configs, multi-seed runs, sweeps, plots and reports.

pub mod config;
pub mod error;
pub mod plots;
pub mod report;
pub mod runner;

pub use config::{preset, ExperimentConfig, PRESETS};
pub use error::{BenchError, BenchResult, ExitCategory};
