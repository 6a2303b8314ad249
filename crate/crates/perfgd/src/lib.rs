//! Experiment harness for comparing RRM, RGD and PerfGD: configs and presets,
//! multi-trial runs and result files.

pub mod config;
pub mod emit;
pub mod error;
pub mod run;

pub use config::{load, parse_config, preset, ExperimentConfig, Format, PRESETS};
pub use error::{BenchError, Result};
pub use run::{run_experiment, AggregateResult, AggregateRow};
