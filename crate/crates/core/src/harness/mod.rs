//! Experiment orchestration: configuration files, repetition averaging,
//! metrics and CSV output. The `isfedavg` binary is a thin layer over this.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod output;
pub mod verify;

pub use config::{ConfigFile, ExperimentSpec, Overrides};
pub use experiment::{prepare_problem, run_experiment, run_experiment_with, ExperimentResult, PreparedProblem};
pub use metrics::{msd, testing_error, to_db, Metric, MetricTrace, SchemeTrace};
pub use output::{read_trace, write_result};
