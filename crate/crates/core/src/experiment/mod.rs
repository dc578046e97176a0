//! Configuration-addressed experiment runs behind the command line tool.

pub mod config;
pub mod run;

pub use config::{ConfigError, ExperimentConfig, VerifyOptions};
pub use run::{run_convergence, run_fwt, run_sample, run_verify, RunError, RunOptions, RunOutcome};
