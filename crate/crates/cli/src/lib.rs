//! Config-driven experiment runner for the `fairsched` schedulers.

pub mod config;
pub mod run;

pub use config::{parse_config, parse_config_str, Case, ConfigError, ExperimentConfig, Method};
pub use run::{compute_cells, run_experiment, summary_table, CellResult, Overrides, RunError, RunOutcome};
