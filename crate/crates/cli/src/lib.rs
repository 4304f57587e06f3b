//! Scenario runner for the `bismut-core` estimators.
//!
//! A scenario is a TOML file describing a model, a grid, a control, Monte
//! Carlo settings and the experiments to run on them. [`run_scenario`] executes
//! it and [`write_artifacts`] persists the results.

pub mod error;
pub mod output;
pub mod run;
pub mod scenario;

pub use error::CliError;
pub use output::{results_csv, write_artifacts};
pub use run::{run_prepared, run_scenario, CheckOutcome, Outcome, Report, RunOptions};
pub use scenario::{golden, golden_text, list_golden, Experiment, Scenario};

/// Exit status of a run with `--check` whose checks did not all pass.
pub const EXIT_CHECK_FAILED: i32 = 3;
