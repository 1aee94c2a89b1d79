//! Multi-trial experiments: configuration, trial execution, metrics and CSV
//! export.

mod config;
mod experiment;
pub mod metrics;
mod trial;

pub use config::{ExperimentConfig, TopologyConfig};
pub use experiment::{run_experiment, summarize, ExperimentSummary, SummaryRow, CSV_HEADER};
pub use metrics::{consensus_error, mse};
pub use trial::{
    initial_states, run_prepared, run_trial, run_trial_recorded, shared_problem, trial_keys, trial_weights,
    SharedProblem, TrialOptions, TrialResult, TrialRun,
};
