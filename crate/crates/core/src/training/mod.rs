//! Objective assembly, the alternating update loop and experiment runs.
//!
//! Per step the generators minimize adversarial + cycle + identity terms
//! (plus any frequency-distribution terms), then the discriminators are
//! updated on the same, now detached, fakes.

mod config;
mod run;
mod state;

pub use config::{AdvForm, ExperimentConfig, PRESET_NAMES};
pub use run::{
    evaluate_state, pooled_categorical, run_grid, sample_batch, sanitize, train_run, translate, Direction,
    EvalRecord, GridRow, LogWriter, RunOptions, RunOutcome,
};
pub use state::{step_rng, Batch, Components, StepLog, TrainState, LOG_HEADER};
