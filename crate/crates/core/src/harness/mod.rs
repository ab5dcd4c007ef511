//! Seeded multi-trial experiments and their CSV output.

pub mod config;
pub mod experiment;
pub mod output;

pub use config::{DataSource, ExperimentConfig, InitKind, LocalSteps, RunSpec};
pub use experiment::{compare_modes, execute, run_experiment, Comparison, ModeOutcome, TrialRun, TrialSummary};
