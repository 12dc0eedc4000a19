//! Config-driven experiments, score-table replay and report persistence.

pub mod config;
pub mod experiment;
pub mod nticket;
pub mod replay;
pub mod report;

pub use config::{Experiment, ExperimentConfig, OutputFormat};
pub use experiment::{evaluate_splits, replay, run_experiment, ExperimentRun, SplitSettings};
pub use nticket::{run_nticket_curve, NTicketCurve};
pub use replay::ScoreTable;
pub use report::{curve_csv, ExperimentReport, SchemeReport};
