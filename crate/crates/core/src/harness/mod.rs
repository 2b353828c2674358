//! Experiment harness: JSON configuration, CSV ingestion and emission, and
//! Monte Carlo orchestration.

mod config;
mod csvio;
mod experiment;

pub use config::{
    Config, EvaluationConfig, ExperimentConfig, Mode, PriorConfig, ScenarioConfig, ScenarioSource, SCHEMA,
};
pub use csvio::{
    parse_measurement_csv, parse_measurements, write_measurement_csv, write_measurements, write_table, FrameSeries,
};
pub use experiment::{
    evaluate_batch, filter_run, run_batch, run_experiment, simulate_run, summarize, time_average, BatchMetrics,
    ExperimentReport, RunResult, RunTrace, Summary,
};
