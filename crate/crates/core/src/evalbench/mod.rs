//! Experiment harness: composite accuracy with and without fusion, parameter
//! and layer sweeps, the overhead benchmark, data scaling and reports.

mod bench;
mod eval;
mod experiment;
mod report;
mod sweep;

pub use bench::{bench_overhead, BenchConfig, OverheadRow, DEFAULT_LENGTHS};
pub use eval::{
    eval_composite, extract_answer, max_repeat_run, EvalResult, EvalRow, GenOutput, Generator, ModelGenerator, Verdict,
};
pub use experiment::{
    evaluate_seed, scaling_test, train_toy, ExperimentConfig, ScalingRow, SeedResult, TUNING_BETA_GRID,
};
pub use report::{emit_report, read_report, render_svg, Chart, ReportFormat, ReportRow};
pub use sweep::{
    layer_strategies, sweep_alpha_beta, sweep_layers, tune_beta, AlphaBetaRow, DegeneracyThresholds, Direction, LayerRow,
    DEFAULT_ALPHA_GRID, DEFAULT_BETA_GRID,
};

use crate::corpus::CorpusError;
use crate::lvlm::LvlmError;
use crate::steering::SteeringError;
use crate::train::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] LvlmError),
    #[error(transparent)]
    Steering(#[from] SteeringError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("no records to evaluate")]
    NoRecords,
    #[error("invalid sweep: {0}")]
    Sweep(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

#[cfg(test)]
mod tests;
