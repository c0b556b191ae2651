//! Experiment driver: builds the fleet and data from a [`Scenario`], runs
//! the round loop under one strategy and collects per-round records.

mod metrics;
mod report;
mod run;
mod scenario;

use thiserror::Error;

pub use metrics::{compare, compute_ppw, detect_convergence, ComparisonRow, ComparisonTable};
pub use report::{
    read_report_jsonl, report_to_jsonl, rounds_to_csv, write_atomic, write_outputs, OutputFiles,
};
pub use run::{
    observe_fleet, prepare_data, resolve_energy_norm, run_experiment, run_experiment_with,
    run_strategies, DeviceRound, ExperimentReport, PreparedData, RoundRecord, RunOptions,
};
pub use scenario::{
    CategoryOverride, ConvergenceSpec, DataSpec, FleetSpec, ModelSpec, PartitionMode, Scenario,
    StrategyName, StrategySpec,
};

use crate::baselines::BaselineError;
use crate::controller::ControllerError;
use crate::domain::{DeviceId, DomainError};
use crate::envsim::EnvError;
use crate::fedcore::FedError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("run did not converge")]
    NotConverged,
    #[error("scenario mismatch: {0}")]
    ScenarioMismatch(String),
    #[error("device {0} has no data shard")]
    MissingShard(DeviceId),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Baseline(BaselineError),
    #[error("malformed report: {0}")]
    Report(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Unwraps harness errors that travelled through a baseline.
    pub fn from_baseline(e: BaselineError) -> Self {
        match e {
            BaselineError::Harness(inner) => *inner,
            other => HarnessError::Baseline(other),
        }
    }
}

impl From<BaselineError> for HarnessError {
    fn from(e: BaselineError) -> Self {
        Self::from_baseline(e)
    }
}
