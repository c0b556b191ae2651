//! Desk-scale federated training: synthetic data, IID and Dirichlet
//! partitioning, local SGD, weighted averaging and evaluation.

mod data;
mod model;
pub mod textfmt;
mod train;

use thiserror::Error;

use crate::domain::DeviceId;

pub use data::{
    generate_blobs, generate_synthetic_dataset, partition_dirichlet, partition_iid, pool,
    ClientDataset, Dataset, Partition, Sample, SyntheticSpec,
};
pub use model::{Architecture, Classifier, Logistic, Mlp, ModelParams, Objective};
pub use train::{aggregate, client_update, evaluate, full_batch_step, Evaluation};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FedError {
    #[error("invalid dataset shape: {0}")]
    InvalidShape(String),
    #[error("cannot split {samples} samples across {devices} devices")]
    TooManyDevices { devices: usize, samples: usize },
    #[error("Dirichlet concentration must be positive, got {0}")]
    DegenerateConcentration(f64),
    #[error("device {0} has no local samples")]
    EmptyDataset(DeviceId),
    #[error("parameter dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no client updates to aggregate")]
    EmptyUpdates,
    #[error("missing or zero sample count for device {0}")]
    MissingCount(DeviceId),
    #[error("{0}")]
    InvalidArgument(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}
