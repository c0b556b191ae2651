//! Seeded federated-learning simulator with a tabular Q-learning controller
//! that picks `(B, E, K)` each aggregation round.

// `!(x > 0.0)` is used on purpose: it rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod config;
pub mod controller;
pub mod domain;
pub mod envsim;
pub mod fedcore;
pub mod harness;
pub mod seed;

pub use domain::{
    enumerate_actions, validate_params, DeviceCategory, DeviceId, DeviceProfile, DomainError,
    GlobalParams, PowerCurve, SignalTier, WorkloadProfile,
};
