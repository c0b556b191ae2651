use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EnvError, InterferenceState, NetworkSample};
use crate::domain::{DeviceId, DeviceProfile, WorkloadProfile};

/// Per-device time accounting for one round, in seconds.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimingBreakdown {
    /// Busy seconds per frequency step.
    pub t_busy: BTreeMap<u32, f64>,
    pub t_tx: f64,
    pub t_idle: f64,
    pub t_round: f64,
}

impl TimingBreakdown {
    /// A participant that computes for `busy` seconds at `step`, transmits for
    /// `tx` seconds and then waits for the straggler until `t_round`.
    pub fn participant(step: u32, busy: f64, tx: f64, t_round: f64) -> Self {
        Self {
            t_busy: BTreeMap::from([(step, busy)]),
            t_tx: tx,
            t_idle: t_round - (busy + tx),
            t_round,
        }
    }

    /// A device that sits out the round.
    pub fn idler(t_round: f64) -> Self {
        Self {
            t_busy: BTreeMap::new(),
            t_tx: 0.0,
            t_idle: t_round,
            t_round,
        }
    }

    pub fn total_busy(&self) -> f64 {
        self.t_busy.values().sum()
    }
}

/// `1 + a * co_cpu + b * co_mem`; compute time is multiplied by this.
pub fn slowdown_divisor(device: &DeviceProfile, interference: InterferenceState) -> f64 {
    1.0 + device.sensitivity.cpu * interference.co_cpu
        + device.sensitivity.mem * interference.co_mem
}

/// Seconds to run `epochs` passes over `n_samples` local samples.
pub fn compute_time(
    device: &DeviceProfile,
    workload: &WorkloadProfile,
    n_samples: usize,
    epochs: u32,
    interference: InterferenceState,
) -> f64 {
    let flops = workload.flops_per_sample_pass() * n_samples as f64 * epochs as f64;
    let rate = device.throughput * workload.throughput_multiplier * 1e9;
    flops / rate * slowdown_divisor(device, interference)
}

/// Upload size of a model with `dimension` 32-bit parameters.
pub fn payload_bits(dimension: usize) -> u64 {
    32 * dimension as u64
}

/// Seconds to send `payload_bits` at the sampled bandwidth.
pub fn comm_time(payload_bits: u64, net: NetworkSample) -> f64 {
    payload_bits as f64 / (net.bandwidth * 1e6)
}

/// The slowest participant sets the round length.
pub fn round_time(per_device: &BTreeMap<DeviceId, f64>) -> Result<f64, EnvError> {
    per_device
        .values()
        .copied()
        .reduce(f64::max)
        .ok_or(EnvError::EmptyRound)
}
