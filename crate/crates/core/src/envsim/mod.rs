//! Simulated execution environment: compute and transmission timing,
//! co-runner interference and bandwidth variance, and the per-device energy
//! ledger (compute, transmission, idle) that sums to the fleet energy.

mod energy;
mod round;
mod timing;
mod variance;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DeviceId, SignalTier};

pub use energy::{
    energy_comm, energy_comp, energy_global, energy_idle, energy_local, EnergyBreakdown,
};
pub use round::{simulate_round, ParticipantWork, RoundSimulation};
pub use timing::{
    comm_time, compute_time, payload_bits, round_time, slowdown_divisor, TimingBreakdown,
};
pub use variance::{
    sample_network, InterferenceModel, NetworkModel, RoundEnvironment, VarianceModel,
};

/// Bandwidth at or below this many Mbps is a bad signal.
pub const BAD_SIGNAL_MBPS: f64 = 40.0;
/// Sampled bandwidth never drops below this many Mbps.
pub const MIN_BANDWIDTH_MBPS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("interference fractions must lie in [0, 1], got co_cpu={co_cpu}, co_mem={co_mem}")]
    InvalidInterference { co_cpu: f64, co_mem: f64 },
    #[error("bandwidth must be positive, got {0} Mbps")]
    InvalidBandwidth(f64),
    #[error("device {device} has no transmission power for the {tier} tier")]
    UnknownTier { device: DeviceId, tier: SignalTier },
    #[error("power curve has no busy level for frequency step {0}")]
    UnknownFrequencyStep(u32),
    #[error("no energy entry for fleet device {0}")]
    MissingDevice(DeviceId),
    #[error("round has no participants")]
    EmptyRound,
    #[error("invalid variance model: {0}")]
    InvalidModel(String),
    #[error("device {0} is not in the fleet")]
    UnknownDevice(DeviceId),
}

/// Co-running application load on one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceState {
    pub co_cpu: f64,
    pub co_mem: f64,
}

impl InterferenceState {
    pub const NONE: InterferenceState = InterferenceState {
        co_cpu: 0.0,
        co_mem: 0.0,
    };

    pub fn new(co_cpu: f64, co_mem: f64) -> Result<Self, EnvError> {
        if !(0.0..=1.0).contains(&co_cpu) || !(0.0..=1.0).contains(&co_mem) {
            return Err(EnvError::InvalidInterference { co_cpu, co_mem });
        }
        Ok(Self { co_cpu, co_mem })
    }
}

/// One bandwidth observation and its derived signal tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkSample {
    pub bandwidth: f64,
    pub signal_tier: SignalTier,
}

impl NetworkSample {
    pub fn from_bandwidth(bandwidth: f64) -> Result<Self, EnvError> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(EnvError::InvalidBandwidth(bandwidth));
        }
        let signal_tier = if bandwidth <= BAD_SIGNAL_MBPS {
            SignalTier::Bad
        } else {
            SignalTier::Regular
        };
        Ok(Self {
            bandwidth,
            signal_tier,
        })
    }
}
