//! Shared vocabulary: the (B, E, K) parameter lattice, device categories and
//! profiles, power curves and workload metadata.
//!
//! Everything here is an immutable value object once constructed.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Allowed local minibatch sizes.
pub const BATCH_SIZES: [u32; 6] = [1, 2, 4, 8, 16, 32];
/// Allowed local epoch counts.
pub const EPOCH_COUNTS: [u32; 5] = [1, 5, 10, 15, 20];
/// Allowed participant counts.
pub const PARTICIPANT_COUNTS: [u32; 5] = [1, 5, 10, 15, 20];

/// Largest participant count on the lattice; a fleet must be at least this big
/// for every action to be valid.
pub const MAX_PARTICIPANTS: u32 = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DomainError {
    #[error("{component} = {value} is not on the lattice {allowed:?}")]
    OffLattice {
        component: ParamComponent,
        value: u32,
        allowed: &'static [u32],
    },
    #[error("K = {k} exceeds the fleet size {fleet_size}")]
    KExceedsFleet { k: u32, fleet_size: usize },
    #[error("invalid power curve: {0}")]
    InvalidPowerCurve(String),
    #[error("invalid device profile: {0}")]
    InvalidDevice(String),
    #[error("invalid workload profile: {0}")]
    InvalidWorkload(String),
    #[error("unknown device category `{0}` (expected H, M or L)")]
    UnknownCategory(String),
    #[error("unknown signal tier `{0}` (expected regular or bad)")]
    UnknownTier(String),
}

/// One component of a [`GlobalParams`] tuple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamComponent {
    B,
    E,
    K,
}

impl ParamComponent {
    pub fn lattice(self) -> &'static [u32] {
        match self {
            ParamComponent::B => &BATCH_SIZES,
            ParamComponent::E => &EPOCH_COUNTS,
            ParamComponent::K => &PARTICIPANT_COUNTS,
        }
    }
}

impl fmt::Display for ParamComponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamComponent::B => "B",
            ParamComponent::E => "E",
            ParamComponent::K => "K",
        })
    }
}

/// A round's global parameters: local minibatch size `b`, local epochs `e`
/// and participant count `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlobalParams {
    pub b: u32,
    pub e: u32,
    pub k: u32,
}

impl GlobalParams {
    pub const fn new(b: u32, e: u32, k: u32) -> Self {
        Self { b, e, k }
    }

    /// Short `B-E-K` label, used for file names and seed labels.
    pub fn label(&self) -> String {
        format!("{}-{}-{}", self.b, self.e, self.k)
    }
}

impl fmt::Display for GlobalParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(B={}, E={}, K={})", self.b, self.e, self.k)
    }
}

fn check_component(component: ParamComponent, value: u32) -> Result<(), DomainError> {
    let allowed = component.lattice();
    if allowed.contains(&value) {
        Ok(())
    } else {
        Err(DomainError::OffLattice {
            component,
            value,
            allowed,
        })
    }
}

/// Checks `p` against the discrete lattice and the fleet size.
pub fn validate_params(p: GlobalParams, fleet_size: usize) -> Result<GlobalParams, DomainError> {
    check_component(ParamComponent::B, p.b)?;
    check_component(ParamComponent::E, p.e)?;
    check_component(ParamComponent::K, p.k)?;
    if p.k as usize > fleet_size {
        return Err(DomainError::KExceedsFleet { k: p.k, fleet_size });
    }
    Ok(p)
}

/// All 150 lattice points, B-major then E then K.
pub fn enumerate_actions() -> Vec<GlobalParams> {
    let mut out =
        Vec::with_capacity(BATCH_SIZES.len() * EPOCH_COUNTS.len() * PARTICIPANT_COUNTS.len());
    for &b in &BATCH_SIZES {
        for &e in &EPOCH_COUNTS {
            for &k in &PARTICIPANT_COUNTS {
                out.push(GlobalParams { b, e, k });
            }
        }
    }
    out
}

/// Device performance category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DeviceCategory {
    H,
    M,
    L,
}

impl DeviceCategory {
    pub const ALL: [DeviceCategory; 3] = [DeviceCategory::H, DeviceCategory::M, DeviceCategory::L];

    pub fn label(self) -> &'static str {
        match self {
            DeviceCategory::H => "H",
            DeviceCategory::M => "M",
            DeviceCategory::L => "L",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DeviceCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DeviceCategory {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "H" | "h" => Ok(DeviceCategory::H),
            "M" | "m" => Ok(DeviceCategory::M),
            "L" | "l" => Ok(DeviceCategory::L),
            other => Err(DomainError::UnknownCategory(other.to_string())),
        }
    }
}

/// Wireless signal quality tier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalTier {
    Regular,
    Bad,
}

impl SignalTier {
    pub fn label(self) -> &'static str {
        match self {
            SignalTier::Regular => "regular",
            SignalTier::Bad => "bad",
        }
    }
}

impl fmt::Display for SignalTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for SignalTier {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regular" => Ok(SignalTier::Regular),
            "bad" => Ok(SignalTier::Bad),
            other => Err(DomainError::UnknownTier(other.to_string())),
        }
    }
}

/// Device identifier; summations over devices always run in ascending id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DeviceId(pub u32);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "d{}", self.0)
    }
}

/// Busy power per frequency step plus idle power, in watts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerCurve {
    busy_levels: BTreeMap<u32, f64>,
    nominal_step: u32,
    idle_power: f64,
}

impl PowerCurve {
    pub fn new(
        busy_levels: BTreeMap<u32, f64>,
        nominal_step: u32,
        idle_power: f64,
    ) -> Result<Self, DomainError> {
        if busy_levels.is_empty() {
            return Err(DomainError::InvalidPowerCurve("no busy levels".into()));
        }
        if !busy_levels.contains_key(&nominal_step) {
            return Err(DomainError::InvalidPowerCurve(format!(
                "nominal step {nominal_step} has no busy level"
            )));
        }
        let min_busy = busy_levels.values().copied().fold(f64::INFINITY, f64::min);
        if !(min_busy > 0.0) || !min_busy.is_finite() {
            return Err(DomainError::InvalidPowerCurve(
                "busy powers must be positive".into(),
            ));
        }
        if !(idle_power > 0.0) || idle_power >= min_busy {
            return Err(DomainError::InvalidPowerCurve(format!(
                "idle power {idle_power} W must be positive and below the minimum busy power {min_busy} W"
            )));
        }
        Ok(Self {
            busy_levels,
            nominal_step,
            idle_power,
        })
    }

    /// Single-level curve: `busy_power` at step 0.
    pub fn single(busy_power: f64, idle_power: f64) -> Result<Self, DomainError> {
        Self::new(BTreeMap::from([(0, busy_power)]), 0, idle_power)
    }

    pub fn busy_power(&self, step: u32) -> Option<f64> {
        self.busy_levels.get(&step).copied()
    }

    pub fn busy_levels(&self) -> &BTreeMap<u32, f64> {
        &self.busy_levels
    }

    pub fn nominal_step(&self) -> u32 {
        self.nominal_step
    }

    pub fn nominal_power(&self) -> f64 {
        self.busy_levels[&self.nominal_step]
    }

    pub fn idle_power(&self) -> f64 {
        self.idle_power
    }
}

/// Linear slowdown coefficients for co-runner interference:
/// `slowdown = 1 / (1 + cpu * co_cpu + mem * co_mem)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterferenceSensitivity {
    pub cpu: f64,
    pub mem: f64,
}

impl Default for InterferenceSensitivity {
    fn default() -> Self {
        Self { cpu: 1.0, mem: 0.5 }
    }
}

/// A virtual device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub id: DeviceId,
    pub category: DeviceCategory,
    /// Compute rate in GFLOPS.
    pub throughput: f64,
    /// Memory capacity in GB.
    pub ram: f64,
    pub power_curve: PowerCurve,
    /// Transmission power in watts per signal tier.
    pub tx_power_table: BTreeMap<SignalTier, f64>,
    pub sensitivity: InterferenceSensitivity,
}

impl DeviceProfile {
    pub fn validate(&self) -> Result<(), DomainError> {
        if !(self.throughput > 0.0) || !self.throughput.is_finite() {
            return Err(DomainError::InvalidDevice(format!(
                "{}: throughput must be positive",
                self.id
            )));
        }
        if !(self.ram > 0.0) {
            return Err(DomainError::InvalidDevice(format!(
                "{}: ram must be positive",
                self.id
            )));
        }
        if self.tx_power_table.values().any(|&p| !(p > 0.0)) {
            return Err(DomainError::InvalidDevice(format!(
                "{}: transmission powers must be positive",
                self.id
            )));
        }
        if self.sensitivity.cpu < 0.0 || self.sensitivity.mem < 0.0 {
            return Err(DomainError::InvalidDevice(format!(
                "{}: interference coefficients must be non-negative",
                self.id
            )));
        }
        Ok(())
    }
}

/// Built-in per-category defaults. Throughput and RAM follow the EC2
/// stand-ins for the three smartphone classes; busy power is the measured
/// CPU peak of the representative handset (GPU power is folded in, see
/// [`CategoryPreset::gpu_peak`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CategoryPreset {
    pub throughput: f64,
    pub ram: f64,
    pub busy_power: f64,
    pub idle_power: f64,
    pub tx_regular: f64,
    pub tx_bad: f64,
    pub intf_cpu_coef: f64,
    pub intf_mem_coef: f64,
    /// GPU peak power, kept for reference only; it does not enter the energy
    /// model.
    pub gpu_peak: f64,
}

pub const DEFAULT_IDLE_POWER: f64 = 0.3;
pub const DEFAULT_TX_REGULAR: f64 = 1.0;
pub const DEFAULT_TX_BAD: f64 = 2.5;

impl CategoryPreset {
    pub fn for_category(category: DeviceCategory) -> Self {
        let (throughput, ram, busy_power, gpu_peak) = match category {
            DeviceCategory::H => (153.6, 8.0, 5.5, 2.8),
            DeviceCategory::M => (80.0, 4.0, 5.6, 2.4),
            DeviceCategory::L => (52.8, 2.0, 3.6, 2.0),
        };
        let sens = InterferenceSensitivity::default();
        Self {
            throughput,
            ram,
            busy_power,
            idle_power: DEFAULT_IDLE_POWER,
            tx_regular: DEFAULT_TX_REGULAR,
            tx_bad: DEFAULT_TX_BAD,
            intf_cpu_coef: sens.cpu,
            intf_mem_coef: sens.mem,
            gpu_peak,
        }
    }

    pub fn to_profile(
        &self,
        id: DeviceId,
        category: DeviceCategory,
    ) -> Result<DeviceProfile, DomainError> {
        let profile = DeviceProfile {
            id,
            category,
            throughput: self.throughput,
            ram: self.ram,
            power_curve: PowerCurve::single(self.busy_power, self.idle_power)?,
            tx_power_table: BTreeMap::from([
                (SignalTier::Regular, self.tx_regular),
                (SignalTier::Bad, self.tx_bad),
            ]),
            sensitivity: InterferenceSensitivity {
                cpu: self.intf_cpu_coef,
                mem: self.intf_mem_coef,
            },
        };
        profile.validate()?;
        Ok(profile)
    }
}

impl Default for CategoryPreset {
    fn default() -> Self {
        Self::for_category(DeviceCategory::M)
    }
}

/// Neural-network metadata for the emulated workload. Layer counts feed the
/// controller state; `param_count` drives the FLOP cost model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadProfile {
    pub name: String,
    pub conv_layers: u32,
    pub fc_layers: u32,
    pub rc_layers: u32,
    pub param_count: u64,
    /// FLOPs per parameter for one forward+backward pass of one sample.
    #[serde(default = "default_flops_factor")]
    pub flops_factor: f64,
    /// Multiplies device throughput for this workload (1.0 = no effect).
    #[serde(default = "default_multiplier")]
    pub throughput_multiplier: f64,
}

fn default_flops_factor() -> f64 {
    6.0
}

fn default_multiplier() -> f64 {
    1.0
}

impl WorkloadProfile {
    pub fn new(name: &str, conv: u32, fc: u32, rc: u32, param_count: u64) -> Self {
        Self {
            name: name.to_string(),
            conv_layers: conv,
            fc_layers: fc,
            rc_layers: rc,
            param_count,
            flops_factor: default_flops_factor(),
            throughput_multiplier: default_multiplier(),
        }
    }

    /// Two conv + two dense layers, 1.66M parameters.
    pub fn cnn_mnist() -> Self {
        Self::new("cnn-mnist", 2, 2, 0, 1_663_370)
    }

    /// Embedding + two stacked LSTM layers + dense head.
    pub fn lstm_shakespeare() -> Self {
        Self::new("lstm-shakespeare", 0, 1, 2, 818_048)
    }

    pub fn mobilenet_imagenet() -> Self {
        Self::new("mobilenet-imagenet", 27, 1, 0, 4_231_976)
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "cnn-mnist" => Some(Self::cnn_mnist()),
            "lstm-shakespeare" => Some(Self::lstm_shakespeare()),
            "mobilenet-imagenet" => Some(Self::mobilenet_imagenet()),
            _ => None,
        }
    }

    pub fn flops_per_sample_pass(&self) -> f64 {
        self.flops_factor * self.param_count as f64
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.param_count == 0 {
            return Err(DomainError::InvalidWorkload(
                "param_count must be positive".into(),
            ));
        }
        if !(self.flops_factor > 0.0) {
            return Err(DomainError::InvalidWorkload(
                "flops_factor must be positive".into(),
            ));
        }
        if !(self.throughput_multiplier > 0.0) {
            return Err(DomainError::InvalidWorkload(
                "throughput_multiplier must be positive".into(),
            ));
        }
        Ok(())
    }
}
