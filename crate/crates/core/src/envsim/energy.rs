use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{EnvError, NetworkSample, TimingBreakdown};
use crate::domain::{DeviceId, DeviceProfile, PowerCurve};

/// Per-device energy for one round, in joules.
///
/// For participants `e_idle` is zero; their straggler wait is already part
/// of `e_comp` through the `P_idle * t_idle` term.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub e_comp: f64,
    pub e_comm: f64,
    pub e_idle: f64,
    pub e_local: f64,
}

impl EnergyBreakdown {
    pub fn participant(e_comp: f64, e_comm: f64) -> Self {
        Self {
            e_comp,
            e_comm,
            e_idle: 0.0,
            e_local: energy_local(true, e_comp, e_comm, 0.0),
        }
    }

    pub fn idler(e_idle: f64) -> Self {
        Self {
            e_comp: 0.0,
            e_comm: 0.0,
            e_idle,
            e_local: energy_local(false, 0.0, 0.0, e_idle),
        }
    }
}

/// Busy energy summed over frequency steps plus idle draw during `t_idle`.
pub fn energy_comp(pc: &PowerCurve, t: &TimingBreakdown) -> Result<f64, EnvError> {
    let mut e = 0.0;
    for (&step, &secs) in &t.t_busy {
        let p = pc
            .busy_power(step)
            .ok_or(EnvError::UnknownFrequencyStep(step))?;
        e += p * secs;
    }
    Ok(e + pc.idle_power() * t.t_idle)
}

pub fn energy_comm(device: &DeviceProfile, net: NetworkSample, t_tx: f64) -> Result<f64, EnvError> {
    let p = device
        .tx_power_table
        .get(&net.signal_tier)
        .ok_or(EnvError::UnknownTier {
            device: device.id,
            tier: net.signal_tier,
        })?;
    Ok(p * t_tx)
}

pub fn energy_idle(pc: &PowerCurve, t_round: f64) -> f64 {
    pc.idle_power() * t_round
}

pub fn energy_local(participant: bool, e_comp: f64, e_comm: f64, e_idle: f64) -> f64 {
    if participant {
        e_comp + e_comm
    } else {
        e_idle
    }
}

/// Sums local energies over every fleet member in ascending id order.
pub fn energy_global(
    locals: &BTreeMap<DeviceId, f64>,
    fleet: &[DeviceId],
) -> Result<f64, EnvError> {
    let mut ids = fleet.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let mut total = 0.0;
    for id in ids {
        total += locals.get(&id).ok_or(EnvError::MissingDevice(id))?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CategoryPreset, DeviceCategory, SignalTier};
    use std::collections::BTreeMap;

    fn device(cat: DeviceCategory) -> DeviceProfile {
        CategoryPreset::for_category(cat)
            .to_profile(DeviceId(3), cat)
            .unwrap()
    }

    #[test]
    fn comp_examples() {
        let h = device(DeviceCategory::H);
        let idle_only = TimingBreakdown {
            t_idle: 10.0,
            ..Default::default()
        };
        assert!((energy_comp(&h.power_curve, &idle_only).unwrap() - 3.0).abs() < 1e-12);
        let busy = TimingBreakdown::participant(h.power_curve.nominal_step(), 2.0, 0.0, 2.0);
        assert!((energy_comp(&h.power_curve, &busy).unwrap() - 11.0).abs() < 1e-12);

        let two = PowerCurve::new(BTreeMap::from([(0, 2.0), (1, 3.0)]), 1, 0.3).unwrap();
        let t = TimingBreakdown {
            t_busy: BTreeMap::from([(0, 1.0), (1, 1.0)]),
            ..Default::default()
        };
        assert!((energy_comp(&two, &t).unwrap() - 5.0).abs() < 1e-12);
        let bad_step = TimingBreakdown {
            t_busy: BTreeMap::from([(7, 1.0)]),
            ..Default::default()
        };
        assert_eq!(
            energy_comp(&two, &bad_step),
            Err(EnvError::UnknownFrequencyStep(7))
        );
    }

    #[test]
    fn comm_examples() {
        let d = device(DeviceCategory::M);
        let good = NetworkSample::from_bandwidth(80.0).unwrap();
        let bad = NetworkSample::from_bandwidth(20.0).unwrap();
        assert_eq!(energy_comm(&d, good, 0.0).unwrap(), 0.0);
        assert!((energy_comm(&d, good, 2.0).unwrap() - 2.0).abs() < 1e-12);
        assert!(energy_comm(&d, bad, 1.0).unwrap() > energy_comm(&d, good, 1.0).unwrap());

        let mut partial = d.clone();
        partial.tx_power_table.remove(&SignalTier::Bad);
        assert!(matches!(
            energy_comm(&partial, bad, 1.0),
            Err(EnvError::UnknownTier { .. })
        ));
    }

    #[test]
    fn idle_and_local_examples() {
        let pc = device(DeviceCategory::L).power_curve;
        assert_eq!(energy_idle(&pc, 0.0), 0.0);
        assert!((energy_idle(&pc, 100.0) - 30.0).abs() < 1e-12);
        assert_eq!(energy_idle(&pc, 20.0), 2.0 * energy_idle(&pc, 10.0));
        assert_eq!(energy_local(true, 11.0, 2.0, 99.0), 13.0);
        assert_eq!(energy_local(false, 11.0, 2.0, 30.0), 30.0);
        assert_eq!(EnergyBreakdown::participant(0.0, 0.0).e_local, 0.0);
    }

    #[test]
    fn global_examples() {
        let fleet: Vec<DeviceId> = (0..200).map(DeviceId).collect();
        let zeros: BTreeMap<_, _> = fleet.iter().map(|&d| (d, 0.0)).collect();
        assert_eq!(energy_global(&zeros, &fleet).unwrap(), 0.0);
        let ones: BTreeMap<_, _> = fleet.iter().map(|&d| (d, 1.0)).collect();
        assert_eq!(energy_global(&ones, &fleet).unwrap(), 200.0);

        let mini = [DeviceId(0), DeviceId(1), DeviceId(2)];
        let locals = BTreeMap::from([(DeviceId(0), 13.0), (DeviceId(1), 9.0), (DeviceId(2), 30.0)]);
        assert_eq!(energy_global(&locals, &mini).unwrap(), 52.0);
        let missing = BTreeMap::from([(DeviceId(0), 13.0)]);
        assert_eq!(
            energy_global(&missing, &mini),
            Err(EnvError::MissingDevice(DeviceId(1)))
        );
    }
}
