use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{
    comm_time, compute_time, energy_comm, energy_comp, energy_global, energy_idle, round_time,
    EnergyBreakdown, EnvError, RoundEnvironment, TimingBreakdown,
};
use crate::domain::{DeviceId, DeviceProfile, WorkloadProfile};

/// What one participant does in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParticipantWork {
    pub id: DeviceId,
    pub n_samples: usize,
    pub batch_size: u32,
    pub epochs: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSimulation {
    pub t_round: f64,
    pub timings: BTreeMap<DeviceId, TimingBreakdown>,
    pub energy: BTreeMap<DeviceId, EnergyBreakdown>,
    pub e_global: f64,
}

/// Times and meters one round for the whole fleet: participants compute,
/// upload and wait for the straggler; everyone else idles for `t_round`.
pub fn simulate_round(
    fleet: &[DeviceProfile],
    workload: &WorkloadProfile,
    work: &[ParticipantWork],
    env: &RoundEnvironment,
    payload_bits: u64,
) -> Result<RoundSimulation, EnvError> {
    let by_id: BTreeMap<DeviceId, &DeviceProfile> = fleet.iter().map(|d| (d.id, d)).collect();
    let mut busy = BTreeMap::new();
    let mut tx = BTreeMap::new();
    let mut latency = BTreeMap::new();
    for w in work {
        let d = by_id.get(&w.id).ok_or(EnvError::UnknownDevice(w.id))?;
        let t_c = compute_time(
            d,
            workload,
            w.n_samples,
            w.epochs,
            env.interference_of(w.id)?,
        );
        let t_x = comm_time(payload_bits, env.network_of(w.id)?);
        busy.insert(w.id, t_c);
        tx.insert(w.id, t_x);
        latency.insert(w.id, t_c + t_x);
    }
    let t_round = round_time(&latency)?;

    let mut timings = BTreeMap::new();
    let mut energy = BTreeMap::new();
    for (&id, d) in &by_id {
        let (timing, e) = match (busy.get(&id), tx.get(&id)) {
            (Some(&t_c), Some(&t_x)) => {
                let t =
                    TimingBreakdown::participant(d.power_curve.nominal_step(), t_c, t_x, t_round);
                let e_comp = energy_comp(&d.power_curve, &t)?;
                let e_comm = energy_comm(d, env.network_of(id)?, t_x)?;
                (t, EnergyBreakdown::participant(e_comp, e_comm))
            }
            _ => (
                TimingBreakdown::idler(t_round),
                EnergyBreakdown::idler(energy_idle(&d.power_curve, t_round)),
            ),
        };
        timings.insert(id, timing);
        energy.insert(id, e);
    }
    let locals: BTreeMap<DeviceId, f64> = energy.iter().map(|(&id, e)| (id, e.e_local)).collect();
    let ids: Vec<DeviceId> = by_id.keys().copied().collect();
    let e_global = energy_global(&locals, &ids)?;
    Ok(RoundSimulation {
        t_round,
        timings,
        energy,
        e_global,
    })
}
