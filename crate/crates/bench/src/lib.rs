//! Shared fixtures for the criterion benches: the desk scenario with its
//! data, fleet and first-round observation prepared once.

use flsim_core::controller::{Feedback, Observation};
use flsim_core::harness::{observe_fleet, prepare_data, PreparedData, Scenario};
use flsim_core::seed::SeedStreams;
use flsim_core::DeviceProfile;

pub struct Fixture {
    pub scenario: Scenario,
    pub fleet: Vec<DeviceProfile>,
    pub data: PreparedData,
    pub obs: Observation,
}

impl Fixture {
    pub fn desk() -> Self {
        let mut scenario = Scenario::desk();
        scenario.controller.energy_norm = Some(0.25);
        let fleet = scenario.fleet.build().expect("desk fleet");
        let data = prepare_data(&scenario).expect("desk data");
        let env = scenario
            .variance
            .draw(1, &fleet, &SeedStreams::new(scenario.seed))
            .expect("desk env");
        let obs =
            observe_fleet(&scenario, &fleet, &env, &data.partition).expect("desk observation");
        Self {
            scenario,
            fleet,
            data,
            obs,
        }
    }

    /// A plausible improving round in which every device took part.
    pub fn feedback(&self) -> Feedback {
        Feedback {
            accuracy: 80.0,
            accuracy_prev: 78.0,
            e_global: 0.3,
            e_local: self.fleet.iter().map(|d| (d.id, 0.015)).collect(),
            participants: self.fleet.iter().map(|d| d.id).collect(),
        }
    }
}
