use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EnvError, InterferenceState, NetworkSample, MIN_BANDWIDTH_MBPS};
use crate::domain::{DeviceCategory, DeviceId, DeviceProfile};
use crate::seed::{self, SeedStreams};

/// Draws a bandwidth from `Normal(mean, stddev)` truncated below at 1 Mbps.
pub fn sample_network<R: Rng + ?Sized>(
    mean: f64,
    stddev: f64,
    rng: &mut R,
) -> Result<NetworkSample, EnvError> {
    if !(mean > 0.0) || !(stddev >= 0.0) {
        return Err(EnvError::InvalidModel(format!(
            "network mean {mean} must be positive and stddev {stddev} nonnegative"
        )));
    }
    let bw = if stddev == 0.0 {
        mean
    } else {
        let normal =
            Normal::new(mean, stddev).map_err(|e| EnvError::InvalidModel(e.to_string()))?;
        normal.sample(rng).max(MIN_BANDWIDTH_MBPS)
    };
    NetworkSample::from_bandwidth(bw)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkModel {
    pub mean_mbps: f64,
    pub stddev_mbps: f64,
    /// Draw once and reuse the same bandwidth every round.
    pub frozen: bool,
}

impl Default for NetworkModel {
    fn default() -> Self {
        Self {
            mean_mbps: 80.0,
            stddev_mbps: 0.0,
            frozen: false,
        }
    }
}

/// Co-runner load: each affected device is loaded with `probability` per
/// round, at the base magnitudes plus a uniform jitter of `±jitter`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterferenceModel {
    pub enabled: bool,
    pub probability: f64,
    pub co_cpu: f64,
    pub co_mem: f64,
    pub jitter: f64,
    /// Categories that can be loaded; empty means all.
    pub categories: Vec<DeviceCategory>,
    pub frozen: bool,
}

impl Default for InterferenceModel {
    fn default() -> Self {
        Self {
            enabled: false,
            probability: 0.5,
            co_cpu: 0.5,
            co_mem: 0.5,
            jitter: 0.0,
            categories: Vec::new(),
            frozen: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VarianceModel {
    pub interference: InterferenceModel,
    pub network: NetworkModel,
}

/// Raw per-device environment for one round.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RoundEnvironment {
    pub interference: BTreeMap<DeviceId, InterferenceState>,
    pub network: BTreeMap<DeviceId, NetworkSample>,
}

impl RoundEnvironment {
    pub fn interference_of(&self, id: DeviceId) -> Result<InterferenceState, EnvError> {
        self.interference
            .get(&id)
            .copied()
            .ok_or(EnvError::UnknownDevice(id))
    }

    pub fn network_of(&self, id: DeviceId) -> Result<NetworkSample, EnvError> {
        self.network
            .get(&id)
            .copied()
            .ok_or(EnvError::UnknownDevice(id))
    }
}

impl VarianceModel {
    /// No interference and a constant bandwidth.
    pub fn quiet(bandwidth_mbps: f64) -> Self {
        Self {
            interference: InterferenceModel::default(),
            network: NetworkModel {
                mean_mbps: bandwidth_mbps,
                stddev_mbps: 0.0,
                frozen: true,
            },
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let i = &self.interference;
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(i.probability)
            || !unit(i.co_cpu)
            || !unit(i.co_mem)
            || !(0.0..=1.0).contains(&i.jitter)
        {
            return Err(EnvError::InvalidModel(
                "interference probability, magnitudes and jitter must lie in [0, 1]".into(),
            ));
        }
        let n = &self.network;
        if !(n.mean_mbps > 0.0) || !(n.stddev_mbps >= 0.0) {
            return Err(EnvError::InvalidModel(
                "network mean must be positive and stddev nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Draws the environment of `round` for every device. Each device has its
    /// own stream keyed by (device, round), so results do not depend on the
    /// order devices are visited. Frozen sources always use round 0.
    pub fn draw(
        &self,
        round: u64,
        devices: &[DeviceProfile],
        streams: &SeedStreams,
    ) -> Result<RoundEnvironment, EnvError> {
        let mut env = RoundEnvironment::default();
        let i = &self.interference;
        let n = &self.network;
        for d in devices {
            let key = u64::from(d.id.0);
            let intf_round = if i.frozen { 0 } else { round };
            let affected =
                i.enabled && (i.categories.is_empty() || i.categories.contains(&d.category));
            let state = if affected {
                let mut rng = streams.rng(seed::INTF, &[key, intf_round]);
                let hit = i.probability >= 1.0 || rng.random::<f64>() < i.probability;
                if hit {
                    let mut jittered = |base: f64| {
                        let off = if i.jitter > 0.0 {
                            rng.random_range(-i.jitter..=i.jitter)
                        } else {
                            0.0
                        };
                        (base + off).clamp(0.0, 1.0)
                    };
                    let c = jittered(i.co_cpu);
                    let m = jittered(i.co_mem);
                    InterferenceState::new(c, m)?
                } else {
                    InterferenceState::NONE
                }
            } else {
                InterferenceState::NONE
            };
            env.interference.insert(d.id, state);

            let net_round = if n.frozen { 0 } else { round };
            let mut rng = streams.rng(seed::NET, &[key, net_round]);
            env.network
                .insert(d.id, sample_network(n.mean_mbps, n.stddev_mbps, &mut rng)?);
        }
        Ok(env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CategoryPreset, SignalTier};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fleet() -> Vec<DeviceProfile> {
        let mut out = Vec::new();
        for (i, cat) in [
            DeviceCategory::H,
            DeviceCategory::M,
            DeviceCategory::L,
            DeviceCategory::L,
        ]
        .into_iter()
        .enumerate()
        {
            out.push(
                CategoryPreset::for_category(cat)
                    .to_profile(DeviceId(i as u32), cat)
                    .unwrap(),
            );
        }
        out
    }

    #[test]
    fn degenerate_gaussian() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_network(80.0, 0.0, &mut rng).unwrap();
        assert_eq!(s.bandwidth, 80.0);
        assert_eq!(s.signal_tier, SignalTier::Regular);
        assert_eq!(
            sample_network(30.0, 0.0, &mut rng).unwrap().signal_tier,
            SignalTier::Bad
        );
    }

    #[test]
    fn sampled_sequence_is_reproducible_and_truncated() {
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200)
                .map(|_| sample_network(5.0, 20.0, &mut rng).unwrap().bandwidth)
                .collect::<Vec<_>>()
        };
        let a = draw(9);
        assert_eq!(a, draw(9));
        assert!(a.iter().all(|&b| b >= 1.0));
        assert!(a.contains(&1.0));
    }

    #[test]
    fn frozen_draws_repeat_across_rounds() {
        let model = VarianceModel {
            interference: InterferenceModel {
                enabled: true,
                probability: 1.0,
                co_cpu: 0.8,
                co_mem: 0.4,
                jitter: 0.1,
                categories: vec![DeviceCategory::L],
                frozen: true,
            },
            network: NetworkModel {
                mean_mbps: 60.0,
                stddev_mbps: 15.0,
                frozen: true,
            },
        };
        let streams = SeedStreams::new(5);
        let r1 = model.draw(1, &fleet(), &streams).unwrap();
        let r9 = model.draw(9, &fleet(), &streams).unwrap();
        assert_eq!(r1, r9);
        assert_eq!(r1.interference[&DeviceId(0)], InterferenceState::NONE);
        assert!(r1.interference[&DeviceId(2)].co_cpu > 0.6);
    }

    #[test]
    fn draws_do_not_depend_on_device_order() {
        let mut model = VarianceModel::default();
        model.interference.enabled = true;
        model.network.stddev_mbps = 30.0;
        let streams = SeedStreams::new(11);
        let fwd = model.draw(3, &fleet(), &streams).unwrap();
        let mut rev = fleet();
        rev.reverse();
        assert_eq!(fwd, model.draw(3, &rev, &streams).unwrap());
        assert_ne!(fwd, model.draw(4, &fleet(), &streams).unwrap());
    }
}
