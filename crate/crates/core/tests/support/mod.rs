//! Independent oracles shared by the acceptance target and the oracle tests.

#![allow(dead_code)]

use std::collections::BTreeMap;

use flsim_core::controller::{
    compute_reward, q_update, select_action, Action, ActionKind, ControllerConfig, InitMode,
    QTable, StateVector, TableScope,
};
use flsim_core::domain::{
    CategoryPreset, DeviceCategory, DeviceId, DeviceProfile, PowerCurve, SignalTier,
};
use flsim_core::envsim::{
    comm_time, compute_time, energy_comm, energy_comp, energy_global, energy_idle, energy_local,
    InterferenceState, NetworkSample, RoundEnvironment, TimingBreakdown,
};
use flsim_core::fedcore::{
    aggregate, client_update, full_batch_step, generate_blobs, partition_iid, pool, Architecture,
    Classifier, SyntheticSpec,
};
use flsim_core::seed::SeedStreams;
use flsim_core::WorkloadProfile;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300) || a == b
}

fn preset(cat: DeviceCategory, id: u32) -> DeviceProfile {
    CategoryPreset::for_category(cat)
        .to_profile(DeviceId(id), cat)
        .unwrap()
}

/// Every hand-worked timing, energy and reward example. Returns the names
/// of the checks that failed.
pub fn equation_suite() -> Vec<String> {
    let mut failed = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            failed.push(name.to_string());
        }
    };
    let tol = 1e-9;

    // compute time: 3e5 FLOPs per sample pass, 600 samples, 5 epochs on H.
    let h = preset(DeviceCategory::H, 0);
    let mut w = WorkloadProfile::new("probe", 1, 1, 0, 50_000);
    w.flops_factor = 6.0;
    let t = compute_time(&h, &w, 600, 5, InterferenceState::NONE);
    check("compute_time H 600x5", rel_close(t, 9e8 / 1.536e11, tol));
    let loaded = compute_time(&h, &w, 600, 5, InterferenceState::new(1.0, 1.0).unwrap());
    check(
        "compute_time full interference x2.5",
        rel_close(loaded, 2.5 * t, tol),
    );

    let net = |bw: f64| NetworkSample::from_bandwidth(bw).unwrap();
    check(
        "comm_time 40e6 bits @ 40 Mbps",
        rel_close(comm_time(40_000_000, net(40.0)), 1.0, tol),
    );
    check(
        "comm_time halves with double bandwidth",
        rel_close(
            comm_time(5440, net(160.0)),
            comm_time(5440, net(80.0)) / 2.0,
            tol,
        ),
    );

    let idle_only = PowerCurve::single(5.5, 0.3).unwrap();
    let tb = TimingBreakdown {
        t_busy: BTreeMap::new(),
        t_tx: 0.0,
        t_idle: 10.0,
        t_round: 10.0,
    };
    check(
        "energy_comp idle only",
        rel_close(energy_comp(&idle_only, &tb).unwrap(), 3.0, tol),
    );
    let tb = TimingBreakdown::participant(0, 2.0, 0.0, 2.0);
    check(
        "energy_comp H busy 2 s",
        rel_close(energy_comp(&h.power_curve, &tb).unwrap(), 11.0, tol),
    );
    let two = PowerCurve::new(BTreeMap::from([(0, 2.0), (1, 3.0)]), 0, 0.3).unwrap();
    let tb = TimingBreakdown {
        t_busy: BTreeMap::from([(0, 1.0), (1, 1.0)]),
        t_tx: 0.0,
        t_idle: 0.0,
        t_round: 2.0,
    };
    check(
        "energy_comp two steps",
        rel_close(energy_comp(&two, &tb).unwrap(), 5.0, tol),
    );

    check(
        "energy_comm zero",
        energy_comm(&h, net(80.0), 0.0).unwrap() == 0.0,
    );
    check(
        "energy_comm regular 2 s",
        rel_close(energy_comm(&h, net(80.0), 2.0).unwrap(), 2.0, tol),
    );
    let bad = energy_comm(&h, net(20.0), 1.0).unwrap();
    let good = energy_comm(&h, net(80.0), 1.0).unwrap();
    check(
        "energy_comm bad tier costlier",
        bad > good && h.tx_power_table[&SignalTier::Bad] == 2.5,
    );

    let pc = PowerCurve::single(5.5, 0.3).unwrap();
    check("energy_idle zero", energy_idle(&pc, 0.0) == 0.0);
    check(
        "energy_idle 100 s",
        rel_close(energy_idle(&pc, 100.0), 30.0, tol),
    );
    check(
        "energy_idle linear",
        rel_close(energy_idle(&pc, 200.0), 2.0 * energy_idle(&pc, 100.0), tol),
    );

    check(
        "energy_local participant",
        rel_close(energy_local(true, 11.0, 2.0, 0.0), 13.0, tol),
    );
    check(
        "energy_local idler",
        rel_close(energy_local(false, 0.0, 0.0, 30.0), 30.0, tol),
    );
    check(
        "energy_local zero round",
        energy_local(true, 0.0, 0.0, 0.0) == 0.0,
    );

    let ids: Vec<DeviceId> = (0..3).map(DeviceId).collect();
    let locals = BTreeMap::from([(ids[0], 13.0), (ids[1], 9.0), (ids[2], 30.0)]);
    check(
        "energy_global mini fleet",
        rel_close(energy_global(&locals, &ids).unwrap(), 52.0, tol),
    );
    let many: Vec<DeviceId> = (0..200).map(DeviceId).collect();
    let ones = many.iter().map(|&d| (d, 1.0)).collect();
    check(
        "energy_global 200 x 1 J",
        rel_close(energy_global(&ones, &many).unwrap(), 200.0, tol),
    );
    let zeros = many.iter().map(|&d| (d, 0.0)).collect();
    check(
        "energy_global zeros",
        energy_global(&zeros, &many).unwrap() == 0.0,
    );
    check(
        "energy_global missing",
        energy_global(&locals, &many).is_err(),
    );

    let cfg = ControllerConfig {
        energy_norm: Some(10.0),
        ..ControllerConfig::default()
    };
    check(
        "reward degradation",
        compute_reward(5.0, 2.0, 80.0, 85.0, &cfg) == -20.0,
    );
    check(
        "reward equality branch",
        compute_reward(5.0, 2.0, 80.0, 80.0, &cfg) == -20.0,
    );
    check(
        "reward improvement",
        rel_close(compute_reward(5.0, 2.0, 80.0, 79.0, &cfg), 89.3, tol),
    );
    failed
}

/// Two-action toy used by the tabular learning oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Move(pub usize);

impl Action for Move {
    const COUNT: usize = 2;
    const KIND: ActionKind = ActionKind::Global;

    fn index(&self) -> usize {
        self.0
    }

    fn from_index(i: usize) -> Option<Self> {
        (i < 2).then_some(Move(i))
    }
}

/// Deterministic 3-state chain with noisy rewards, restarted from a uniform
/// state every `episode` steps. The immediate reward favours staying in
/// state 0, but the discounted value favours moving to state 2 and
/// collecting its large payoff.
pub struct ToyMdp {
    pub next: [[usize; 2]; 3],
    pub reward: [[f64; 2]; 3],
    pub noise: f64,
    pub episode: usize,
}

impl ToyMdp {
    pub fn standard() -> Self {
        Self {
            next: [[0, 2], [1, 2], [0, 1]],
            reward: [[1.0, 0.5], [3.0, 0.0], [0.0, 20.0]],
            noise: 0.25,
            episode: 10,
        }
    }

    /// Optimal action values under discount `mu`, by value iteration.
    pub fn optimal_q(&self, mu: f64) -> [[f64; 2]; 3] {
        let mut q = [[0.0f64; 2]; 3];
        for _ in 0..10_000 {
            let v: Vec<f64> = q.iter().map(|r| r[0].max(r[1])).collect();
            let mut delta: f64 = 0.0;
            for s in 0..3 {
                for a in 0..2 {
                    let new = self.reward[s][a] + mu * v[self.next[s][a]];
                    delta = delta.max((new - q[s][a]).abs());
                    q[s][a] = new;
                }
            }
            if delta < 1e-14 {
                break;
            }
        }
        q
    }

    pub fn optimal_policy(&self, mu: f64) -> [usize; 3] {
        let q = self.optimal_q(mu);
        [0, 1, 2].map(|s| if q[s][1] > q[s][0] { 1 } else { 0 })
    }

    /// Runs `updates` ε-greedy steps of the library's update rule and
    /// returns the greedy action per state.
    pub fn learn(&self, cfg: &ControllerConfig, seed: u64, updates: usize) -> [usize; 3] {
        let states: Vec<StateVector> = (0..3)
            .map(|i| StateVector::from_index(i).unwrap())
            .collect();
        let mut table: QTable<Move> = QTable::new(TableScope::Server, InitMode::Random(seed));
        let streams = SeedStreams::new(seed);
        let mut rng = streams.rng("toy", &[]);
        let noise = Normal::new(0.0, self.noise).unwrap();
        let mut s = 0;
        for step in 0..updates {
            if step % self.episode == 0 {
                s = rng.random_range(0..3);
            }
            let a = select_action(&table, &states[s], cfg.epsilon, &mut rng);
            let s2 = self.next[s][a.0];
            let r = self.reward[s][a.0] + noise.sample(&mut rng);
            q_update(&mut table, &states[s], &a, r, &states[s2], cfg).unwrap();
            s = s2;
        }
        [0, 1, 2].map(|i| table.argmax(&states[i]).0)
    }
}

/// Largest relative gap between FedAvg with full local batches and one
/// centralized full-batch step, over `rounds` rounds.
pub fn fedavg_gap(n_devices: usize, rounds: usize, seed: u64) -> f64 {
    let spec = SyntheticSpec {
        n_classes: 4,
        n_samples: 800,
        feature_dim: 6,
        separation: 1.0,
    };
    let ds = generate_blobs(&spec, seed).unwrap();
    let part = partition_iid(&ds, n_devices, seed ^ 1).unwrap();
    let union = pool(&part);
    let model = Classifier::new(Architecture {
        n_classes: 4,
        feature_dim: 6,
        hidden_units: None,
    });
    let eta = 0.1;
    let mut w_fed = model.init_params(seed);
    let mut w_cen = w_fed.clone();
    let mut worst: f64 = 0.0;
    for r in 0..rounds {
        let mut updates = BTreeMap::new();
        let mut counts = BTreeMap::new();
        for (&id, shard) in &part {
            let b = shard.len() as u32;
            updates.insert(
                id,
                client_update(&model, &w_fed, shard, b, 1, eta, r as u64).unwrap(),
            );
            counts.insert(id, shard.len());
        }
        w_fed = aggregate(&updates, &counts).unwrap();
        w_cen = full_batch_step(&model, &w_cen, &union, eta);
        let diff: f64 = w_fed
            .weights
            .iter()
            .zip(&w_cen.weights)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = w_cen.weights.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-300));
    }
    worst
}

/// Round latency when every fleet device trains with the `(B, E)` returned
/// by `assign`, computed from the raw profile numbers.
pub fn fleet_latency(
    fleet: &[DeviceProfile],
    workload: &WorkloadProfile,
    samples: &BTreeMap<DeviceId, usize>,
    env: &RoundEnvironment,
    payload_bits: u64,
    epochs_of: impl Fn(&DeviceProfile) -> u32,
) -> f64 {
    fleet
        .iter()
        .map(|d| {
            let intf = env.interference[&d.id];
            let bw = env.network[&d.id].bandwidth;
            let flops = workload.flops_factor
                * workload.param_count as f64
                * samples[&d.id] as f64
                * epochs_of(d) as f64;
            let rate = d.throughput * workload.throughput_multiplier * 1e9;
            let slow = 1.0 + d.sensitivity.cpu * intf.co_cpu + d.sensitivity.mem * intf.co_mem;
            flops / rate * slow + payload_bits as f64 / (bw * 1e6)
        })
        .fold(0.0, f64::max)
}

/// Brute force over all 30^3 per-category `(B, E)` assignments.
pub fn straggler_oracle(
    fleet: &[DeviceProfile],
    workload: &WorkloadProfile,
    samples: &BTreeMap<DeviceId, usize>,
    env: &RoundEnvironment,
    payload_bits: u64,
) -> (f64, [(u32, u32); 3]) {
    let pairs: Vec<(u32, u32)> = flsim_core::domain::BATCH_SIZES
        .iter()
        .flat_map(|&b| {
            flsim_core::domain::EPOCH_COUNTS
                .iter()
                .map(move |&e| (b, e))
        })
        .collect();
    let mut best = (f64::INFINITY, [(0, 0); 3]);
    for &h in &pairs {
        for &m in &pairs {
            for &l in &pairs {
                let choice = [h, m, l];
                let t = fleet_latency(fleet, workload, samples, env, payload_bits, |d| {
                    choice[d.category.index()].1
                });
                if t < best.0 {
                    best = (t, choice);
                }
            }
        }
    }
    best
}
