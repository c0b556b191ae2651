use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::detect_convergence;
use super::scenario::{PartitionMode, Scenario, StrategyName, StrategySpec};
use super::HarnessError;
use crate::baselines::{fixed_best_sweep, ga_adaptive, random_adaptive};
use crate::controller::{
    compute_reward, observe_state, Assignment, Controller, ControllerTables, Feedback, LocalAction,
    Observation, StateVector,
};
use crate::domain::{DeviceCategory, DeviceId, DeviceProfile, GlobalParams};
use crate::envsim::{
    payload_bits, simulate_round, EnergyBreakdown, ParticipantWork, RoundEnvironment,
};
use crate::fedcore::{
    aggregate, client_update, evaluate, generate_blobs, partition_dirichlet, partition_iid,
    Architecture, Classifier, ClientDataset, ModelParams, Partition, Sample, SyntheticSpec,
};
use crate::seed::{self, SeedStreams};

/// One device's share of a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRound {
    pub device: DeviceId,
    pub category: DeviceCategory,
    pub participant: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e: Option<u32>,
    pub t_busy: f64,
    pub t_tx: f64,
    pub t_idle: f64,
    pub energy: EnergyBreakdown,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub k: u32,
    pub participants: Vec<DeviceId>,
    pub t_round: f64,
    pub e_global: f64,
    pub accuracy: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub devices: Vec<DeviceRound>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub server_reward: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fitness: Option<f64>,
    /// Largest `|Δ max_A Q|` after this round's table updates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_delta: Option<f64>,
}

impl RoundRecord {
    /// Participant `(B, E)` pairs in device order.
    pub fn actions(&self) -> impl Iterator<Item = (DeviceId, u32, u32)> + '_ {
        self.devices
            .iter()
            .filter_map(|d| Some((d.device, d.b?, d.e?)))
    }

    pub fn mean_b(&self) -> f64 {
        mean(self.actions().map(|(_, b, _)| b as f64))
    }

    pub fn mean_e(&self) -> f64 {
        mean(self.actions().map(|(_, _, e)| e as f64))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// The resolved scenario; re-running it reproduces this report.
    pub scenario: Scenario,
    pub target_accuracy: f64,
    pub initial_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_best: Option<GlobalParams>,
    pub rounds: Vec<RoundRecord>,
    pub convergence_round: Option<u32>,
    pub convergence_time: Option<f64>,
    pub total_energy_to_convergence: Option<f64>,
    pub total_energy: f64,
    pub ppw: Option<f64>,
    pub final_accuracy: f64,
    /// First round at which the controller tables met the convergence test.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table_converged_round: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qtable_bytes: Option<usize>,
    /// Wall-clock seconds spent in the controller, per round. Host-dependent,
    /// so it is kept out of the serialized report.
    #[serde(skip)]
    pub controller_overhead: Vec<f64>,
    #[serde(skip)]
    pub tables: Option<ControllerTables>,
}

/// Knobs that are not part of the scenario itself.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Seed for the per-run streams (selection, network, interference,
    /// exploration, shuffling). Data and partition always follow the
    /// scenario seed.
    pub run_seed: Option<u64>,
    /// Start the controller from these tables.
    pub warm_tables: Option<ControllerTables>,
    /// Grid-search winner to use for `fixed-best` instead of searching.
    pub fixed_best: Option<GlobalParams>,
}

/// Training data, test data and the partition shared by every run of one
/// scenario seed.
pub struct PreparedData {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    pub partition: Partition,
    pub classifier: Classifier,
    pub target_accuracy: f64,
}

pub fn prepare_data(s: &Scenario) -> Result<PreparedData, HarnessError> {
    let streams = SeedStreams::new(s.seed);
    let spec = SyntheticSpec {
        n_classes: s.data.n_classes,
        n_samples: s.data.n_samples,
        feature_dim: s.data.feature_dim,
        separation: s.data.separation,
    };
    let full = generate_blobs(&spec, streams.derive(seed::DATA, &[]))?;
    let (train, test) = full.split(s.data.test_fraction, streams.derive(seed::DATA, &[1]))?;
    let n = s.fleet.size();
    let part_seed = streams.derive(seed::PARTITION, &[]);
    let partition = match s.data.partition {
        PartitionMode::Iid => partition_iid(&train, n, part_seed)?,
        PartitionMode::Dirichlet => {
            partition_dirichlet(&train, n, s.data.concentration, part_seed)?
        }
    };
    let classifier = Classifier::new(Architecture {
        n_classes: s.data.n_classes,
        feature_dim: s.data.feature_dim,
        hidden_units: s.model.hidden_units,
    });
    let target_accuracy = match s.convergence.target_accuracy {
        Some(t) => t,
        None => reference_accuracy(s, &classifier, &train.samples, &test.samples, &streams)?,
    };
    Ok(PreparedData {
        train: train.samples,
        test: test.samples,
        partition,
        classifier,
        target_accuracy,
    })
}

/// Test accuracy of centralized minibatch SGD on the pooled training data.
fn reference_accuracy(
    s: &Scenario,
    classifier: &Classifier,
    train: &[Sample],
    test: &[Sample],
    streams: &SeedStreams,
) -> Result<f64, HarnessError> {
    let pooled = ClientDataset::new(DeviceId(u32::MAX), train.to_vec());
    let w0 = classifier.init_params(streams.derive(seed::MODEL_INIT, &[]));
    let w = client_update(
        classifier,
        &w0,
        &pooled,
        s.convergence.reference_batch,
        s.convergence.reference_epochs,
        s.model.learning_rate,
        streams.derive(seed::SHUFFLE, &[u64::MAX]),
    )?;
    Ok(evaluate(classifier, &w, test)?.accuracy)
}

pub fn run_experiment(s: &Scenario) -> Result<ExperimentReport, HarnessError> {
    run_experiment_with(s, RunOptions::default())
}

enum Driver {
    Fixed(GlobalParams),
    Random,
    Ga {
        population: Vec<GlobalParams>,
        fitness: Vec<f64>,
        generation: u64,
    },
    FedGpo {
        controller: Box<Controller>,
        next: Option<Assignment>,
    },
}

/// Per-device states and the modal fleet state for one environment draw.
pub fn observe_fleet(
    s: &Scenario,
    fleet: &[DeviceProfile],
    env: &RoundEnvironment,
    partition: &Partition,
) -> Result<Observation, HarnessError> {
    let mut devices = BTreeMap::new();
    for d in fleet {
        let shard = partition
            .get(&d.id)
            .ok_or(HarnessError::MissingShard(d.id))?;
        let st = observe_state(
            &s.workload,
            env.interference_of(d.id)?,
            env.network_of(d.id)?,
            shard,
            s.data.n_classes,
        );
        devices.insert(d.id, st);
    }
    let all: Vec<StateVector> = devices.values().copied().collect();
    let global = StateVector::modal(&s.workload, &all)
        .ok_or(HarnessError::InvalidScenario("empty fleet".into()))?;
    Ok(Observation { global, devices })
}

/// Resolves the reward normalizer: the configured value, or the first-round
/// fleet energy of the Fixed(Best) grid-search winner.
pub fn resolve_energy_norm(s: &Scenario) -> Result<(f64, Option<GlobalParams>), HarnessError> {
    if let Some(v) = s.controller.energy_norm {
        return Ok((v, None));
    }
    let budget = s.strategy.budget_rounds.unwrap_or(s.max_rounds);
    let sweep = fixed_best_sweep(s, budget, s.strategy.lattice.as_deref())
        .map_err(HarnessError::from_baseline)?;
    let winner = sweep
        .points
        .iter()
        .find(|p| p.params == sweep.winner)
        .expect("winner is one of the points");
    Ok((winner.first_round_energy, Some(sweep.winner)))
}

pub fn run_experiment_with(
    s: &Scenario,
    opts: RunOptions,
) -> Result<ExperimentReport, HarnessError> {
    s.validate()?;
    let mut scenario = s.clone();
    let data = prepare_data(&scenario)?;
    scenario.convergence.target_accuracy = Some(data.target_accuracy);
    let fleet = scenario.fleet.build()?;
    let n = fleet.len();
    let main = SeedStreams::new(scenario.seed);
    let run = SeedStreams::new(opts.run_seed.unwrap_or(scenario.seed));

    let mut fixed_best = None;
    let needs_norm = matches!(
        scenario.strategy.name,
        StrategyName::FedGpo | StrategyName::Ga
    );
    if needs_norm && scenario.controller.energy_norm.is_none() {
        let (norm, _) = resolve_energy_norm(&scenario)?;
        scenario.controller.energy_norm = Some(norm);
    }

    let mut driver = match scenario.strategy.name {
        StrategyName::Fixed => Driver::Fixed(scenario.strategy.fixed_params().expect("validated")),
        StrategyName::FixedBest if opts.fixed_best.is_some() => {
            fixed_best = opts.fixed_best;
            Driver::Fixed(opts.fixed_best.expect("checked by the guard"))
        }
        StrategyName::FixedBest => {
            let budget = scenario
                .strategy
                .budget_rounds
                .unwrap_or(scenario.max_rounds);
            let sweep = fixed_best_sweep(&scenario, budget, scenario.strategy.lattice.as_deref())
                .map_err(HarnessError::from_baseline)?;
            fixed_best = Some(sweep.winner);
            Driver::Fixed(sweep.winner)
        }
        StrategyName::Random => Driver::Random,
        StrategyName::Ga => {
            let mut rng = run.rng(seed::BASELINE, &[0]);
            let population = (0..scenario.strategy.ga.population_size)
                .map(|_| random_adaptive(&mut rng, n))
                .collect();
            Driver::Ga {
                population,
                fitness: Vec::new(),
                generation: 0,
            }
        }
        StrategyName::FedGpo => {
            let tables = match opts.warm_tables.clone() {
                Some(t) => Some(t),
                None if scenario.strategy.pretrain_rounds > 0 => Some(pretrain(&scenario)?),
                None => None,
            };
            let controller = match tables {
                Some(t) => Controller::with_tables(scenario.controller.clone(), &fleet, run, t)?,
                None => Controller::with_tables(
                    scenario.controller.clone(),
                    &fleet,
                    run,
                    ControllerTables::fresh(&scenario.controller, &fleet, &main),
                )?,
            };
            Driver::FedGpo {
                controller: Box::new(controller),
                next: None,
            }
        }
    };

    let classifier = &data.classifier;
    let mut w: ModelParams = classifier.init_params(main.derive(seed::MODEL_INIT, &[]));
    let payload = payload_bits(w.dimension());
    let initial = evaluate(classifier, &w, &data.test)?;
    let mut acc_prev = initial.accuracy;
    let mut records: Vec<RoundRecord> = Vec::new();
    let mut overhead = Vec::new();
    let mut accs = Vec::new();
    let mut losses = Vec::new();
    let mut convergence_round = None;
    let mut table_converged_round = None;
    let lr = scenario.model.learning_rate;

    let mut env = scenario.variance.draw(1, &fleet, &run)?;
    for t in 1..=scenario.max_rounds {
        // Parameters for this round.
        let (k, per_device): (u32, BTreeMap<DeviceId, LocalAction>) = match &mut driver {
            Driver::Fixed(p) => (p.k, uniform(&fleet, p)),
            Driver::Random => {
                let p = random_adaptive(&mut run.rng(seed::BASELINE, &[u64::from(t)]), n);
                (p.k, uniform(&fleet, &p))
            }
            Driver::Ga {
                population,
                fitness,
                ..
            } => {
                let p = population[fitness.len()];
                (p.k, uniform(&fleet, &p))
            }
            Driver::FedGpo { controller, next } => {
                let a = match next.take() {
                    Some(a) => a,
                    None => {
                        let obs = observe_fleet(&scenario, &fleet, &env, &data.partition)?;
                        let start = Instant::now();
                        let (a, _) = controller.controller_round(u64::from(t), &obs, None)?;
                        overhead.push(start.elapsed().as_secs_f64());
                        a
                    }
                };
                (a.k.k, a.local)
            }
        };

        let mut rng = run.rng(seed::SELECT, &[u64::from(t)]);
        let mut participants: Vec<DeviceId> = sample(&mut rng, n, k as usize)
            .into_iter()
            .map(|i| fleet[i].id)
            .collect();
        participants.sort_unstable();

        let updates: Vec<(DeviceId, ModelParams, usize)> = participants
            .par_iter()
            .map(|&id| {
                let shard = data
                    .partition
                    .get(&id)
                    .ok_or(HarnessError::MissingShard(id))?;
                let a = per_device[&id];
                let seed = run.derive(seed::SHUFFLE, &[u64::from(t), u64::from(id.0)]);
                let w_k = client_update(classifier, &w, shard, a.b, a.e, lr, seed)?;
                Ok((id, w_k, shard.len()))
            })
            .collect::<Result<_, HarnessError>>()?;
        let work: Vec<ParticipantWork> = participants
            .iter()
            .map(|&id| ParticipantWork {
                id,
                n_samples: data.partition[&id].len(),
                batch_size: per_device[&id].b,
                epochs: per_device[&id].e,
            })
            .collect();
        let sim = simulate_round(&fleet, &scenario.workload, &work, &env, payload)?;
        let counts: BTreeMap<DeviceId, usize> =
            updates.iter().map(|(id, _, c)| (*id, *c)).collect();
        let models: BTreeMap<DeviceId, ModelParams> =
            updates.into_iter().map(|(id, m, _)| (id, m)).collect();
        w = aggregate(&models, &counts)?;
        let test_eval = evaluate(classifier, &w, &data.test)?;
        let train_eval = evaluate(classifier, &w, &data.train)?;
        let acc = test_eval.accuracy;

        let next_env = scenario.variance.draw(u64::from(t) + 1, &fleet, &run)?;
        let mut rewards: BTreeMap<DeviceId, f64> = BTreeMap::new();
        let mut server_reward = None;
        let mut fitness_value = None;
        let mut q_delta = None;
        match &mut driver {
            Driver::FedGpo { controller, next } => {
                let obs = observe_fleet(&scenario, &fleet, &next_env, &data.partition)?;
                let fb = Feedback {
                    accuracy: acc,
                    accuracy_prev: acc_prev,
                    e_global: sim.e_global,
                    e_local: sim.energy.iter().map(|(&id, e)| (id, e.e_local)).collect(),
                    participants: participants.iter().copied().collect::<BTreeSet<_>>(),
                };
                if let Some(eps) = scenario.strategy.epsilon_after_convergence {
                    if controller.monitor().converged_at().is_some() {
                        controller.set_epsilon(eps);
                    }
                }
                let start = Instant::now();
                let (a, report) = controller.controller_round(u64::from(t) + 1, &obs, Some(&fb))?;
                overhead.push(start.elapsed().as_secs_f64());
                if let Some(r) = report {
                    rewards = r.rewards;
                    server_reward = Some(r.server_reward);
                    q_delta = Some(r.max_delta);
                }
                if table_converged_round.is_none() {
                    table_converged_round = controller.monitor().converged_at().map(|r| r as u32);
                }
                *next = Some(a);
            }
            Driver::Ga {
                population,
                fitness,
                generation,
            } => {
                let f = compute_reward(
                    sim.e_global,
                    sim.e_global / n as f64,
                    acc,
                    acc_prev,
                    &scenario.controller,
                );
                fitness.push(f);
                fitness_value = Some(f);
                if fitness.len() == population.len() {
                    *generation += 1;
                    let mut rng = run.rng(seed::BASELINE, &[*generation, 1]);
                    *population = ga_adaptive(
                        population,
                        fitness,
                        &scenario.strategy.ga,
                        n.min(20) as u32,
                        &mut rng,
                    )
                    .map_err(HarnessError::from_baseline)?;
                    fitness.clear();
                }
            }
            _ => {}
        }

        let participant_set: BTreeSet<DeviceId> = participants.iter().copied().collect();
        let devices = fleet
            .iter()
            .map(|d| {
                let timing = &sim.timings[&d.id];
                let part = participant_set.contains(&d.id);
                DeviceRound {
                    device: d.id,
                    category: d.category,
                    participant: part,
                    b: part.then(|| per_device[&d.id].b),
                    e: part.then(|| per_device[&d.id].e),
                    t_busy: timing.total_busy(),
                    t_tx: timing.t_tx,
                    t_idle: timing.t_idle,
                    energy: sim.energy[&d.id],
                    reward: rewards.get(&d.id).copied(),
                }
            })
            .collect();
        records.push(RoundRecord {
            round: t,
            k,
            participants,
            t_round: sim.t_round,
            e_global: sim.e_global,
            accuracy: acc,
            train_loss: train_eval.loss,
            test_loss: test_eval.loss,
            devices,
            server_reward,
            fitness: fitness_value,
            q_delta,
        });
        accs.push(acc);
        losses.push(train_eval.loss);
        acc_prev = acc;
        env = next_env;

        if convergence_round.is_none() {
            let c = &scenario.convergence;
            convergence_round = detect_convergence(
                &accs,
                &losses,
                data.target_accuracy,
                c.delta,
                c.window,
                c.loss_tol,
            )
            .map(|r| r as u32);
        }
        if convergence_round.is_some() && scenario.convergence.stop_at_convergence {
            break;
        }
    }

    let total_energy: f64 = records.iter().map(|r| r.e_global).sum();
    let (energy_to_conv, time_to_conv) = match convergence_round {
        Some(c) => {
            let upto = &records[..c as usize];
            (
                Some(upto.iter().map(|r| r.e_global).sum::<f64>()),
                Some(upto.iter().map(|r| r.t_round).sum::<f64>()),
            )
        }
        None => (None, None),
    };
    let tables = match driver {
        Driver::FedGpo { controller, .. } => Some(controller.into_tables()),
        _ => None,
    };
    Ok(ExperimentReport {
        scenario,
        target_accuracy: data.target_accuracy,
        initial_accuracy: initial.accuracy,
        fixed_best,
        final_accuracy: records.last().map_or(initial.accuracy, |r| r.accuracy),
        rounds: records,
        convergence_round,
        convergence_time: time_to_conv,
        total_energy_to_convergence: energy_to_conv,
        total_energy,
        ppw: energy_to_conv.filter(|&e| e > 0.0).map(|e| 1.0 / e),
        table_converged_round,
        qtable_bytes: tables.as_ref().map(|t| t.to_text().len()),
        controller_overhead: overhead,
        tables,
    })
}

/// Runs every strategy on the same scenario. The grid search and the
/// reward normalizer are resolved once and shared by all runs.
pub fn run_strategies(
    s: &Scenario,
    strategies: &[StrategySpec],
) -> Result<BTreeMap<String, ExperimentReport>, HarnessError> {
    let mut base = s.clone();
    for st in strategies {
        Scenario {
            strategy: st.clone(),
            ..base.clone()
        }
        .validate()?;
    }
    if base.convergence.target_accuracy.is_none() {
        base.convergence.target_accuracy = Some(prepare_data(&base)?.target_accuracy);
    }
    let needs_sweep = strategies.iter().any(|st| {
        st.name == StrategyName::FixedBest
            || (matches!(st.name, StrategyName::FedGpo | StrategyName::Ga)
                && base.controller.energy_norm.is_none())
    });
    let mut winner = None;
    if needs_sweep {
        // Sweep settings come from the fixed-best entry when there is one.
        let spec = strategies
            .iter()
            .find(|st| st.name == StrategyName::FixedBest)
            .unwrap_or(&base.strategy);
        let budget = spec.budget_rounds.unwrap_or(base.max_rounds);
        let sweep = fixed_best_sweep(&base, budget, spec.lattice.as_deref())
            .map_err(HarnessError::from_baseline)?;
        let best = sweep
            .points
            .iter()
            .find(|p| p.params == sweep.winner)
            .expect("winner is one of the points");
        if base.controller.energy_norm.is_none() {
            base.controller.energy_norm = Some(best.first_round_energy);
        }
        winner = Some(sweep.winner);
    }
    strategies
        .par_iter()
        .map(|st| {
            let mut sc = base.clone();
            sc.strategy = st.clone();
            let opts = RunOptions {
                fixed_best: winner,
                ..Default::default()
            };
            Ok((st.name.label().to_string(), run_experiment_with(&sc, opts)?))
        })
        .collect()
}

fn uniform(fleet: &[DeviceProfile], p: &GlobalParams) -> BTreeMap<DeviceId, LocalAction> {
    fleet
        .iter()
        .map(|d| (d.id, LocalAction { b: p.b, e: p.e }))
        .collect()
}

/// Trains tables for `pretrain_rounds` on an independent run seed.
fn pretrain(s: &Scenario) -> Result<ControllerTables, HarnessError> {
    let mut warm = s.clone();
    warm.max_rounds = s.strategy.pretrain_rounds;
    warm.strategy.pretrain_rounds = 0;
    warm.convergence.stop_at_convergence = false;
    let opts = RunOptions {
        run_seed: Some(SeedStreams::new(s.seed).derive("pretrain", &[])),
        ..Default::default()
    };
    let report = run_experiment_with(&warm, opts)?;
    Ok(report.tables.expect("fedgpo run keeps its tables"))
}
