//! End-to-end properties of seeded experiment runs.

use std::collections::BTreeMap;

use flsim_core::config::ConfigDocument;
use flsim_core::fedcore::{generate_blobs, partition_dirichlet, SyntheticSpec};
use flsim_core::harness::{
    compare, read_report_jsonl, report_to_jsonl, run_experiment, ExperimentReport, HarnessError,
    Scenario, StrategyName, StrategySpec,
};
use flsim_core::GlobalParams;
use proptest::prelude::*;

/// Five devices, no variance, IID shards, fixed tuple, no early stop.
fn tiny(p: GlobalParams, rounds: u32) -> Scenario {
    let mut s = Scenario {
        seed: 21,
        max_rounds: rounds,
        ..Default::default()
    };
    s.fleet.h = 1;
    s.fleet.m = 2;
    s.fleet.l = 2;
    s.data.n_samples = 400;
    s.convergence.stop_at_convergence = false;
    s.strategy = StrategySpec::fixed(p);
    s
}

#[test]
fn minimal_run_has_one_record() {
    let mut s = tiny(GlobalParams::new(1, 1, 1), 1);
    s.fleet.h = 0;
    s.fleet.m = 0;
    s.fleet.l = 1;
    s.data.n_samples = 50;
    let r = run_experiment(&s).unwrap();
    assert_eq!(r.rounds.len(), 1);
    assert_eq!(r.rounds[0].k, 1);
    assert_eq!(r.rounds[0].participants.len(), 1);
}

/// Frozen from one run; any change to data generation, partitioning,
/// shuffling or the update rule shows up here first.
#[test]
fn golden_accuracy_sequence() {
    let r = run_experiment(&tiny(GlobalParams::new(8, 1, 5), 8)).unwrap();
    let acc: Vec<f64> = r.rounds.iter().map(|x| x.accuracy).collect();
    assert_eq!(acc, [88.75, 90.0, 91.25, 93.75, 93.75, 95.0, 95.0, 95.0]);
    let loss = [
        1.8727182600895085,
        1.55333598705607,
        1.3185320367143665,
        1.1457006606053197,
        1.0149080953520433,
        0.9133497242775819,
        0.8327201784827822,
        0.7672318978297954,
    ];
    for (x, want) in r.rounds.iter().zip(loss) {
        approx::assert_relative_eq!(x.test_loss, want, max_relative = 1e-9);
    }
    assert_eq!(r.target_accuracy, 97.5);
}

/// Frozen from one run: strongly skewed shards at concentration 0.1.
#[test]
fn golden_dirichlet_skew() {
    let spec = SyntheticSpec {
        n_classes: 10,
        n_samples: 10_000,
        feature_dim: 16,
        separation: 1.0,
    };
    let data = generate_blobs(&spec, 7).unwrap();
    let part = partition_dirichlet(&data, 200, 0.1, 7).unwrap();
    let mut held: Vec<usize> = part.values().map(|c| c.classes_present()).collect();
    held.sort_unstable();
    assert_eq!(held[held.len() / 2], 3);
}

fn assert_ledger_balances(r: &ExperimentReport) {
    for rec in &r.rounds {
        let sum: f64 = rec
            .devices
            .iter()
            .map(|d| d.energy.e_comp + d.energy.e_comm + d.energy.e_idle)
            .sum();
        assert_eq!(sum, rec.e_global, "round {}", rec.round);
        for d in &rec.devices {
            assert_eq!(
                d.energy.e_local,
                d.energy.e_comp + d.energy.e_comm + d.energy.e_idle
            );
        }
        let slowest = rec
            .devices
            .iter()
            .filter(|d| d.participant)
            .map(|d| d.t_busy + d.t_tx)
            .fold(0.0, f64::max);
        assert_eq!(slowest, rec.t_round, "round {}", rec.round);
    }
}

#[test]
fn echoed_config_reproduces_the_report() {
    let mut s = tiny(GlobalParams::new(4, 5, 1), 4);
    s.fleet.l = 17;
    s.data.n_samples = 800;
    s.strategy = StrategySpec::named(StrategyName::Random);
    let r = run_experiment(&s).unwrap();
    let echo = ConfigDocument::from_scenario(&r.scenario).to_toml();
    let again = run_experiment(
        &ConfigDocument::from_toml(&echo)
            .unwrap()
            .validated_scenario()
            .unwrap(),
    );
    assert_eq!(report_to_jsonl(&again.unwrap()), report_to_jsonl(&r));
}

#[test]
fn jsonl_round_trip() {
    let r = run_experiment(&tiny(GlobalParams::new(16, 1, 5), 3)).unwrap();
    let back = read_report_jsonl(&report_to_jsonl(&r)).unwrap();
    assert_eq!(back.controller_overhead, Vec::<f64>::new());
    let r = ExperimentReport {
        controller_overhead: Vec::new(),
        tables: None,
        ..r
    };
    assert_eq!(back, r);
}

#[test]
fn self_comparison_is_all_ones() {
    let mut s = tiny(GlobalParams::new(8, 5, 5), 20);
    s.convergence.stop_at_convergence = true;
    s.convergence.target_accuracy = Some(85.0);
    s.convergence.loss_tol = 0.2;
    let r = run_experiment(&s).unwrap();
    assert!(r.convergence_round.is_some());
    let reports = BTreeMap::from([("fixed".to_string(), r)]);
    let table = compare(&reports, "fixed").unwrap();
    let row = table.row("fixed").unwrap();
    assert_eq!(
        (row.ppw_ratio, row.speedup, row.accuracy_ratio),
        (Some(1.0), Some(1.0), 1.0)
    );
    assert!(matches!(
        compare(&reports, "fedgpo"),
        Err(HarnessError::ScenarioMismatch(_))
    ));
}

fn lattice_point() -> impl Strategy<Value = GlobalParams> {
    (
        prop::sample::select(vec![1u32, 2, 4, 8, 16, 32]),
        prop::sample::select(vec![1u32, 5]),
        Just(1u32).prop_union(Just(5)),
    )
        .prop_map(|(b, e, k)| GlobalParams::new(b, e, k))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fixed_runs_keep_the_ledger(p in lattice_point(), seed in 0u64..1000) {
        let mut s = tiny(p, 2);
        s.seed = seed;
        s.variance.network.stddev_mbps = 20.0;
        let r = run_experiment(&s).unwrap();
        assert_ledger_balances(&r);
        for rec in &r.rounds {
            prop_assert_eq!(rec.participants.len(), p.k as usize);
            prop_assert!(rec.actions().all(|(_, b, e)| b == p.b && e == p.e));
        }
    }

    #[test]
    fn adaptive_runs_keep_the_ledger(seed in 0u64..1000, ga in any::<bool>()) {
        let mut s = Scenario::desk();
        s.seed = seed;
        s.max_rounds = 3;
        s.data.n_samples = 800;
        s.controller.energy_norm = Some(0.25);
        s.strategy = StrategySpec::named(if ga { StrategyName::Ga } else { StrategyName::FedGpo });
        let r = run_experiment(&s).unwrap();
        assert_ledger_balances(&r);
        for rec in &r.rounds {
            prop_assert_eq!(rec.participants.len(), rec.k as usize);
        }
    }
}
