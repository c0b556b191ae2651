mod support;

use flsim_core::controller::ControllerConfig;
use support::{equation_suite, fedavg_gap, ToyMdp};

#[test]
fn hand_computed_equation_examples() {
    let failed = equation_suite();
    assert!(failed.is_empty(), "failed: {failed:?}");
}

#[test]
fn toy_oracle_policy_is_nontrivial() {
    let toy = ToyMdp::standard();
    let q = toy.optimal_q(0.1);
    // Greedy on immediate reward would stay in state 0.
    assert!(toy.reward[0][0] > toy.reward[0][1]);
    assert_eq!(toy.optimal_policy(0.1), [1, 0, 1]);
    assert!(q[0][1] - q[0][0] > 1.0);
}

#[test]
fn q_learning_recovers_toy_policy_for_ten_seeds() {
    let toy = ToyMdp::standard();
    let cfg = ControllerConfig::default();
    let want = toy.optimal_policy(cfg.mu);
    for seed in 0..10 {
        assert_eq!(toy.learn(&cfg, seed, 500), want, "seed {seed}");
    }
}

#[test]
fn fedavg_matches_centralized_full_batch() {
    for seed in 0..3 {
        let gap = fedavg_gap(8, 20, seed);
        assert!(gap < 1e-6, "seed {seed}: gap {gap}");
    }
}
