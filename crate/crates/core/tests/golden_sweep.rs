//! Frozen result of the full 150-point grid search on the desk scenario,
//! the anchor every desk comparison is normalized to. Takes about a minute
//! in release mode, so it only runs on request:
//! `cargo test --release -p flsim-core --test golden_sweep -- --ignored`.

use flsim_core::baselines::fixed_best_sweep;
use flsim_core::harness::Scenario;
use flsim_core::GlobalParams;

#[test]
#[ignore = "full desk sweep; run with --ignored"]
fn desk_sweep_anchor() {
    let mut s = Scenario::desk();
    s.max_rounds = 100;
    let sweep = fixed_best_sweep(&s, 100, None).unwrap();
    let best = sweep
        .points
        .iter()
        .find(|p| p.params == sweep.winner)
        .unwrap();
    assert_eq!(sweep.points.len(), 150);
    assert_eq!(sweep.winner, GlobalParams::new(4, 1, 1));
    assert_eq!(best.convergence_round, Some(40));
    approx::assert_relative_eq!(best.total_energy, 12.971129785352494, max_relative = 1e-9);
    approx::assert_relative_eq!(
        best.first_round_energy,
        0.226684482658756,
        max_relative = 1e-9
    );
}
