//! Comparison strategies that assign one fleet-wide `(B, E, K)` per round:
//! a grid search for the best fixed tuple, uniform random draws, and a
//! small genetic algorithm.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{
    enumerate_actions, GlobalParams, BATCH_SIZES, EPOCH_COUNTS, PARTICIPANT_COUNTS,
};
use crate::harness::{
    prepare_data, run_experiment_with, HarnessError, RunOptions, Scenario, StrategyName,
};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("no lattice point reached convergence within {budget} rounds")]
    NoConvergingPoint { budget: u32 },
    #[error("invalid GA config: {0}")]
    InvalidGa(String),
    #[error("population has {found} individuals, config expects {expected}")]
    PopulationSize { expected: usize, found: usize },
    #[error("{0} fitness values for {1} individuals")]
    FitnessCount(usize, usize),
    #[error("grid search needs budget_rounds >= 1")]
    ZeroBudget,
    #[error("empty lattice")]
    EmptyLattice,
    #[error(transparent)]
    Harness(#[from] Box<HarnessError>),
    #[error("{0}")]
    Sink(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GAConfig {
    pub population_size: usize,
    pub mutation_rate: f64,
    pub crossover_rate: f64,
    pub elitism: usize,
}

impl Default for GAConfig {
    fn default() -> Self {
        Self {
            population_size: 10,
            mutation_rate: 0.2,
            crossover_rate: 0.7,
            elitism: 1,
        }
    }
}

impl GAConfig {
    /// `elitism == population_size` is accepted; it freezes the population.
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.population_size < 2 {
            return Err(BaselineError::InvalidGa(
                "population_size must be at least 2".into(),
            ));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.mutation_rate) || !unit(self.crossover_rate) {
            return Err(BaselineError::InvalidGa("rates must lie in [0, 1]".into()));
        }
        if self.elitism > self.population_size {
            return Err(BaselineError::InvalidGa(
                "elitism cannot exceed population_size".into(),
            ));
        }
        Ok(())
    }
}

/// Uniform lattice draw with `K <= fleet_size`.
pub fn random_adaptive<R: Rng + ?Sized>(rng: &mut R, fleet_size: usize) -> GlobalParams {
    let ks: Vec<u32> = PARTICIPANT_COUNTS
        .iter()
        .copied()
        .filter(|&k| k as usize <= fleet_size)
        .collect();
    let b = BATCH_SIZES[rng.random_range(0..BATCH_SIZES.len())];
    let e = EPOCH_COUNTS[rng.random_range(0..EPOCH_COUNTS.len())];
    let k = ks[rng.random_range(0..ks.len())];
    GlobalParams::new(b, e, k)
}

fn gene(p: &GlobalParams, i: usize) -> u32 {
    [p.b, p.e, p.k][i]
}

fn lattice_of(i: usize) -> &'static [u32] {
    match i {
        0 => &BATCH_SIZES,
        1 => &EPOCH_COUNTS,
        _ => &PARTICIPANT_COUNTS,
    }
}

fn from_genes(g: [u32; 3]) -> GlobalParams {
    GlobalParams::new(g[0], g[1], g[2])
}

/// Moves one gene to a neighbouring lattice value; edges can only move inward.
fn mutate_gene<R: Rng + ?Sized>(value: u32, lattice: &[u32], rng: &mut R) -> u32 {
    let i = lattice.iter().position(|&v| v == value).unwrap_or(0);
    let up = if i == 0 {
        true
    } else if i + 1 == lattice.len() {
        false
    } else {
        rng.random::<bool>()
    };
    if up {
        lattice[i + 1]
    } else {
        lattice[i - 1]
    }
}

fn tournament<'a, R: Rng + ?Sized>(
    pop: &'a [GlobalParams],
    fit: &[f64],
    rng: &mut R,
) -> &'a GlobalParams {
    let a = rng.random_range(0..pop.len());
    let b = rng.random_range(0..pop.len());
    if fit[b] > fit[a] {
        &pop[b]
    } else {
        &pop[a]
    }
}

/// Next generation: the `elitism` fittest carried over in their original
/// order, then tournament-selected offspring with single-point crossover and
/// per-gene adjacent mutation. `K` genes are capped at `max_k`.
pub fn ga_adaptive<R: Rng + ?Sized>(
    population: &[GlobalParams],
    fitnesses: &[f64],
    cfg: &GAConfig,
    max_k: u32,
    rng: &mut R,
) -> Result<Vec<GlobalParams>, BaselineError> {
    cfg.validate()?;
    if population.len() != cfg.population_size {
        return Err(BaselineError::PopulationSize {
            expected: cfg.population_size,
            found: population.len(),
        });
    }
    if fitnesses.len() != population.len() {
        return Err(BaselineError::FitnessCount(
            fitnesses.len(),
            population.len(),
        ));
    }
    let mut order: Vec<usize> = (0..population.len()).collect();
    order.sort_by(|&a, &b| fitnesses[b].total_cmp(&fitnesses[a]).then(a.cmp(&b)));
    let mut elite: Vec<usize> = order[..cfg.elitism].to_vec();
    elite.sort_unstable();
    let mut next: Vec<GlobalParams> = elite.iter().map(|&i| population[i]).collect();

    let k_lattice: Vec<u32> = PARTICIPANT_COUNTS
        .iter()
        .copied()
        .filter(|&k| k <= max_k)
        .collect();
    while next.len() < cfg.population_size {
        let p1 = *tournament(population, fitnesses, rng);
        let p2 = *tournament(population, fitnesses, rng);
        let mut genes = [p1.b, p1.e, p1.k];
        if rng.random::<f64>() < cfg.crossover_rate {
            let cut = rng.random_range(1..3);
            for (i, g) in genes.iter_mut().enumerate().skip(cut) {
                *g = gene(&p2, i);
            }
        }
        for (i, g) in genes.iter_mut().enumerate() {
            if rng.random::<f64>() < cfg.mutation_rate {
                let lattice = if i == 2 {
                    &k_lattice[..]
                } else {
                    lattice_of(i)
                };
                *g = mutate_gene(*g, lattice, rng);
            }
        }
        next.push(from_genes(genes));
    }
    Ok(next)
}

/// Outcome of one grid-search point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub params: GlobalParams,
    pub convergence_round: Option<u32>,
    pub total_energy: f64,
    pub ppw: Option<f64>,
    pub final_accuracy: f64,
    /// Fleet energy of the first round.
    pub first_round_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<PointSummary>,
    pub winner: GlobalParams,
}

/// Per-point child seed: keyed by the tuple, not by its position, so the
/// outcome does not depend on evaluation order.
pub fn point_seed(master: u64, p: &GlobalParams) -> u64 {
    crate::seed::SeedStreams::new(master).derive(
        crate::seed::BASELINE,
        &[u64::from(p.b), u64::from(p.e), u64::from(p.k)],
    )
}

/// Runs `params` as a fixed strategy for at most `budget_rounds` rounds.
pub fn evaluate_point(
    scenario: &Scenario,
    params: GlobalParams,
    budget_rounds: u32,
) -> Result<PointSummary, BaselineError> {
    let mut s = scenario.clone();
    s.strategy.name = StrategyName::Fixed;
    s.strategy.b = Some(params.b);
    s.strategy.e = Some(params.e);
    s.strategy.k = Some(params.k);
    s.max_rounds = budget_rounds;
    s.convergence.stop_at_convergence = true;
    let opts = RunOptions {
        run_seed: Some(point_seed(scenario.seed, &params)),
        ..Default::default()
    };
    let report = run_experiment_with(&s, opts).map_err(Box::new)?;
    Ok(PointSummary {
        params,
        convergence_round: report.convergence_round,
        total_energy: report
            .total_energy_to_convergence
            .unwrap_or(report.total_energy),
        ppw: report.ppw,
        final_accuracy: report.final_accuracy,
        first_round_energy: report.rounds.first().map_or(0.0, |r| r.e_global),
    })
}

/// The PPW-maximizing converging point; ties go to the earlier tuple in
/// lattice order.
pub fn pick_winner(points: &[PointSummary], budget: u32) -> Result<GlobalParams, BaselineError> {
    let mut sorted: Vec<&PointSummary> = points.iter().collect();
    sorted.sort_by_key(|p| (p.params.b, p.params.e, p.params.k));
    let mut best: Option<(&PointSummary, f64)> = None;
    for p in sorted {
        if let Some(ppw) = p.ppw {
            if best.is_none_or(|(_, b)| ppw > b) {
                best = Some((p, ppw));
            }
        }
    }
    best.map(|(p, _)| p.params)
        .ok_or(BaselineError::NoConvergingPoint { budget })
}

/// Grid search over `lattice` (all 150 points when `None`).
pub fn fixed_best_sweep(
    scenario: &Scenario,
    budget_rounds: u32,
    lattice: Option<&[GlobalParams]>,
) -> Result<SweepResult, BaselineError> {
    fixed_best_sweep_with(scenario, budget_rounds, lattice, &BTreeMap::new(), &|_| {
        Ok(())
    })
}

/// Grid search that reuses `done` summaries and reports each newly
/// evaluated point to `on_point` as soon as it finishes.
pub fn fixed_best_sweep_with(
    scenario: &Scenario,
    budget_rounds: u32,
    lattice: Option<&[GlobalParams]>,
    done: &BTreeMap<GlobalParams, PointSummary>,
    on_point: &(dyn Fn(&PointSummary) -> Result<(), BaselineError> + Sync),
) -> Result<SweepResult, BaselineError> {
    if budget_rounds == 0 {
        return Err(BaselineError::ZeroBudget);
    }
    let n = scenario.fleet.size();
    let points: Vec<GlobalParams> = match lattice {
        Some(l) => l.to_vec(),
        None => enumerate_actions()
            .into_iter()
            .filter(|p| p.k as usize <= n)
            .collect(),
    };
    if points.is_empty() {
        return Err(BaselineError::EmptyLattice);
    }
    let mut scenario = scenario.clone();
    if scenario.convergence.target_accuracy.is_none()
        && points.iter().any(|p| !done.contains_key(p))
    {
        let data = prepare_data(&scenario).map_err(Box::new)?;
        scenario.convergence.target_accuracy = Some(data.target_accuracy);
    }
    let summaries = points
        .par_iter()
        .map(|&p| match done.get(&p) {
            Some(d) => Ok::<_, BaselineError>(d.clone()),
            None => {
                let d = evaluate_point(&scenario, p, budget_rounds)?;
                on_point(&d)?;
                Ok(d)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    let winner = pick_winner(&summaries, budget_rounds)?;
    Ok(SweepResult {
        points: summaries,
        winner,
    })
}

pub fn fixed_best(scenario: &Scenario, budget_rounds: u32) -> Result<GlobalParams, BaselineError> {
    fixed_best_sweep(
        scenario,
        budget_rounds,
        scenario.strategy.lattice.as_deref(),
    )
    .map(|r| r.winner)
}

/// Tallies how often each tuple occurs; handy for distribution checks.
pub fn histogram(draws: &[GlobalParams]) -> BTreeMap<GlobalParams, usize> {
    let mut h = BTreeMap::new();
    for d in draws {
        *h.entry(*d).or_insert(0) += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_draws_are_uniform_and_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let draws: Vec<GlobalParams> = (0..10_000)
            .map(|_| random_adaptive(&mut rng, 200))
            .collect();
        for d in &draws {
            assert!(validate_params(*d, 200).is_ok());
        }
        let h = histogram(&draws);
        assert_eq!(h.len(), 150);
        for c in h.values() {
            assert!((*c as f64 / 10_000.0 - 1.0 / 150.0).abs() <= 0.005);
        }
        let mut again = ChaCha8Rng::seed_from_u64(31);
        let replay: Vec<GlobalParams> = (0..10_000)
            .map(|_| random_adaptive(&mut again, 200))
            .collect();
        assert_eq!(draws, replay);
    }

    #[test]
    fn small_fleet_caps_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            assert!(random_adaptive(&mut rng, 7).k <= 5);
        }
    }

    fn sample_pop(rng: &mut ChaCha8Rng, n: usize) -> Vec<GlobalParams> {
        (0..n).map(|_| random_adaptive(rng, 200)).collect()
    }

    #[test]
    fn identity_configuration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pop = sample_pop(&mut rng, 6);
        let fit: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let cfg = GAConfig {
            population_size: 6,
            mutation_rate: 0.0,
            crossover_rate: 0.0,
            elitism: 6,
        };
        assert_eq!(ga_adaptive(&pop, &fit, &cfg, 20, &mut rng).unwrap(), pop);
    }

    #[test]
    fn clones_stay_clones_under_crossover() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pop = vec![GlobalParams::new(8, 10, 20); 10];
        let cfg = GAConfig {
            mutation_rate: 0.0,
            crossover_rate: 1.0,
            ..Default::default()
        };
        let fit = vec![1.0; 10];
        assert_eq!(ga_adaptive(&pop, &fit, &cfg, 20, &mut rng).unwrap(), pop);
    }

    #[test]
    fn elitism_keeps_best_fitness_nondecreasing() {
        // Frozen environment stand-in: fitness is minus a fixed energy
        // model of the tuple.
        let fitness = |p: &GlobalParams| -((p.e * p.k) as f64) - 0.01 * p.b as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = GAConfig::default();
        let mut pop = sample_pop(&mut rng, cfg.population_size);
        let mut best = f64::NEG_INFINITY;
        for _ in 0..40 {
            let fit: Vec<f64> = pop.iter().map(fitness).collect();
            let gen_best = fit.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!(gen_best >= best);
            best = gen_best;
            pop = ga_adaptive(&pop, &fit, &cfg, 20, &mut rng).unwrap();
            for p in &pop {
                assert!(validate_params(*p, 200).is_ok());
            }
        }
    }

    #[test]
    fn ga_guards() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pop = sample_pop(&mut rng, 3);
        assert!(ga_adaptive(&pop, &[1.0; 3], &GAConfig::default(), 20, &mut rng).is_err());
        let bad = GAConfig {
            population_size: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let over = GAConfig {
            elitism: 11,
            ..Default::default()
        };
        assert!(over.validate().is_err());
    }

    #[test]
    fn mutation_moves_to_neighbours() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(mutate_gene(1, &BATCH_SIZES, &mut rng), 2);
            assert_eq!(mutate_gene(32, &BATCH_SIZES, &mut rng), 16);
            let m = mutate_gene(10, &EPOCH_COUNTS, &mut rng);
            assert!(m == 5 || m == 15);
        }
    }

    #[test]
    fn winner_prefers_dominant_point() {
        let a = PointSummary {
            params: GlobalParams::new(1, 1, 1),
            convergence_round: Some(10),
            total_energy: 100.0,
            ppw: Some(0.01),
            final_accuracy: 90.0,
            first_round_energy: 10.0,
        };
        let b = PointSummary {
            params: GlobalParams::new(2, 1, 1),
            convergence_round: Some(5),
            total_energy: 50.0,
            ppw: Some(0.02),
            ..a.clone()
        };
        let none = PointSummary {
            params: GlobalParams::new(4, 1, 1),
            convergence_round: None,
            ppw: None,
            ..a.clone()
        };
        assert_eq!(
            pick_winner(&[a.clone(), b.clone(), none.clone()], 10).unwrap(),
            b.params
        );
        assert_eq!(pick_winner(&[b.clone(), a.clone()], 10).unwrap(), b.params);
        assert_eq!(pick_winner(std::slice::from_ref(&a), 10).unwrap(), a.params);
        assert!(matches!(
            pick_winner(&[none], 10),
            Err(BaselineError::NoConvergingPoint { .. })
        ));
        let tie = PointSummary {
            params: GlobalParams::new(1, 5, 1),
            ..b.clone()
        };
        assert_eq!(
            pick_winner(&[tie.clone(), b.clone()], 10).unwrap(),
            tie.params
        );
    }
}
