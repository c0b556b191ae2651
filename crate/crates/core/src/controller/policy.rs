use rand::Rng;
use serde::{Deserialize, Serialize};

use super::qtable::{Action, GlobalAction, LocalAction, QTable};
use super::state::StateVector;
use super::ControllerError;

/// Learning and reward constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    /// Learning rate.
    pub gamma: f64,
    /// Discount factor.
    pub mu: f64,
    /// Exploration probability.
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Joules that map to 1.0 in the reward. `None` means "measure it": the
    /// harness fills in the Fixed(Best) fleet energy of round 1.
    pub energy_norm: Option<f64>,
    /// One table per device instead of one per category.
    pub per_device_tables: bool,
    /// Constant initial Q value; `None` draws uniform `[0, 1)` values.
    pub init_value: Option<f64>,
    pub converge_tol: f64,
    pub converge_window: usize,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            mu: 0.1,
            epsilon: 0.1,
            alpha: 1.0,
            beta: 10.0,
            energy_norm: None,
            per_device_tables: false,
            init_value: None,
            converge_tol: 1e-3,
            converge_window: 5,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.gamma) {
            return Err(ControllerError::InvalidConfig(format!(
                "gamma must lie in (0, 1), got {}",
                self.gamma
            )));
        }
        if !open(self.mu) {
            return Err(ControllerError::InvalidConfig(format!(
                "mu must lie in (0, 1), got {}",
                self.mu
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(ControllerError::InvalidConfig(format!(
                "epsilon must lie in [0, 1], got {}",
                self.epsilon
            )));
        }
        if !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return Err(ControllerError::InvalidConfig(
                "alpha and beta must be positive".into(),
            ));
        }
        if let Some(n) = self.energy_norm {
            if !(n > 0.0) || !n.is_finite() {
                return Err(ControllerError::InvalidConfig(format!(
                    "energy_norm must be positive, got {n}"
                )));
            }
        }
        if let Some(v) = self.init_value {
            if !v.is_finite() {
                return Err(ControllerError::InvalidConfig(
                    "init_value must be finite".into(),
                ));
            }
        }
        if !(self.converge_tol > 0.0) || self.converge_window == 0 {
            return Err(ControllerError::InvalidConfig(
                "converge_tol must be positive and converge_window at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn energy_norm_or_unit(&self) -> f64 {
        self.energy_norm.unwrap_or(1.0)
    }
}

/// Epsilon-greedy over any action space: one uniform draw decides whether to
/// explore, a second picks the random action.
pub fn select_action<A: Action, R: Rng + ?Sized>(
    table: &QTable<A>,
    s: &StateVector,
    epsilon: f64,
    rng: &mut R,
) -> A {
    let explore = rng.random::<f64>() < epsilon;
    if explore {
        A::from_index(rng.random_range(0..A::COUNT)).expect("index in range")
    } else {
        table.argmax(s)
    }
}

pub fn select_local_action<R: Rng + ?Sized>(
    table: &QTable<LocalAction>,
    s: &StateVector,
    epsilon: f64,
    rng: &mut R,
) -> LocalAction {
    select_action(table, s, epsilon, rng)
}

pub fn select_global_action<R: Rng + ?Sized>(
    table: &QTable<GlobalAction>,
    s_global: &StateVector,
    epsilon: f64,
    rng: &mut R,
) -> GlobalAction {
    select_action(table, s_global, epsilon, rng)
}

/// Degradation branch when accuracy did not improve, otherwise the energy
/// and accuracy trade-off with normalized energies.
pub fn compute_reward(
    e_global: f64,
    e_local: f64,
    acc: f64,
    acc_prev: f64,
    cfg: &ControllerConfig,
) -> f64 {
    if acc - acc_prev <= 0.0 {
        return acc - 100.0;
    }
    let norm = cfg.energy_norm_or_unit();
    -(e_global / norm) - (e_local / norm) + cfg.alpha * acc + cfg.beta * (acc - acc_prev)
}

/// `Q(S,A) += gamma * (R + mu * max_A' Q(S',A') - Q(S,A))`. Returns the new value.
pub fn q_update<A: Action>(
    table: &mut QTable<A>,
    s: &StateVector,
    a: &A,
    r: f64,
    s_next: &StateVector,
    cfg: &ControllerConfig,
) -> Result<f64, ControllerError> {
    let q = table.get(s, a);
    let target = r + cfg.mu * table.max_value(s_next);
    let updated = q + cfg.gamma * (target - q);
    table.set(s, a, updated)?;
    Ok(updated)
}
