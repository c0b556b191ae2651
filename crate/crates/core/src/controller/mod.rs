//! Q-learning controller: state binning, epsilon-greedy choice of `(B, E)`
//! per device and `K` per round, reward shaping and table updates.
//!
//! A server-level table picks `K` from a fleet-aggregate state; per-category
//! tables (or per-device tables when configured) pick `(B, E)`.

mod policy;
mod qtable;
mod state;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{DeviceCategory, DeviceId, DeviceProfile};
use crate::seed::{self, SeedStreams};

pub use policy::{
    compute_reward, q_update, select_action, select_global_action, select_local_action,
    ControllerConfig,
};
pub use qtable::{Action, ActionKind, GlobalAction, InitMode, LocalAction, QTable, TableScope};
pub use state::{
    observe_state, ConvBin, DataBin, FcBin, NetBin, RcBin, StateVector, UtilBin, STATE_COUNT,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("invalid controller config: {0}")]
    InvalidConfig(String),
    #[error("action {0} is off the lattice")]
    OffLattice(String),
    #[error("Q value must be finite, got {0}")]
    NonFinite(f64),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("no observation for device {0}")]
    MissingObservation(DeviceId),
    #[error("no energy entry for participant {0}")]
    MissingEnergy(DeviceId),
    #[error("device {0} is not in the fleet")]
    UnknownDevice(DeviceId),
}

/// States observed at the start of a round.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub global: StateVector,
    pub devices: BTreeMap<DeviceId, StateVector>,
}

/// Outcome of the round the previous assignment was applied to.
#[derive(Debug, Clone, PartialEq)]
pub struct Feedback {
    pub accuracy: f64,
    pub accuracy_prev: f64,
    pub e_global: f64,
    pub e_local: BTreeMap<DeviceId, f64>,
    pub participants: BTreeSet<DeviceId>,
}

/// `K` for the round plus `(B, E)` for every device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub k: GlobalAction,
    pub local: BTreeMap<DeviceId, LocalAction>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LearnReport {
    pub rewards: BTreeMap<DeviceId, f64>,
    pub server_reward: f64,
    /// Largest change of `max_A Q(S, A)` over every state touched this round.
    pub max_delta: f64,
}

/// Every table a controller owns.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerTables {
    pub server: QTable<GlobalAction>,
    pub local: BTreeMap<TableScope, QTable<LocalAction>>,
}

impl ControllerTables {
    pub fn fresh(cfg: &ControllerConfig, fleet: &[DeviceProfile], streams: &SeedStreams) -> Self {
        let init = |scope: TableScope| match cfg.init_value {
            Some(v) => InitMode::Constant(v),
            None => InitMode::Random(streams.derive(seed::QINIT, &[scope.key()])),
        };
        let server = QTable::new(TableScope::Server, init(TableScope::Server));
        let scopes: BTreeSet<TableScope> = if cfg.per_device_tables {
            fleet.iter().map(|d| TableScope::Device(d.id)).collect()
        } else {
            DeviceCategory::ALL
                .iter()
                .map(|&c| TableScope::Category(c))
                .collect()
        };
        let local = scopes
            .into_iter()
            .map(|s| (s, QTable::new(s, init(s))))
            .collect();
        Self { server, local }
    }

    /// All tables in the text format, server first, separated by blank lines.
    pub fn to_text(&self) -> String {
        let mut out = self.server.to_text();
        for t in self.local.values() {
            out.push('\n');
            out.push_str(&t.to_text());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ControllerError> {
        let mut server = None;
        let mut local = BTreeMap::new();
        for block in text.split("\n\n").filter(|b| !b.trim().is_empty()) {
            if block.starts_with("# qtable")
                && block
                    .lines()
                    .next()
                    .is_some_and(|h| h.contains("actions=global"))
            {
                server = Some(QTable::<GlobalAction>::from_text(block)?);
            } else {
                let t = QTable::<LocalAction>::from_text(block)?;
                local.insert(t.scope(), t);
            }
        }
        Ok(Self {
            server: server.ok_or_else(|| ControllerError::Parse("no server table".into()))?,
            local,
        })
    }

    pub fn entry_count(&self) -> usize {
        self.server.len() + self.local.values().map(QTable::len).sum::<usize>()
    }
}

/// Tracks the per-round largest `|Δ max_A Q|` and reports when it stays under
/// the tolerance for a full window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceMonitor {
    tol: f64,
    window: usize,
    deltas: Vec<f64>,
    converged_at: Option<u64>,
}

impl ConvergenceMonitor {
    pub fn new(tol: f64, window: usize) -> Self {
        Self {
            tol,
            window,
            deltas: Vec::new(),
            converged_at: None,
        }
    }

    pub fn record(&mut self, round: u64, delta: f64) {
        self.deltas.push(delta);
        if self.converged_at.is_none() && deltas_converged(&self.deltas, self.tol, self.window) {
            self.converged_at = Some(round);
        }
    }

    pub fn deltas(&self) -> &[f64] {
        &self.deltas
    }

    /// First round at which the window condition held.
    pub fn converged_at(&self) -> Option<u64> {
        self.converged_at
    }

    pub fn is_converged(&self) -> bool {
        deltas_converged(&self.deltas, self.tol, self.window)
    }
}

fn deltas_converged(deltas: &[f64], tol: f64, window: usize) -> bool {
    deltas.len() >= window && deltas[deltas.len() - window..].iter().all(|&d| d < tol)
}

/// Largest `|Δ max_A Q(S, A)|` between two snapshots of one table, over the
/// states either snapshot has written.
pub fn max_q_change<A: Action>(prev: &QTable<A>, next: &QTable<A>) -> f64 {
    prev.visited_states()
        .union(&next.visited_states())
        .map(|s| (next.max_value(s) - prev.max_value(s)).abs())
        .fold(0.0, f64::max)
}

/// True when the last `window` consecutive snapshot pairs all changed by less
/// than `tol`. Needs at least two snapshots.
pub fn table_converged<A: Action>(history: &[QTable<A>], tol: f64, window: usize) -> bool {
    if history.len() < 2 {
        return false;
    }
    let deltas: Vec<f64> = history
        .windows(2)
        .map(|w| max_q_change(&w[0], &w[1]))
        .collect();
    deltas_converged(&deltas, tol, window)
}

struct Pending {
    global: StateVector,
    k: GlobalAction,
    states: BTreeMap<DeviceId, StateVector>,
    actions: BTreeMap<DeviceId, LocalAction>,
}

pub struct Controller {
    cfg: ControllerConfig,
    tables: ControllerTables,
    categories: BTreeMap<DeviceId, DeviceCategory>,
    streams: SeedStreams,
    pending: Option<Pending>,
    monitor: ConvergenceMonitor,
    fleet_size: usize,
}

impl Controller {
    pub fn new(
        cfg: ControllerConfig,
        fleet: &[DeviceProfile],
        streams: SeedStreams,
    ) -> Result<Self, ControllerError> {
        let tables = ControllerTables::fresh(&cfg, fleet, &streams);
        Self::with_tables(cfg, fleet, streams, tables)
    }

    /// Starts from existing tables, e.g. a checkpoint from an earlier run.
    pub fn with_tables(
        cfg: ControllerConfig,
        fleet: &[DeviceProfile],
        streams: SeedStreams,
        tables: ControllerTables,
    ) -> Result<Self, ControllerError> {
        cfg.validate()?;
        let mut tables = tables;
        let fresh = ControllerTables::fresh(&cfg, fleet, &streams);
        for (scope, t) in fresh.local {
            tables.local.entry(scope).or_insert(t);
        }
        Ok(Self {
            monitor: ConvergenceMonitor::new(cfg.converge_tol, cfg.converge_window),
            categories: fleet.iter().map(|d| (d.id, d.category)).collect(),
            fleet_size: fleet.len(),
            cfg,
            tables,
            streams,
            pending: None,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn tables(&self) -> &ControllerTables {
        &self.tables
    }

    pub fn into_tables(self) -> ControllerTables {
        self.tables
    }

    pub fn monitor(&self) -> &ConvergenceMonitor {
        &self.monitor
    }

    /// Changes the exploration rate used by [`Controller::controller_round`].
    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.cfg.epsilon = epsilon.clamp(0.0, 1.0);
    }

    fn scope_of(&self, id: DeviceId) -> Result<TableScope, ControllerError> {
        if self.cfg.per_device_tables {
            return Ok(TableScope::Device(id));
        }
        self.categories
            .get(&id)
            .map(|&c| TableScope::Category(c))
            .ok_or(ControllerError::UnknownDevice(id))
    }

    fn local_table(&self, id: DeviceId) -> Result<&QTable<LocalAction>, ControllerError> {
        let scope = self.scope_of(id)?;
        self.tables
            .local
            .get(&scope)
            .ok_or(ControllerError::UnknownDevice(id))
    }

    /// One controller step at the start of `round`: learn from the previous
    /// round's outcome (if any) using `obs` as the next state, then choose
    /// the assignment for this round.
    pub fn controller_round(
        &mut self,
        round: u64,
        obs: &Observation,
        feedback: Option<&Feedback>,
    ) -> Result<(Assignment, Option<LearnReport>), ControllerError> {
        let report = match feedback {
            Some(fb) => Some(self.learn(round, obs, fb)?),
            None => None,
        };
        let assignment = self.decide(round, obs, self.cfg.epsilon)?;
        Ok((assignment, report))
    }

    /// Applies the reward of the pending assignment. No-op without one.
    pub fn learn(
        &mut self,
        round: u64,
        obs: &Observation,
        fb: &Feedback,
    ) -> Result<LearnReport, ControllerError> {
        let Some(p) = self.pending.take() else {
            return Ok(LearnReport::default());
        };
        let mut before: BTreeMap<(Option<TableScope>, StateVector), f64> = BTreeMap::new();
        let mut rewards = BTreeMap::new();
        for &id in &fb.participants {
            let s = *p
                .states
                .get(&id)
                .ok_or(ControllerError::MissingObservation(id))?;
            let a = *p
                .actions
                .get(&id)
                .ok_or(ControllerError::MissingObservation(id))?;
            let s_next = *obs
                .devices
                .get(&id)
                .ok_or(ControllerError::MissingObservation(id))?;
            let e_local = *fb
                .e_local
                .get(&id)
                .ok_or(ControllerError::MissingEnergy(id))?;
            let r = compute_reward(
                fb.e_global,
                e_local,
                fb.accuracy,
                fb.accuracy_prev,
                &self.cfg,
            );
            let scope = self.scope_of(id)?;
            let table = self
                .tables
                .local
                .get_mut(&scope)
                .ok_or(ControllerError::UnknownDevice(id))?;
            before
                .entry((Some(scope), s))
                .or_insert_with(|| table.max_value(&s));
            q_update(table, &s, &a, r, &s_next, &self.cfg)?;
            rewards.insert(id, r);
        }
        let mean_local = fb.e_global / self.fleet_size.max(1) as f64;
        let server_reward = compute_reward(
            fb.e_global,
            mean_local,
            fb.accuracy,
            fb.accuracy_prev,
            &self.cfg,
        );
        before
            .entry((None, p.global))
            .or_insert_with(|| self.tables.server.max_value(&p.global));
        q_update(
            &mut self.tables.server,
            &p.global,
            &p.k,
            server_reward,
            &obs.global,
            &self.cfg,
        )?;

        let mut max_delta: f64 = 0.0;
        for ((scope, s), old) in &before {
            let now = match scope {
                None => self.tables.server.max_value(s),
                Some(sc) => self.tables.local[sc].max_value(s),
            };
            max_delta = max_delta.max((now - old).abs());
        }
        self.monitor.record(round.saturating_sub(1), max_delta);
        Ok(LearnReport {
            rewards,
            server_reward,
            max_delta,
        })
    }

    /// Chooses `K` and every device's `(B, E)` and remembers them as pending.
    pub fn decide(
        &mut self,
        round: u64,
        obs: &Observation,
        epsilon: f64,
    ) -> Result<Assignment, ControllerError> {
        let assignment = self.peek(round, obs, epsilon)?;
        self.pending = Some(Pending {
            global: obs.global,
            k: assignment.k,
            states: obs.devices.clone(),
            actions: assignment.local.clone(),
        });
        Ok(assignment)
    }

    /// The assignment `decide` would return, without recording it.
    pub fn peek(
        &self,
        round: u64,
        obs: &Observation,
        epsilon: f64,
    ) -> Result<Assignment, ControllerError> {
        let mut rng = self.streams.rng(seed::POLICY, &[round, u64::MAX]);
        let k = select_global_action(&self.tables.server, &obs.global, epsilon, &mut rng);
        let mut local = BTreeMap::new();
        for (&id, s) in &obs.devices {
            let mut rng = self.streams.rng(seed::POLICY, &[round, u64::from(id.0)]);
            local.insert(
                id,
                select_local_action(self.local_table(id)?, s, epsilon, &mut rng),
            );
        }
        Ok(Assignment { k, local })
    }

    /// Pure argmax assignment.
    pub fn greedy(&self, obs: &Observation) -> Result<Assignment, ControllerError> {
        self.peek(0, obs, 0.0)
    }
}
