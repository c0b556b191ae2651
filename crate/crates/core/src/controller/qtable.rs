//! Sparse Q-tables with lazily materialized random initialization.
//!
//! Text format, one entry per line after the header:
//!
//! ```text
//! # qtable scope=category:H actions=local init=random:1234
//! small,small,small,none,none,regular,large<TAB>b8,e10<TAB>0.4375
//! ```
//!
//! The action column is `bB,eE` for local tables and `kK` for the server
//! table. Values are written in shortest round-trip form.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::state::StateVector;
use super::ControllerError;
use crate::domain::{DeviceCategory, DeviceId, BATCH_SIZES, EPOCH_COUNTS, PARTICIPANT_COUNTS};
use crate::seed::{mix64, unit_interval};

/// Per-device `(B, E)` choice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LocalAction {
    pub b: u32,
    pub e: u32,
}

/// Fleet-wide participant count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GlobalAction {
    pub k: u32,
}

/// An action space enumerated in a fixed order.
pub trait Action: Copy + Sized {
    const COUNT: usize;
    const KIND: ActionKind;
    fn index(&self) -> usize;
    fn from_index(i: usize) -> Option<Self>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Local,
    Global,
}

impl LocalAction {
    pub fn new(b: u32, e: u32) -> Result<Self, ControllerError> {
        if !BATCH_SIZES.contains(&b) || !EPOCH_COUNTS.contains(&e) {
            return Err(ControllerError::OffLattice(format!("(B={b}, E={e})")));
        }
        Ok(Self { b, e })
    }

    pub fn all() -> impl Iterator<Item = LocalAction> {
        (0..Self::COUNT).filter_map(Self::from_index)
    }
}

impl GlobalAction {
    pub fn new(k: u32) -> Result<Self, ControllerError> {
        if !PARTICIPANT_COUNTS.contains(&k) {
            return Err(ControllerError::OffLattice(format!("(K={k})")));
        }
        Ok(Self { k })
    }
}

impl Action for LocalAction {
    const COUNT: usize = BATCH_SIZES.len() * EPOCH_COUNTS.len();
    const KIND: ActionKind = ActionKind::Local;

    fn index(&self) -> usize {
        let bi = BATCH_SIZES
            .iter()
            .position(|&b| b == self.b)
            .expect("on lattice");
        let ei = EPOCH_COUNTS
            .iter()
            .position(|&e| e == self.e)
            .expect("on lattice");
        bi * EPOCH_COUNTS.len() + ei
    }

    fn from_index(i: usize) -> Option<Self> {
        (i < Self::COUNT).then(|| Self {
            b: BATCH_SIZES[i / EPOCH_COUNTS.len()],
            e: EPOCH_COUNTS[i % EPOCH_COUNTS.len()],
        })
    }
}

impl Action for GlobalAction {
    const COUNT: usize = PARTICIPANT_COUNTS.len();
    const KIND: ActionKind = ActionKind::Global;

    fn index(&self) -> usize {
        PARTICIPANT_COUNTS
            .iter()
            .position(|&k| k == self.k)
            .expect("on lattice")
    }

    fn from_index(i: usize) -> Option<Self> {
        PARTICIPANT_COUNTS.get(i).map(|&k| Self { k })
    }
}

impl fmt::Display for LocalAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "b{},e{}", self.b, self.e)
    }
}

impl fmt::Display for GlobalAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "k{}", self.k)
    }
}

impl FromStr for LocalAction {
    type Err = ControllerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ControllerError::Parse(format!("bad local action `{s}`"));
        let (b, e) = s.split_once(',').ok_or_else(bad)?;
        let b = b
            .trim()
            .strip_prefix('b')
            .and_then(|v| v.parse().ok())
            .ok_or_else(bad)?;
        let e = e
            .trim()
            .strip_prefix('e')
            .and_then(|v| v.parse().ok())
            .ok_or_else(bad)?;
        LocalAction::new(b, e)
    }
}

impl FromStr for GlobalAction {
    type Err = ControllerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let k = s
            .trim()
            .strip_prefix('k')
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| ControllerError::Parse(format!("bad global action `{s}`")))?;
        GlobalAction::new(k)
    }
}

/// Who reads and writes a table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TableScope {
    Server,
    Category(DeviceCategory),
    Device(DeviceId),
}

impl TableScope {
    /// Stable numeric key used to derive initialization values.
    pub fn key(&self) -> u64 {
        match self {
            TableScope::Server => 0,
            TableScope::Category(c) => 1 + c.index() as u64,
            TableScope::Device(d) => 1_000 + u64::from(d.0),
        }
    }
}

impl fmt::Display for TableScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TableScope::Server => f.write_str("server"),
            TableScope::Category(c) => write!(f, "category:{c}"),
            TableScope::Device(d) => write!(f, "device:{}", d.0),
        }
    }
}

impl FromStr for TableScope {
    type Err = ControllerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ControllerError::Parse(format!("bad table scope `{s}`"));
        if s == "server" {
            return Ok(TableScope::Server);
        }
        if let Some(c) = s.strip_prefix("category:") {
            return c.parse().map(TableScope::Category).map_err(|_| bad());
        }
        if let Some(d) = s.strip_prefix("device:") {
            return d
                .parse()
                .map(|v| TableScope::Device(DeviceId(v)))
                .map_err(|_| bad());
        }
        Err(bad())
    }
}

/// Value returned for entries that were never written.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitMode {
    /// Uniform in `[0, 1)`, a pure function of (seed, scope, state, action).
    Random(u64),
    Constant(f64),
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitMode::Random(s) => write!(f, "random:{s}"),
            InitMode::Constant(v) => write!(f, "constant:{v}"),
        }
    }
}

impl FromStr for InitMode {
    type Err = ControllerError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ControllerError::Parse(format!("bad init mode `{s}`"));
        match s.split_once(':') {
            Some(("random", v)) => v.parse().map(InitMode::Random).map_err(|_| bad()),
            Some(("constant", v)) => v.parse().map(InitMode::Constant).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable<A: Action> {
    scope: TableScope,
    init: InitMode,
    entries: BTreeMap<(u16, u16), f64>,
    _action: std::marker::PhantomData<A>,
}

impl<A: Action> QTable<A> {
    pub fn new(scope: TableScope, init: InitMode) -> Self {
        Self {
            scope,
            init,
            entries: BTreeMap::new(),
            _action: std::marker::PhantomData,
        }
    }

    pub fn scope(&self) -> TableScope {
        self.scope
    }

    pub fn init_mode(&self) -> InitMode {
        self.init
    }

    fn init_value(&self, s: usize, a: usize) -> f64 {
        match self.init {
            InitMode::Constant(v) => v,
            InitMode::Random(seed) => {
                let key = (self.scope.key() << 32) ^ ((s as u64) << 16) ^ a as u64;
                unit_interval(mix64(mix64(seed) ^ key))
            }
        }
    }

    pub fn get(&self, s: &StateVector, a: &A) -> f64 {
        self.get_idx(s.index(), a.index())
    }

    fn get_idx(&self, s: usize, a: usize) -> f64 {
        self.entries
            .get(&(s as u16, a as u16))
            .copied()
            .unwrap_or_else(|| self.init_value(s, a))
    }

    pub fn set(&mut self, s: &StateVector, a: &A, value: f64) -> Result<(), ControllerError> {
        if !value.is_finite() {
            return Err(ControllerError::NonFinite(value));
        }
        self.entries
            .insert((s.index() as u16, a.index() as u16), value);
        Ok(())
    }

    pub fn row(&self, s: &StateVector) -> Vec<f64> {
        let si = s.index();
        (0..A::COUNT).map(|a| self.get_idx(si, a)).collect()
    }

    /// First action with the largest value.
    pub fn argmax(&self, s: &StateVector) -> A {
        let row = self.row(s);
        let mut best = 0;
        for (i, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = i;
            }
        }
        A::from_index(best).expect("index in range")
    }

    pub fn max_value(&self, s: &StateVector) -> f64 {
        self.row(s).into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    /// States with at least one written entry.
    pub fn visited_states(&self) -> BTreeSet<StateVector> {
        self.entries
            .keys()
            .map(|&(s, _)| StateVector::from_index(s as usize).expect("valid state index"))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Iterates written entries in (state index, action index) order.
    pub fn entries(&self) -> impl Iterator<Item = (StateVector, A, f64)> + '_ {
        self.entries.iter().map(|(&(s, a), &v)| {
            (
                StateVector::from_index(s as usize).expect("valid state index"),
                A::from_index(a as usize).expect("valid action index"),
                v,
            )
        })
    }
}

impl<A: Action + fmt::Display + FromStr<Err = ControllerError>> QTable<A> {
    pub fn to_text(&self) -> String {
        let kind = match A::KIND {
            ActionKind::Local => "local",
            ActionKind::Global => "global",
        };
        let mut out = format!(
            "# qtable scope={} actions={kind} init={}\n",
            self.scope, self.init
        );
        for (s, a, v) in self.entries() {
            writeln!(out, "{s}\t{a}\t{v}").expect("write to string");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ControllerError> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| ControllerError::Parse("empty table text".into()))?;
        let field = |key: &str| {
            header
                .split_whitespace()
                .find_map(|t| t.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
                .ok_or_else(|| ControllerError::Parse(format!("header lacks `{key}=`")))
        };
        let expected = match A::KIND {
            ActionKind::Local => "local",
            ActionKind::Global => "global",
        };
        if field("actions")? != expected {
            return Err(ControllerError::Parse(format!(
                "expected a {expected} action table"
            )));
        }
        let mut table = QTable::new(field("scope")?.parse()?, field("init")?.parse()?);
        for line in lines {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(ControllerError::Parse(format!(
                    "expected 3 tab-separated columns in `{line}`"
                )));
            }
            let s: StateVector = cols[0].parse()?;
            let a: A = cols[1].parse()?;
            let v: f64 = cols[2]
                .trim()
                .parse()
                .map_err(|e| ControllerError::Parse(format!("bad value `{}`: {e}", cols[2])))?;
            table.set(&s, &a, v)?;
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::state::STATE_COUNT;

    fn state(i: usize) -> StateVector {
        StateVector::from_index(i).unwrap()
    }

    #[test]
    fn action_orders() {
        let all: Vec<LocalAction> = LocalAction::all().collect();
        assert_eq!(all.len(), 30);
        assert_eq!(all[0], LocalAction { b: 1, e: 1 });
        assert_eq!(all[29], LocalAction { b: 32, e: 20 });
        for (i, a) in all.iter().enumerate() {
            assert_eq!(a.index(), i);
        }
        assert_eq!(GlobalAction::from_index(2), Some(GlobalAction { k: 10 }));
        assert!(LocalAction::new(3, 1).is_err());
        assert!(GlobalAction::new(2).is_err());
    }

    #[test]
    fn lazy_random_init_is_stable_and_in_range() {
        let t: QTable<LocalAction> =
            QTable::new(TableScope::Category(DeviceCategory::H), InitMode::Random(7));
        let other: QTable<LocalAction> =
            QTable::new(TableScope::Category(DeviceCategory::L), InitMode::Random(7));
        let s = state(100);
        let row = t.row(&s);
        assert_eq!(row, t.row(&s));
        assert!(row.iter().all(|v| (0.0..1.0).contains(v)));
        assert_ne!(row, other.row(&s));
        assert!(t.is_empty());
    }

    #[test]
    fn argmax_breaks_ties_by_enumeration_order() {
        let mut t: QTable<LocalAction> = QTable::new(TableScope::Server, InitMode::Constant(0.0));
        let s = state(5);
        assert_eq!(t.argmax(&s), LocalAction { b: 1, e: 1 });
        t.set(&s, &LocalAction { b: 8, e: 10 }, 5.0).unwrap();
        assert_eq!(t.argmax(&s), LocalAction { b: 8, e: 10 });
        t.set(&s, &LocalAction { b: 2, e: 5 }, 5.0).unwrap();
        assert_eq!(t.argmax(&s), LocalAction { b: 2, e: 5 });
        assert!(t.set(&s, &LocalAction { b: 1, e: 1 }, f64::NAN).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut t: QTable<LocalAction> =
            QTable::new(TableScope::Device(DeviceId(12)), InitMode::Random(99));
        t.set(&state(0), &LocalAction { b: 4, e: 15 }, -12.375)
            .unwrap();
        t.set(
            &state(STATE_COUNT - 1),
            &LocalAction { b: 32, e: 1 },
            0.1 + 0.2,
        )
        .unwrap();
        let text = t.to_text();
        assert!(text.starts_with("# qtable scope=device:12 actions=local init=random:99\n"));
        assert_eq!(QTable::<LocalAction>::from_text(&text).unwrap(), t);
        assert!(QTable::<GlobalAction>::from_text(&text).is_err());

        let mut g: QTable<GlobalAction> = QTable::new(TableScope::Server, InitMode::Constant(0.5));
        g.set(&state(3), &GlobalAction { k: 15 }, 2.0).unwrap();
        assert_eq!(QTable::<GlobalAction>::from_text(&g.to_text()).unwrap(), g);
    }
}
