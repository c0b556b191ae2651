use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::baselines::GAConfig;
use crate::controller::ControllerConfig;
use crate::domain::{
    validate_params, CategoryPreset, DeviceCategory, DeviceId, DeviceProfile, GlobalParams,
    WorkloadProfile, MAX_PARTICIPANTS,
};
use crate::envsim::VarianceModel;

/// Per-field overrides applied on top of a category's built-in preset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CategoryOverride {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub throughput: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ram: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub busy_power: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idle_power: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tx_regular: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tx_bad: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intf_cpu_coef: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intf_mem_coef: Option<f64>,
}

impl CategoryOverride {
    pub fn apply(&self, mut p: CategoryPreset) -> CategoryPreset {
        let set = |dst: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *dst = v;
            }
        };
        set(&mut p.throughput, self.throughput);
        set(&mut p.ram, self.ram);
        set(&mut p.busy_power, self.busy_power);
        set(&mut p.idle_power, self.idle_power);
        set(&mut p.tx_regular, self.tx_regular);
        set(&mut p.tx_bad, self.tx_bad);
        set(&mut p.intf_cpu_coef, self.intf_cpu_coef);
        set(&mut p.intf_mem_coef, self.intf_mem_coef);
        p
    }
}

/// Device counts per category. Ids are assigned H first, then M, then L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetSpec {
    pub h: u32,
    pub m: u32,
    pub l: u32,
    #[serde(rename = "H", skip_serializing_if = "is_default_override")]
    pub h_override: CategoryOverride,
    #[serde(rename = "M", skip_serializing_if = "is_default_override")]
    pub m_override: CategoryOverride,
    #[serde(rename = "L", skip_serializing_if = "is_default_override")]
    pub l_override: CategoryOverride,
}

fn is_default_override(o: &CategoryOverride) -> bool {
    *o == CategoryOverride::default()
}

impl Default for FleetSpec {
    fn default() -> Self {
        Self {
            h: 30,
            m: 70,
            l: 100,
            h_override: CategoryOverride::default(),
            m_override: CategoryOverride::default(),
            l_override: CategoryOverride::default(),
        }
    }
}

impl FleetSpec {
    pub fn new(h: u32, m: u32, l: u32) -> Self {
        Self {
            h,
            m,
            l,
            ..Default::default()
        }
    }

    pub fn size(&self) -> usize {
        (self.h + self.m + self.l) as usize
    }

    pub fn preset(&self, cat: DeviceCategory) -> CategoryPreset {
        let o = match cat {
            DeviceCategory::H => &self.h_override,
            DeviceCategory::M => &self.m_override,
            DeviceCategory::L => &self.l_override,
        };
        o.apply(CategoryPreset::for_category(cat))
    }

    pub fn build(&self) -> Result<Vec<DeviceProfile>, HarnessError> {
        let mut out = Vec::with_capacity(self.size());
        for (cat, count) in [
            (DeviceCategory::H, self.h),
            (DeviceCategory::M, self.m),
            (DeviceCategory::L, self.l),
        ] {
            let preset = self.preset(cat);
            for _ in 0..count {
                let id = DeviceId(out.len() as u32);
                out.push(preset.to_profile(id, cat)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartitionMode {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSpec {
    pub n_classes: usize,
    pub n_samples: usize,
    pub feature_dim: usize,
    /// Scale of the class means; larger is easier.
    pub separation: f64,
    pub test_fraction: f64,
    pub partition: PartitionMode,
    /// Dirichlet concentration; ignored for IID.
    pub concentration: f64,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            n_classes: 10,
            n_samples: 10_000,
            feature_dim: 16,
            separation: 1.0,
            test_fraction: 0.2,
            partition: PartitionMode::Iid,
            concentration: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    /// Adds one tanh hidden layer of this width.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_units: Option<usize>,
    pub learning_rate: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden_units: None,
            learning_rate: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergenceSpec {
    /// Accuracy slack below the target, in points.
    pub delta: f64,
    pub window: usize,
    /// Largest relative loss change allowed inside the window.
    pub loss_tol: f64,
    /// Fixed target; `None` trains a centralized reference model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target_accuracy: Option<f64>,
    /// Epochs of the centralized reference run.
    pub reference_epochs: u32,
    pub reference_batch: u32,
    pub stop_at_convergence: bool,
}

impl Default for ConvergenceSpec {
    fn default() -> Self {
        Self {
            delta: 1.0,
            window: 5,
            loss_tol: 0.01,
            target_accuracy: None,
            reference_epochs: 20,
            reference_batch: 32,
            stop_at_convergence: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyName {
    #[serde(rename = "fixed")]
    Fixed,
    #[serde(rename = "fixed-best")]
    FixedBest,
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "ga")]
    Ga,
    #[serde(rename = "fedgpo")]
    FedGpo,
}

impl StrategyName {
    pub const ALL: [StrategyName; 5] = [
        StrategyName::Fixed,
        StrategyName::FixedBest,
        StrategyName::Random,
        StrategyName::Ga,
        StrategyName::FedGpo,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StrategyName::Fixed => "fixed",
            StrategyName::FixedBest => "fixed-best",
            StrategyName::Random => "random",
            StrategyName::Ga => "ga",
            StrategyName::FedGpo => "fedgpo",
        }
    }
}

impl fmt::Display for StrategyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StrategyName {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|n| n.label() == s)
            .ok_or_else(|| HarnessError::InvalidScenario(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategySpec {
    pub name: StrategyName,
    /// Tuple for `fixed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    /// Rounds per grid point for `fixed-best`; defaults to `max_rounds`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_rounds: Option<u32>,
    /// Restricts the grid search to these `[B, E, K]` points.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lattice: Option<Vec<GlobalParams>>,
    /// `fedgpo` only: rounds of table training (on an independent seed)
    /// before the measured run starts.
    pub pretrain_rounds: u32,
    /// `fedgpo` only: exploration rate once the tables have converged.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon_after_convergence: Option<f64>,
    pub ga: GAConfig,
}

impl Default for StrategySpec {
    fn default() -> Self {
        Self {
            name: StrategyName::FedGpo,
            b: None,
            e: None,
            k: None,
            budget_rounds: None,
            lattice: None,
            pretrain_rounds: 0,
            epsilon_after_convergence: None,
            ga: GAConfig::default(),
        }
    }
}

impl StrategySpec {
    pub fn fixed(p: GlobalParams) -> Self {
        Self {
            name: StrategyName::Fixed,
            b: Some(p.b),
            e: Some(p.e),
            k: Some(p.k),
            ..Default::default()
        }
    }

    pub fn named(name: StrategyName) -> Self {
        Self {
            name,
            ..Default::default()
        }
    }

    pub fn fixed_params(&self) -> Option<GlobalParams> {
        Some(GlobalParams::new(self.b?, self.e?, self.k?))
    }
}

/// One fully specified experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub max_rounds: u32,
    pub fleet: FleetSpec,
    pub workload: WorkloadProfile,
    pub data: DataSpec,
    pub model: ModelSpec,
    pub variance: VarianceModel,
    pub convergence: ConvergenceSpec,
    pub strategy: StrategySpec,
    pub controller: ControllerConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            max_rounds: 100,
            fleet: FleetSpec::default(),
            workload: WorkloadProfile::cnn_mnist(),
            data: DataSpec::default(),
            model: ModelSpec::default(),
            variance: VarianceModel::default(),
            convergence: ConvergenceSpec::default(),
            strategy: StrategySpec::default(),
            controller: ControllerConfig::default(),
        }
    }
}

impl Scenario {
    /// Small bench-top setup: 3 H / 7 M / 10 L devices, every L device
    /// permanently loaded by a co-running app, per-device bandwidths drawn
    /// once.
    pub fn desk() -> Self {
        let mut s = Scenario {
            fleet: FleetSpec::new(3, 7, 10),
            ..Default::default()
        };
        s.data.n_samples = 4000;
        s.variance.interference.enabled = true;
        s.variance.interference.probability = 1.0;
        s.variance.interference.categories = vec![DeviceCategory::L];
        s.variance.interference.frozen = true;
        s.variance.network.stddev_mbps = 20.0;
        s.variance.network.frozen = true;
        s
    }

    /// Everything except the strategy, for checking that reports compare
    /// like with like.
    pub fn shared_part(&self) -> Scenario {
        Scenario {
            strategy: StrategySpec::default(),
            ..self.clone()
        }
    }

    /// Checks cross-field constraints. Error messages start with the dotted
    /// config key at fault.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad =
            |key: &str, msg: String| Err(HarnessError::InvalidScenario(format!("{key}: {msg}")));
        let n = self.fleet.size();
        if n == 0 {
            return bad("scenario.fleet", "fleet is empty".into());
        }
        if self.max_rounds == 0 {
            return bad("scenario.max_rounds", "must be at least 1".into());
        }
        if let Err(e) = self.workload.validate() {
            return bad("scenario.workload", e.to_string());
        }
        let d = &self.data;
        if d.n_classes < 2 || d.feature_dim == 0 || d.n_samples < d.n_classes {
            return bad(
                "scenario.data",
                "need n_classes >= 2, feature_dim >= 1, n_samples >= n_classes".into(),
            );
        }
        if !(d.test_fraction > 0.0 && d.test_fraction < 1.0) {
            return bad("scenario.data.test_fraction", "must lie in (0, 1)".into());
        }
        if d.partition == PartitionMode::Dirichlet && !(d.concentration > 0.0) {
            return bad("scenario.data.concentration", "must be positive".into());
        }
        let train = d.n_samples - (d.n_samples as f64 * d.test_fraction).round() as usize;
        if train < n {
            return bad(
                "scenario.data.n_samples",
                format!("{train} training samples cannot cover {n} devices"),
            );
        }
        if !(self.model.learning_rate > 0.0) {
            return bad("scenario.model.learning_rate", "must be positive".into());
        }
        if let Err(e) = self.variance.validate() {
            return bad("scenario.variance", e.to_string());
        }
        let c = &self.convergence;
        if c.window == 0
            || !(c.loss_tol > 0.0)
            || c.delta < 0.0
            || c.reference_epochs == 0
            || c.reference_batch == 0
        {
            return bad(
                "scenario.convergence",
                "window, loss_tol, reference_epochs and reference_batch must be positive".into(),
            );
        }
        if let Err(e) = self.controller.validate() {
            return bad("controller", e.to_string());
        }
        let s = &self.strategy;
        match s.name {
            StrategyName::Fixed => {
                for (key, v) in [("b", s.b), ("e", s.e), ("k", s.k)] {
                    if v.is_none() {
                        return bad(
                            &format!("strategy.{key}"),
                            "required for the fixed strategy".into(),
                        );
                    }
                }
                let p = s.fixed_params().expect("checked above");
                if let Err(e) = validate_params(p, n) {
                    let key = match e {
                        crate::domain::DomainError::OffLattice { component, .. } => {
                            format!("strategy.{}", component.to_string().to_lowercase())
                        }
                        _ => "strategy.k".to_string(),
                    };
                    return bad(&key, e.to_string());
                }
            }
            // An explicit lattice is checked point by point below.
            StrategyName::FixedBest if s.lattice.is_some() => {}
            _ => {
                if n < MAX_PARTICIPANTS as usize {
                    return bad(
                        "scenario.fleet",
                        format!(
                            "adaptive strategies need at least {MAX_PARTICIPANTS} devices, got {n}"
                        ),
                    );
                }
            }
        }
        if let Some(points) = &s.lattice {
            for p in points {
                if let Err(e) = validate_params(*p, n) {
                    return bad("strategy.lattice", e.to_string());
                }
            }
        }
        if let Err(e) = s.ga.validate() {
            return bad("strategy.ga", e.to_string());
        }
        if let Some(eps) = s.epsilon_after_convergence {
            if !(0.0..=1.0).contains(&eps) {
                return bad(
                    "strategy.epsilon_after_convergence",
                    "must lie in [0, 1]".into(),
                );
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_fleet_layout() {
        let f = FleetSpec::default().build().unwrap();
        assert_eq!(f.len(), 200);
        assert_eq!(f[0].category, DeviceCategory::H);
        assert_eq!(f[29].category, DeviceCategory::H);
        assert_eq!(f[30].category, DeviceCategory::M);
        assert_eq!(f[100].category, DeviceCategory::L);
        assert!(f
            .iter()
            .enumerate()
            .all(|(i, d)| d.id == DeviceId(i as u32)));
    }

    #[test]
    fn overrides_apply_per_category() {
        let mut spec = FleetSpec::new(1, 1, 1);
        spec.l_override.intf_cpu_coef = Some(2.0);
        let f = spec.build().unwrap();
        assert_eq!(f[2].sensitivity.cpu, 2.0);
        assert_eq!(f[0].sensitivity.cpu, 1.0);
    }

    #[test]
    fn validation_names_keys() {
        let mut s = Scenario {
            strategy: StrategySpec::fixed(GlobalParams::new(3, 10, 20)),
            ..Default::default()
        };
        let msg = s.validate().unwrap_err().to_string();
        assert!(msg.contains("strategy.b"), "{msg}");
        s.strategy = StrategySpec::fixed(GlobalParams::new(1, 1, 1));
        s.fleet = FleetSpec::new(0, 0, 1);
        s.data.n_samples = 50;
        assert!(s.validate().is_ok());
        s.strategy = StrategySpec::named(StrategyName::FedGpo);
        assert!(s
            .validate()
            .unwrap_err()
            .to_string()
            .contains("scenario.fleet"));
    }
}
