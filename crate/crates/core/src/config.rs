//! TOML experiment documents.
//!
//! A document has a `[scenario]` section (fleet, workload, data, model,
//! variance and convergence settings), a `[strategy]` and a `[controller]`
//! section, an `[output]` section and optional `[sweep]` and `[compare]`
//! sections. Unknown keys are rejected everywhere; every omitted key takes
//! the default shown by [`ConfigDocument::default`].

use std::path::PathBuf;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::controller::ControllerConfig;
use crate::domain::{GlobalParams, WorkloadProfile};
use crate::envsim::VarianceModel;
use crate::harness::{
    ConvergenceSpec, DataSpec, FleetSpec, ModelSpec, Scenario, StrategyName, StrategySpec,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}

/// Either a preset name (`workload = "cnn-mnist"`) or an inline table.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadChoice(pub WorkloadProfile);

impl Serialize for WorkloadChoice {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        match WorkloadProfile::preset(&self.0.name) {
            Some(p) if p == self.0 => ser.serialize_str(&self.0.name),
            _ => self.0.serialize(ser),
        }
    }
}

impl<'de> Deserialize<'de> for WorkloadChoice {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Name(String),
            Inline(WorkloadProfile),
        }
        match Raw::deserialize(de)? {
            Raw::Name(n) => WorkloadProfile::preset(&n).map(WorkloadChoice).ok_or_else(|| {
                serde::de::Error::custom(format!(
                    "unknown workload preset `{n}` (expected cnn-mnist, lstm-shakespeare or mobilenet-imagenet)"
                ))
            }),
            Raw::Inline(w) => Ok(WorkloadChoice(w)),
        }
    }
}

impl Default for WorkloadChoice {
    fn default() -> Self {
        WorkloadChoice(WorkloadProfile::cnn_mnist())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub seed: u64,
    pub max_rounds: u32,
    pub fleet: FleetSpec,
    pub workload: WorkloadChoice,
    pub data: DataSpec,
    pub model: ModelSpec,
    pub variance: VarianceModel,
    pub convergence: ConvergenceSpec,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let s = Scenario::default();
        Self {
            seed: s.seed,
            max_rounds: s.max_rounds,
            fleet: s.fleet,
            workload: WorkloadChoice(s.workload),
            data: s.data,
            model: s.model,
            variance: s.variance,
            convergence: s.convergence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
        }
    }
}

/// Grid-search settings for `flsim sweep`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// Rounds per point; defaults to `scenario.max_rounds`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_rounds: Option<u32>,
    /// Points to evaluate; the full 150-point lattice when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lattice: Option<Vec<GlobalParams>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub strategies: Vec<StrategyName>,
    pub anchor: StrategyName,
    /// `fixed` strategy tuple when `fixed` is listed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed: Option<GlobalParams>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            strategies: vec![StrategyName::FixedBest, StrategyName::FedGpo],
            anchor: StrategyName::FixedBest,
            fixed: None,
        }
    }
}

fn is_default_output(o: &OutputSection) -> bool {
    *o == OutputSection::default()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfigDocument {
    pub scenario: ScenarioSection,
    pub strategy: StrategySpec,
    pub controller: ControllerConfig,
    /// Left out of echoed configs so that report files do not depend on
    /// where they were written.
    #[serde(skip_serializing_if = "is_default_output")]
    pub output: OutputSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
}

impl ConfigDocument {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config types serialize to TOML")
    }

    pub fn from_scenario(s: &Scenario) -> Self {
        Self {
            scenario: ScenarioSection {
                seed: s.seed,
                max_rounds: s.max_rounds,
                fleet: s.fleet.clone(),
                workload: WorkloadChoice(s.workload.clone()),
                data: s.data.clone(),
                model: s.model.clone(),
                variance: s.variance.clone(),
                convergence: s.convergence.clone(),
            },
            strategy: s.strategy.clone(),
            controller: s.controller.clone(),
            ..Default::default()
        }
    }

    pub fn scenario(&self) -> Scenario {
        let sc = &self.scenario;
        Scenario {
            seed: sc.seed,
            max_rounds: sc.max_rounds,
            fleet: sc.fleet.clone(),
            workload: sc.workload.0.clone(),
            data: sc.data.clone(),
            model: sc.model.clone(),
            variance: sc.variance.clone(),
            convergence: sc.convergence.clone(),
            strategy: self.strategy.clone(),
            controller: self.controller.clone(),
        }
    }

    /// The scenario after cross-field validation.
    pub fn validated_scenario(&self) -> Result<Scenario, ConfigError> {
        let s = self.scenario();
        s.validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        let doc = ConfigDocument::from_toml("").unwrap();
        assert_eq!(doc, ConfigDocument::default());
        assert_eq!(doc.scenario(), Scenario::default());
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let err = ConfigDocument::from_toml("[scenario]\nmax_round = 3\n").unwrap_err();
        assert!(err.to_string().contains("max_round"), "{err}");
        let err = ConfigDocument::from_toml("[controller]\ngama = 0.5\n").unwrap_err();
        assert!(err.to_string().contains("gama"), "{err}");
    }

    #[test]
    fn off_lattice_batch_names_the_key() {
        let doc = ConfigDocument::from_toml("[strategy]\nname = \"fixed\"\nb = 3\ne = 1\nk = 1\n")
            .unwrap();
        let err = doc.validated_scenario().unwrap_err();
        assert!(err.to_string().contains("strategy.b"), "{err}");
    }

    #[test]
    fn workload_preset_or_inline() {
        let doc =
            ConfigDocument::from_toml("[scenario]\nworkload = \"lstm-shakespeare\"\n").unwrap();
        assert_eq!(doc.scenario.workload.0, WorkloadProfile::lstm_shakespeare());
        let inline = "[scenario.workload]\nname = \"tiny\"\nconv_layers = 1\nfc_layers = 1\nrc_layers = 0\nparam_count = 100\n";
        let doc = ConfigDocument::from_toml(inline).unwrap();
        assert_eq!(doc.scenario.workload.0.param_count, 100);
        let err = ConfigDocument::from_toml("[scenario]\nworkload = \"resnet\"\n").unwrap_err();
        assert!(err.to_string().contains("resnet"), "{err}");
    }

    #[test]
    fn round_trip_through_toml() {
        let mut s = Scenario::desk();
        s.strategy = StrategySpec::fixed(GlobalParams::new(8, 5, 10));
        s.controller.energy_norm = Some(2.5);
        let mut doc = ConfigDocument::from_scenario(&s);
        doc.sweep = Some(SweepSection {
            budget_rounds: Some(20),
            lattice: Some(vec![GlobalParams::new(1, 1, 5)]),
        });
        let text = doc.to_toml();
        let back = ConfigDocument::from_toml(&text).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.scenario(), s);
    }
}
