use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{load_csv, read_csv, synth, Dataset, LoadReport, Schema, SplitPlan};
use crate::error::{Error, Result};
use crate::evaluators::EnsembleSpec;
use crate::metrics::DEFAULT_K;
use crate::models::TrainConfig;
use crate::recourse::{ContinuousConfig, MixedConfig, SearchDistance};

pub const CONFIG_VERSION: u32 = 1;

fn default_version() -> u32 {
    CONFIG_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Csv {
        path: PathBuf,
        schema: PathBuf,
    },
    /// The built-in credit-style generator.
    SyntheticCredit {
        rows: usize,
        seed: u64,
    },
}

impl DataSource {
    pub fn load(&self) -> Result<(Dataset, LoadReport)> {
        match self {
            DataSource::Csv { path, schema } => {
                let schema = Schema::from_json(&std::fs::read_to_string(schema)?)?;
                load_csv(path, &schema)
            }
            DataSource::SyntheticCredit { rows, seed } => {
                let text = synth::german_credit_csv(*rows, *seed);
                read_csv(text.as_bytes(), &synth::german_credit_schema())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    DataSupported,
    Continuous,
    Sparse,
    Mixed,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::DataSupported => "data-supported",
            Method::Continuous => "continuous",
            Method::Sparse => "sparse",
            Method::Mixed => "mixed",
        }
    }
}

/// How the ε values in the config are read.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonScale {
    /// Fractions of the base model's training objective.
    #[default]
    Relative,
    Absolute,
}

impl EpsilonScale {
    pub fn resolve(self, value: f64, base_objective: f64) -> f64 {
        match self {
            EpsilonScale::Relative => value * base_objective,
            EpsilonScale::Absolute => value,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LofReference {
    /// Training rows of the desired class.
    #[default]
    TargetClass,
    AllTraining,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub data: DataSource,
    #[serde(default = "yes")]
    pub balance: bool,
    #[serde(default)]
    pub split: SplitPlan,
    /// Run only the first this-many folds.
    #[serde(default)]
    pub max_folds: Option<usize>,
    #[serde(default)]
    pub model: TrainConfig,
    #[serde(default)]
    pub epsilon_scale: EpsilonScale,
    /// Candidate generation ε values, ascending.
    pub epsilon_grid: Vec<f64>,
    pub epsilon_targets: Vec<f64>,
    pub methods: Vec<Method>,
    /// Evaluator templates; `epsilon_target` is filled per cell.
    pub evaluators: Vec<EnsembleSpec>,
    #[serde(default)]
    pub continuous: ContinuousConfig,
    #[serde(default)]
    pub mixed: MixedConfig,
    #[serde(default)]
    pub search_distance: SearchDistance,
    /// Apply the schema's immutability flags and bounds during generation.
    #[serde(default)]
    pub actionable: bool,
    /// Class the counterfactuals should reach. With 0 the labels are
    /// flipped on load, so the model's positive class is always the target.
    #[serde(default = "one")]
    pub desired_class: u8,
    /// Refit an MLP's output layer on its frozen embedding before building
    /// the ellipsoid.
    #[serde(default)]
    pub refit_head: bool,
    /// Cap on explained test instances per fold.
    #[serde(default)]
    pub max_instances: Option<usize>,
    /// Cap on validation instances used for ε tuning.
    #[serde(default)]
    pub max_tuning_instances: Option<usize>,
    #[serde(default = "default_lof_k")]
    pub lof_k: usize,
    #[serde(default)]
    pub lof_reference: LofReference,
    /// Wall-clock budget per (fold, method).
    #[serde(default = "default_budget")]
    pub budget_seconds: f64,
}

fn yes() -> bool {
    true
}

fn one() -> u8 {
    1
}

fn default_lof_k() -> usize {
    DEFAULT_K
}

fn default_budget() -> f64 {
    600.0
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a config file; relative data paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::Csv { path, schema } = &mut cfg.data {
            for p in [path, schema] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.epsilon_grid.is_empty() || self.epsilon_targets.is_empty() {
            return Err(Error::Config(
                "epsilon_grid and epsilon_targets must be non-empty".into(),
            ));
        }
        if self
            .epsilon_grid
            .iter()
            .chain(&self.epsilon_targets)
            .any(|e| !(*e >= 0.0 && e.is_finite()))
        {
            return Err(Error::Config("ε values must be finite and non-negative".into()));
        }
        if self.epsilon_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("epsilon_grid must be strictly ascending".into()));
        }
        if self.methods.is_empty() || self.evaluators.is_empty() {
            return Err(Error::Config("methods and evaluators must be non-empty".into()));
        }
        if self.desired_class > 1 {
            return Err(Error::Config("desired_class must be 0 or 1".into()));
        }
        if !(self.budget_seconds > 0.0) {
            return Err(Error::Config("budget_seconds must be positive".into()));
        }
        if self.lof_k == 0 {
            return Err(Error::Config("lof_k must be positive".into()));
        }
        for e in &self.evaluators {
            e.validate()?;
        }
        self.model.validate()?;
        self.continuous.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluators::EnsembleKind;

    pub(crate) fn minimal() -> ExperimentConfig {
        ExperimentConfig::from_json(
            r#"{
                "data": {"kind": "synthetic_credit", "rows": 120, "seed": 1},
                "epsilon_grid": [0.05, 0.1],
                "epsilon_targets": [0.05],
                "methods": ["data-supported"],
                "evaluators": [{"kind": "retrain", "size": 2}]
            }"#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let c = minimal();
        assert_eq!(c.version, CONFIG_VERSION);
        assert!(c.balance);
        assert_eq!(c.lof_k, 20);
        assert_eq!(c.evaluators[0].kind, EnsembleKind::Retrain);
        assert_eq!(c.evaluators[0].awp_max_iter, 500);
    }

    #[test]
    fn hash_tracks_content() {
        let a = minimal();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.epsilon_grid.push(0.2);
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn rejects_bad_grids() {
        let mut c = minimal();
        c.epsilon_grid = vec![0.1, 0.05];
        assert!(c.validate().is_err());
        c.epsilon_grid.clear();
        assert!(c.validate().is_err());
        let mut c = minimal();
        c.version = 9;
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_method_is_rejected() {
        let text = r#"{"data": {"kind": "synthetic_credit", "rows": 10, "seed": 1},
            "epsilon_grid": [0.1], "epsilon_targets": [0.1],
            "methods": ["teleport"], "evaluators": [{"kind": "awp", "size": 1}]}"#;
        assert!(ExperimentConfig::from_json(text).is_err());
    }
}
