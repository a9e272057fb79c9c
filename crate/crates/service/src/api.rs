//! Request and response bodies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use recourse_core::data::{FeatureSpec, LoadReport, Scaler, Schema};
use recourse_core::models::{ModelFile, TrainConfig};
use recourse_core::pipeline::Method;
use recourse_core::recourse::{ContinuousConfig, Counterfactual, FeatureConstraint, MixedConfig, SearchDistance};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSourceBody {
    Csv {
        text: String,
        schema: Schema,
    },
    SyntheticCredit {
        rows: usize,
        seed: u64,
    },
    /// Continuous features given inline.
    Rows {
        rows: Vec<Vec<f64>>,
        labels: Vec<u8>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRequest {
    pub source: DataSourceBody,
    /// Under-sample the majority class first.
    #[serde(default)]
    pub balance: bool,
    #[serde(default)]
    pub balance_seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetResponse {
    pub dataset_id: String,
    pub rows: usize,
    pub features: usize,
    pub class_counts: [usize; 2],
    pub load: LoadReport,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    #[serde(default)]
    pub config: TrainConfig,
    /// Use this model instead of training one.
    #[serde(default)]
    pub model: Option<ModelFile>,
    /// Refit an MLP's output layer on its frozen embedding.
    #[serde(default)]
    pub refit_head: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainResponse {
    pub model_id: String,
    pub kind: String,
    pub objective: f64,
    pub iterations: Option<usize>,
    pub grad_norm: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipsoidRequest {
    pub epsilon: Option<f64>,
    /// Fraction of the model's training objective.
    pub epsilon_relative: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipsoidResponse {
    pub ellipsoid_id: String,
    pub epsilon: f64,
    pub alpha: f64,
    pub dim: usize,
    pub base_objective: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Units {
    /// Standardized, as the model sees them.
    #[default]
    Model,
    /// Original CSV units.
    Raw,
}

/// Constraint draft as edited by a client. Features are addressed by name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintDraft {
    #[serde(default)]
    pub features: BTreeMap<String, FeatureConstraint>,
    #[serde(default)]
    pub sparsity_weight: f64,
    /// Start from the schema's immutability flags and bounds.
    #[serde(default)]
    pub use_schema: bool,
    /// Units of `lower`/`upper`.
    #[serde(default)]
    pub units: Units,
}

/// The point to explain: explicit coordinates or a dataset row.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointRef {
    #[serde(default)]
    pub x: Option<Vec<f64>>,
    #[serde(default)]
    pub row: Option<usize>,
    #[serde(default)]
    pub units: Units,
}

fn default_method() -> Method {
    Method::Continuous
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecourseRequest {
    pub x0: PointRef,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub distance: SearchDistance,
    /// Falls back to the session's stored draft.
    #[serde(default)]
    pub constraints: Option<ConstraintDraft>,
    /// Absolute ε overriding the session ellipsoid's.
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Threshold; the model's own by default.
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub continuous: ContinuousConfig,
    #[serde(default)]
    pub mixed: MixedConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Certified,
    NotCertified,
    Error,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecourseResponse {
    pub status: Status,
    /// `"not_certified"` on best-effort results.
    pub flag: Option<String>,
    pub epsilon: f64,
    pub ellipsoid_id: String,
    pub units: Units,
    /// Counterfactual in the request's units.
    pub x_c: Vec<f64>,
    /// Details in model units.
    pub counterfactual: Counterfactual,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyRequest {
    pub x: PointRef,
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub t: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertifyResponse {
    pub robust: bool,
    pub robust_logit: f64,
    pub nominal_logit: f64,
    pub threshold: f64,
    pub epsilon: f64,
    pub ellipsoid_id: String,
    /// The certified point in model units.
    pub x_model: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRequest {
    pub x0: PointRef,
    pub epsilons: Vec<f64>,
    /// Read `epsilons` as fractions of the training objective.
    #[serde(default)]
    pub relative: bool,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default)]
    pub distance: SearchDistance,
    #[serde(default)]
    pub constraints: Option<ConstraintDraft>,
    #[serde(default)]
    pub t: Option<f64>,
    #[serde(default)]
    pub continuous: ContinuousConfig,
    #[serde(default)]
    pub mixed: MixedConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepPoint {
    pub epsilon: f64,
    pub status: Status,
    pub l2: Option<f64>,
    pub robust_logit: Option<f64>,
    pub x_c: Option<Vec<f64>>,
    pub error: Option<crate::error::ErrorBody>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResponse {
    pub units: Units,
    pub results: Vec<SweepPoint>,
    /// Adjacent pairs whose ℓ2 decreased on a linear model.
    pub anomalies: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model_id: String,
    pub kind: String,
    pub threshold: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipsoidSummary {
    pub ellipsoid_id: String,
    pub epsilon: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaResponse {
    pub dataset_id: String,
    pub features: Vec<FeatureSpec>,
    pub scaler: Option<Scaler>,
    pub model: Option<ModelSummary>,
    pub ellipsoid: Option<EllipsoidSummary>,
    pub draft: Option<ConstraintDraft>,
    /// Accepted keys of a per-feature constraint.
    pub constraint_fields: Vec<String>,
    pub directions: Vec<String>,
    pub methods: Vec<String>,
}
