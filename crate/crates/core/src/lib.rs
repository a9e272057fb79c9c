//! Robust counterfactual recourse under model multiplicity.
//!
//! The set of near-optimal models around a trained classifier is approximated
//! by an ellipsoid in head-parameter space. Worst-case logits over that
//! ellipsoid have a closed form, which gives both a certificate and a
//! differentiable objective for counterfactual search.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod evaluators;
pub mod metrics;
pub mod models;
pub mod numeric;
pub mod pipeline;
pub mod rashomon;
pub mod recourse;

pub use data::{Dataset, FeatureKind, FeatureSpec, Schema};
pub use error::{Error, Result};
pub use evaluators::{EnsembleKind, EnsembleSpec, ModelEnsemble};
pub use metrics::{LofModel, MetricReport};
pub use models::{LinearModel, Model, ModelFile, TrainConfig};
pub use rashomon::{EpsilonSpec, RashomonEllipsoid, WorstCase};
