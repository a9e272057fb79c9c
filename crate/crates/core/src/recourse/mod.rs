//! Robust counterfactual generation.
//!
//! Every generator works against a [`RobustTarget`], a worst-case score that
//! must reach a threshold. The binary classifier with its ellipsoid is the
//! usual target; the multiclass margin is another.

mod constraints;
mod continuous;
mod data_supported;
mod kdtree;
mod mixed;
mod multiclass;
mod sparse;
mod target;

pub use constraints::{Bounds, Direction, FeatureConstraint, RecourseConstraints};
pub use continuous::{generate_continuous, generate_masked, generation_loss, ContinuousConfig};
pub use data_supported::{generate_data_supported, CandidateIndex, SearchDistance};
pub use mixed::{generate_mixed, gumbel_softmax, MixedConfig};
pub use multiclass::{MarginGeometry, MulticlassHeads, MulticlassTarget};
pub use sparse::{feature_ranking, generate_sparse};
pub use target::{BinaryTarget, Polarity, RobustTarget, TargetReport};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSpec;
use crate::error::Result;
use crate::metrics::distance::{l0, l2, l_mix};
use crate::numeric::serde_dvector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    DataSupported,
    Continuous,
    Sparse,
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterfactual {
    #[serde(with = "serde_dvector")]
    pub x_c: DVector<f64>,
    pub robust_logit: f64,
    pub baseline_logit: f64,
    #[serde(with = "serde_dvector")]
    pub worst_theta: DVector<f64>,
    pub l2: f64,
    pub l0: usize,
    pub l_mix: f64,
    pub steps_used: usize,
    pub source: Source,
    /// Whether the worst-case score reaches the threshold.
    pub certified: bool,
    /// Training row the counterfactual was taken from, for data-supported search.
    #[serde(default)]
    pub row_index: Option<usize>,
}

impl Counterfactual {
    pub fn assess(
        target: &dyn RobustTarget,
        x0: &DVector<f64>,
        x_c: DVector<f64>,
        specs: &[FeatureSpec],
        steps_used: usize,
        source: Source,
    ) -> Result<Self> {
        let rep = target.report(&x_c)?;
        Ok(Counterfactual {
            robust_logit: rep.robust_logit,
            baseline_logit: rep.baseline_logit,
            worst_theta: rep.worst_theta,
            l2: l2(&x_c, x0),
            l0: l0(&x_c, x0),
            l_mix: l_mix(&x_c, x0, specs)?,
            certified: target.certified(&x_c)?,
            x_c,
            steps_used,
            source,
            row_index: None,
        })
    }
}
