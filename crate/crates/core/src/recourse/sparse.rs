use nalgebra::DVector;

use super::constraints::RecourseConstraints;
use super::continuous::{descend, ContinuousConfig};
use super::target::RobustTarget;
use super::{Counterfactual, Source};
use crate::error::{Error, Result};

/// Free features ordered by accumulated loss-gradient magnitude over a full
/// unrestricted run, largest first, ties by index. Empty if `x0` is already
/// certified.
pub fn feature_ranking(
    target: &dyn RobustTarget,
    x0: &DVector<f64>,
    cfg: &ContinuousConfig,
    cons: &RecourseConstraints,
) -> Result<Vec<usize>> {
    let bounds = cons.bind(x0)?;
    let mut acc = DVector::zeros(x0.len());
    let run = descend(target, x0, cfg, &bounds, |g| acc += g.abs())?;
    if run.steps == 0 {
        return Ok(Vec::new());
    }
    let mut free: Vec<usize> = (0..x0.len()).filter(|&j| !bounds.fixed(j)).collect();
    free.sort_by(|&a, &b| acc[b].total_cmp(&acc[a]).then(a.cmp(&b)));
    Ok(free)
}

/// Grow the set of changeable features in ranking order until a certified
/// counterfactual exists. Features outside the set keep their `x0` values.
pub fn generate_sparse(
    target: &dyn RobustTarget,
    x0: &DVector<f64>,
    cfg: &ContinuousConfig,
    cons: &RecourseConstraints,
) -> Result<Counterfactual> {
    let bounds = cons.bind(x0)?;
    if target.certified(x0)? {
        return Counterfactual::assess(target, x0, x0.clone(), &cons.specs, 0, Source::Sparse);
    }
    let ranking = feature_ranking(target, x0, cfg, cons)?;
    let mut active = vec![false; x0.len()];
    let mut best = target.robust_value(x0)?;
    for &j in &ranking {
        active[j] = true;
        let b = bounds.restrict(&active, x0);
        let run = descend(target, x0, cfg, &b, |_| {})?;
        best = best.max(run.best_robust);
        if run.certified {
            return Counterfactual::assess(target, x0, run.x, &cons.specs, run.steps, Source::Sparse);
        }
    }
    Err(Error::NoRobustCandidate { max_robust_logit: best })
}
