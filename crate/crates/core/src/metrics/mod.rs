//! Scores for a batch of counterfactuals: validity under the base model,
//! robustness across an evaluator ensemble, proximity and plausibility.
//!
//! A missing counterfactual (no result, or a best-effort iterate that never
//! reached its certificate) counts as neither valid nor robust and is left
//! out of the proximity and LOF means.

pub mod distance;
pub mod lof;

use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSpec;
use crate::error::{Error, Result};
use crate::evaluators::ModelEnsemble;
use crate::models::Model;
use crate::recourse::Counterfactual;

pub use lof::{LofModel, DEFAULT_K};

/// Fraction of counterfactuals the model labels `c`.
pub fn validity(model: &Model, ces: &[Option<DVector<f64>>], c: u8) -> Result<f64> {
    if ces.is_empty() {
        return Err(Error::Empty("no counterfactuals to score".into()));
    }
    let hits = ces
        .par_iter()
        .map(|ce| match ce {
            Some(x) => Ok(usize::from(model.predict(x)? == c)),
            None => Ok(0),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / ces.len() as f64)
}

/// Whether every member labels `x` as `c`.
pub fn unanimous(members: &[Model], x: &DVector<f64>, c: u8) -> Result<bool> {
    for m in members {
        if m.predict(x)? != c {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Fraction of counterfactuals labelled `c` by every ensemble member.
pub fn robustness(members: &[Model], ces: &[Option<DVector<f64>>], c: u8) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::EmptyEnsemble("cannot score robustness".into()));
    }
    if ces.is_empty() {
        return Err(Error::Empty("no counterfactuals to score".into()));
    }
    let hits = ces
        .par_iter()
        .map(|ce| match ce {
            Some(x) => Ok(usize::from(unanimous(members, x, c)?)),
            None => Ok(0),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / ces.len() as f64)
}

/// The point a counterfactual contributes to scoring, if any.
pub fn scored_point(ce: Option<&Counterfactual>) -> Option<DVector<f64>> {
    ce.filter(|c| c.certified).map(|c| c.x_c.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub instance: usize,
    pub found: bool,
    pub valid: bool,
    pub robust: bool,
    pub l2: Option<f64>,
    pub l0: Option<usize>,
    pub l_mix: Option<f64>,
    pub lof: Option<f64>,
    pub robust_logit: Option<f64>,
    pub seconds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub found: usize,
    pub validity: f64,
    pub robustness: f64,
    pub mean_l2: Option<f64>,
    pub mean_l0: Option<f64>,
    pub mean_l_mix: Option<f64>,
    pub mean_lof: Option<f64>,
    pub per_instance: Vec<InstanceRecord>,
}

fn mean<I: Iterator<Item = f64>>(it: I) -> Option<f64> {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Inputs to [`MetricReport::score`].
pub struct ScoreInput<'a> {
    pub base: &'a Model,
    pub ensemble: &'a ModelEnsemble,
    pub x0: &'a [DVector<f64>],
    pub ces: &'a [Option<Counterfactual>],
    pub target: u8,
    pub specs: &'a [FeatureSpec],
    pub lof: Option<&'a LofModel>,
    /// Wall-clock generation time per instance.
    pub seconds: Option<&'a [f64]>,
}

impl MetricReport {
    pub fn score(inp: &ScoreInput<'_>) -> Result<Self> {
        let n = inp.ces.len();
        if n == 0 {
            return Err(Error::Empty("no counterfactuals to score".into()));
        }
        if inp.x0.len() != n {
            return Err(Error::dim(n, inp.x0.len()));
        }
        if inp.ensemble.is_empty() {
            return Err(Error::EmptyEnsemble("cannot score robustness".into()));
        }
        let per_instance = (0..n)
            .into_par_iter()
            .map(|i| {
                let seconds = inp.seconds.and_then(|s| s.get(i).copied());
                let Some(x) = scored_point(inp.ces[i].as_ref()) else {
                    return Ok(InstanceRecord {
                        instance: i,
                        found: false,
                        valid: false,
                        robust: false,
                        l2: None,
                        l0: None,
                        l_mix: None,
                        lof: None,
                        robust_logit: None,
                        seconds,
                    });
                };
                let ce = inp.ces[i].as_ref().expect("scored point implies a counterfactual");
                let x0 = &inp.x0[i];
                Ok(InstanceRecord {
                    instance: i,
                    found: true,
                    valid: inp.base.predict(&x)? == inp.target,
                    robust: unanimous(&inp.ensemble.members, &x, inp.target)?,
                    l2: Some(distance::l2(&x, x0)),
                    l0: Some(distance::l0(&x, x0)),
                    l_mix: Some(distance::l_mix(&x, x0, inp.specs)?),
                    lof: inp.lof.map(|m| m.score(&x)).transpose()?,
                    robust_logit: Some(ce.robust_logit),
                    seconds,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let found: Vec<&InstanceRecord> = per_instance.iter().filter(|r| r.found).collect();
        Ok(MetricReport {
            n,
            found: found.len(),
            validity: per_instance.iter().filter(|r| r.valid).count() as f64 / n as f64,
            robustness: per_instance.iter().filter(|r| r.robust).count() as f64 / n as f64,
            mean_l2: mean(found.iter().filter_map(|r| r.l2)),
            mean_l0: mean(found.iter().filter_map(|r| r.l0.map(|v| v as f64))),
            mean_l_mix: mean(found.iter().filter_map(|r| r.l_mix)),
            mean_lof: mean(found.iter().filter_map(|r| r.lof)),
            per_instance,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One CSV row per instance.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.per_instance {
            out.serialize(r)?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluators::{EnsembleKind, EnsembleSpec};
    use crate::models::LinearModel;
    use crate::recourse::Source;

    fn line(w: f64, b: f64) -> Model {
        Model::Linear(LinearModel::new(DVector::from_column_slice(&[w, b]), 0.0, 0.0))
    }

    fn pts(v: &[f64]) -> Vec<Option<DVector<f64>>> {
        v.iter().map(|&x| Some(DVector::from_element(1, x))).collect()
    }

    #[test]
    fn validity_counts() {
        let m = line(1.0, 0.0);
        assert_eq!(validity(&m, &pts(&[1.0, 2.0]), 1).unwrap(), 1.0);
        assert_eq!(validity(&m, &pts(&[-1.0, -2.0]), 1).unwrap(), 0.0);
        assert_eq!(validity(&m, &pts(&[1.0, 2.0, 3.0, -1.0]), 1).unwrap(), 0.75);
        let mut with_gap = pts(&[1.0]);
        with_gap.push(None);
        assert_eq!(validity(&m, &with_gap, 1).unwrap(), 0.5);
        assert!(validity(&m, &[], 1).is_err());
    }

    #[test]
    fn robustness_counts() {
        let base = line(1.0, 0.0);
        let ces = pts(&[0.5, 2.0]);
        assert_eq!(
            robustness(std::slice::from_ref(&base), &ces, 1).unwrap(),
            validity(&base, &ces, 1).unwrap()
        );
        let members = vec![base.clone(), line(1.0, -1.0)];
        assert_eq!(robustness(&members, &ces, 1).unwrap(), 0.5);
        assert!(robustness(&[], &ces, 1).is_err());
    }

    #[test]
    fn report_excludes_flagged() {
        let base = line(1.0, 0.0);
        let ens = ModelEnsemble {
            spec: EnsembleSpec::new(EnsembleKind::Retrain, 1, 0.0, 0),
            base_objective: None,
            members: vec![base.clone()],
            member_objectives: vec![None],
            shortfall: 0,
            variance: None,
            stalled: 0,
        };
        let ce = |x: f64, certified: bool| Counterfactual {
            x_c: DVector::from_element(1, x),
            robust_logit: x,
            baseline_logit: x,
            worst_theta: DVector::zeros(2),
            l2: 0.0,
            l0: 0,
            l_mix: 0.0,
            steps_used: 0,
            source: Source::Continuous,
            certified,
            row_index: None,
        };
        let x0 = vec![DVector::from_element(1, -1.0); 3];
        let ces = vec![Some(ce(2.0, true)), Some(ce(0.5, false)), None];
        let specs = vec![FeatureSpec::continuous("a")];
        let rep = MetricReport::score(&ScoreInput {
            base: &base,
            ensemble: &ens,
            x0: &x0,
            ces: &ces,
            target: 1,
            specs: &specs,
            lof: None,
            seconds: None,
        })
        .unwrap();
        assert_eq!(rep.found, 1);
        assert!((rep.validity - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(rep.robustness, rep.validity);
        assert_eq!(rep.mean_l2, Some(3.0));
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("instance,found,valid,robust,l2"));
    }
}
