use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::constraints::{Bounds, RecourseConstraints};
use super::kdtree::KdTree;
use super::target::RobustTarget;
use super::{Counterfactual, Source};
use crate::error::{check_dim, Error, Result};
use crate::metrics::distance::{l_mix, CHANGE_TOL};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchDistance {
    #[default]
    L2,
    LMix,
    /// `C‖Δ‖₀ + ‖Δ‖₁` with `C` the constraints' sparsity weight.
    Sparsity,
}

/// Training rows whose worst-case score reaches the threshold, indexed for
/// nearest-neighbour queries.
#[derive(Debug, Clone)]
pub struct CandidateIndex {
    x: DMatrix<f64>,
    robust: Vec<f64>,
    threshold: f64,
    candidates: Vec<usize>,
    cand_x: DMatrix<f64>,
    tree: KdTree,
}

impl CandidateIndex {
    pub fn build(target: &dyn RobustTarget, x: &DMatrix<f64>) -> Result<Self> {
        check_dim(target.input_dim(), x.ncols())?;
        let robust = (0..x.nrows())
            .map(|i| target.robust_value(&x.row(i).transpose()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_scores(x.clone(), robust, target.threshold()))
    }

    /// Index from precomputed worst-case scores, one per row of `x`.
    pub fn from_scores(x: DMatrix<f64>, robust: Vec<f64>, threshold: f64) -> Self {
        let candidates: Vec<usize> = (0..x.nrows()).filter(|&i| robust[i] >= threshold).collect();
        let cand_x = x.select_rows(candidates.iter());
        let tree = KdTree::build(&cand_x);
        CandidateIndex {
            x,
            robust,
            threshold,
            candidates,
            cand_x,
            tree,
        }
    }

    /// Row indices passing the certificate, ascending.
    pub fn candidates(&self) -> &[usize] {
        &self.candidates
    }

    pub fn robust_values(&self) -> &[f64] {
        &self.robust
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Nearest admissible certified row and its distance (squared for `L2`).
    pub fn nearest(
        &self,
        x0: &DVector<f64>,
        cons: &RecourseConstraints,
        distance: SearchDistance,
    ) -> Result<(usize, f64)> {
        check_dim(self.x.ncols(), x0.len())?;
        let bounds = cons.bind(x0)?;
        let pts = &self.cand_x;
        let d = pts.ncols();
        let admit = |i: usize| row_admitted(&bounds, pts, i);
        let found = match distance {
            SearchDistance::L2 => {
                let dist = |i: usize| {
                    (0..d)
                        .map(|j| (pts[(i, j)] - x0[j]) * (pts[(i, j)] - x0[j]))
                        .sum::<f64>()
                };
                let bound = |lo: &[f64], hi: &[f64]| {
                    (0..d)
                        .map(|j| {
                            let g = gap(x0[j], lo[j], hi[j]);
                            g * g
                        })
                        .sum::<f64>()
                };
                self.tree.nearest(&bound, &dist, &admit)
            }
            SearchDistance::Sparsity => {
                let c = cons.sparsity_weight;
                let dist = |i: usize| {
                    (0..d)
                        .map(|j| {
                            let a = (pts[(i, j)] - x0[j]).abs();
                            if a > CHANGE_TOL {
                                c + a
                            } else {
                                a
                            }
                        })
                        .sum::<f64>()
                };
                let bound = |lo: &[f64], hi: &[f64]| {
                    (0..d)
                        .map(|j| {
                            let g = gap(x0[j], lo[j], hi[j]);
                            if g > CHANGE_TOL {
                                c + g
                            } else {
                                g
                            }
                        })
                        .sum::<f64>()
                };
                self.tree.nearest(&bound, &dist, &admit)
            }
            SearchDistance::LMix => {
                let mut best: Option<(usize, f64)> = None;
                for i in 0..pts.nrows() {
                    if !admit(i) {
                        continue;
                    }
                    let dm = l_mix(&pts.row(i).transpose(), x0, &cons.specs)?;
                    if best.is_none_or(|(_, bd)| dm < bd) {
                        best = Some((i, dm));
                    }
                }
                best
            }
        };
        match found {
            Some((i, dist)) => Ok((self.candidates[i], dist)),
            None => {
                let admitted: Vec<f64> = (0..self.x.nrows())
                    .filter(|&i| row_admitted(&bounds, &self.x, i))
                    .map(|i| self.robust[i])
                    .collect();
                let pool = if admitted.is_empty() { &self.robust } else { &admitted };
                Err(Error::NoRobustCandidate {
                    max_robust_logit: pool.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                })
            }
        }
    }

    pub fn counterfactual(
        &self,
        target: &dyn RobustTarget,
        x0: &DVector<f64>,
        cons: &RecourseConstraints,
        distance: SearchDistance,
    ) -> Result<Counterfactual> {
        let (row, _) = self.nearest(x0, cons, distance)?;
        let x_c = self.x.row(row).transpose();
        let mut cf = Counterfactual::assess(target, x0, x_c, &cons.specs, 0, Source::DataSupported)?;
        cf.row_index = Some(row);
        Ok(cf)
    }
}

fn gap(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        lo - v
    } else if v > hi {
        v - hi
    } else {
        0.0
    }
}

fn row_admitted(bounds: &Bounds, x: &DMatrix<f64>, i: usize) -> bool {
    (0..x.ncols()).all(|j| x[(i, j)] >= bounds.lo[j] && x[(i, j)] <= bounds.hi[j])
}

/// Nearest training row that is certified and satisfies the constraints.
/// Ties go to the lowest row index.
pub fn generate_data_supported(
    target: &dyn RobustTarget,
    x: &DMatrix<f64>,
    x0: &DVector<f64>,
    cons: &RecourseConstraints,
    distance: SearchDistance,
) -> Result<Counterfactual> {
    CandidateIndex::build(target, x)?.counterfactual(target, x0, cons, distance)
}
