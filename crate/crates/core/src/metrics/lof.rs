//! Local outlier factor against a fixed reference set.
//!
//! Neighbourhoods hold exactly `k` points, ties broken by row index. A
//! reference point never counts itself; a query point skips reference rows
//! that are exact copies of it. Local reachability density is
//! `1 / (mean reach distance + 1e-10)` so duplicate clusters stay finite.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{check_dim, Error, Result};
use crate::metrics::distance::squared_l2;

pub const DEFAULT_K: usize = 20;

const DENSITY_FLOOR: f64 = 1e-10;

/// `k` for a reference set of `n` rows: `min(k, n - 1)`.
pub fn effective_k(k: usize, n: usize) -> usize {
    k.min(n.saturating_sub(1))
}

#[derive(Debug, Clone)]
pub struct LofModel {
    reference: DMatrix<f64>,
    k: usize,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

fn row(m: &DMatrix<f64>, i: usize) -> DVector<f64> {
    m.row(i).transpose()
}

/// The `k` nearest rows of `s` to `x` among those `keep` admits, as
/// `(distance, index)` sorted by distance then index.
fn knn(s: &DMatrix<f64>, x: &DVector<f64>, k: usize, keep: impl Fn(usize, f64) -> bool) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = (0..s.nrows())
        .filter_map(|j| {
            let sq = squared_l2(&row(s, j), x);
            keep(j, sq).then(|| (sq.sqrt(), j))
        })
        .collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if d.len() > k {
        d.select_nth_unstable_by(k - 1, by);
        d.truncate(k);
    }
    d.sort_by(by);
    d
}

impl LofModel {
    /// Precompute k-distances and densities for every reference row.
    pub fn fit(reference: DMatrix<f64>, k: usize) -> Result<Self> {
        let n = reference.nrows();
        if k == 0 {
            return Err(Error::Config("LOF needs k ≥ 1".into()));
        }
        if n <= k {
            return Err(Error::InvalidInput(format!(
                "LOF needs more than k = {k} reference rows, got {n}"
            )));
        }
        let hoods: Vec<Vec<(f64, usize)>> = (0..n)
            .into_par_iter()
            .map(|i| knn(&reference, &row(&reference, i), k, |j, _| j != i))
            .collect();
        let k_distance: Vec<f64> = hoods.iter().map(|h| h[k - 1].0).collect();
        let lrd = hoods.iter().map(|h| density(h, &k_distance)).collect();
        Ok(LofModel {
            reference,
            k,
            k_distance,
            lrd,
        })
    }

    /// Fit with `k` capped at `|S| − 1`.
    pub fn fit_capped(reference: DMatrix<f64>, k: usize) -> Result<Self> {
        let k = effective_k(k, reference.nrows());
        Self::fit(reference, k)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.reference.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// LOF of reference row `i` within the reference set.
    pub fn reference_score(&self, i: usize) -> f64 {
        let h = knn(&self.reference, &row(&self.reference, i), self.k, |j, _| j != i);
        self.ratio(&h, self.lrd[i])
    }

    /// LOF of an arbitrary point.
    pub fn score(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim(self.reference.ncols(), x.len())?;
        let h = knn(&self.reference, x, self.k, |_, sq| sq != 0.0);
        if h.len() < self.k {
            return Err(Error::InvalidInput(format!(
                "only {} reference rows differ from the query; LOF needs k = {}",
                h.len(),
                self.k
            )));
        }
        Ok(self.ratio(&h, density(&h, &self.k_distance)))
    }

    fn ratio(&self, hood: &[(f64, usize)], own: f64) -> f64 {
        hood.iter().map(|&(_, j)| self.lrd[j] / own).sum::<f64>() / hood.len() as f64
    }
}

fn density(hood: &[(f64, usize)], k_distance: &[f64]) -> f64 {
    let reach: f64 = hood.iter().map(|&(d, j)| d.max(k_distance[j])).sum::<f64>() / hood.len() as f64;
    1.0 / (reach + DENSITY_FLOOR)
}

/// One-off LOF of `x` against `s`.
pub fn lof(s: &DMatrix<f64>, x: &DVector<f64>, k: usize) -> Result<f64> {
    LofModel::fit(s.clone(), k)?.score(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight from the definition, recomputing everything per call.
    fn naive(s: &DMatrix<f64>, x: &DVector<f64>, k: usize, skip_self: Option<usize>) -> f64 {
        let n = s.nrows();
        let dist = |a: &DVector<f64>, b: &DVector<f64>| (a - b).norm();
        let hood = |p: &DVector<f64>, me: Option<usize>| -> Vec<usize> {
            let mut c: Vec<usize> = (0..n)
                .filter(|&j| match me {
                    Some(i) => j != i,
                    None => dist(p, &s.row(j).transpose()) != 0.0,
                })
                .collect();
            c.sort_by(|&a, &b| {
                dist(p, &s.row(a).transpose())
                    .partial_cmp(&dist(p, &s.row(b).transpose()))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            c.truncate(k);
            c
        };
        let kdist = |j: usize| -> f64 {
            let pj = s.row(j).transpose();
            let h = hood(&pj, Some(j));
            dist(&pj, &s.row(h[k - 1]).transpose())
        };
        let lrd = |p: &DVector<f64>, me: Option<usize>| -> f64 {
            let h = hood(p, me);
            let m: f64 = h
                .iter()
                .map(|&j| dist(p, &s.row(j).transpose()).max(kdist(j)))
                .sum::<f64>()
                / k as f64;
            1.0 / (m + 1e-10)
        };
        let h = hood(x, skip_self);
        let own = lrd(x, skip_self);
        h.iter()
            .map(|&j| lrd(&s.row(j).transpose(), Some(j)) / own)
            .sum::<f64>()
            / k as f64
    }

    #[test]
    fn far_query_on_a_line() {
        let s = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let x = DVector::from_element(1, 13.0);
        let got = lof(&s, &x, 2).unwrap();
        assert!(got > 1.0);
        assert!((got - naive(&s, &x, 2, None)).abs() < 1e-9);
    }

    #[test]
    fn grid_interior_is_inlier() {
        let mut pts = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                pts.push(i as f64);
                pts.push(j as f64);
            }
        }
        let s = DMatrix::from_row_slice(100, 2, &pts);
        let m = LofModel::fit(s.clone(), 4).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                if (2..8).contains(&i) && (2..8).contains(&j) {
                    let idx = i * 10 + j;
                    let v = m.reference_score(idx);
                    assert!((v - 1.0).abs() < 0.05, "{v}");
                    assert!((v - naive(&s, &s.row(idx).transpose(), 4, Some(idx))).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn duplicate_in_uniform_cluster() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<f64> = (0..400).map(|_| rng.random_range(0.0..1.0)).collect();
        let s = DMatrix::from_row_slice(200, 2, &pts);
        let m = LofModel::fit(s.clone(), 20).unwrap();
        // a reference row near the middle
        let mid = (0..200)
            .min_by(|&a, &b| {
                let da = (s[(a, 0)] - 0.5).hypot(s[(a, 1)] - 0.5);
                let db = (s[(b, 0)] - 0.5).hypot(s[(b, 1)] - 0.5);
                da.total_cmp(&db)
            })
            .unwrap();
        let v = m.score(&s.row(mid).transpose()).unwrap();
        assert!((0.9..=1.1).contains(&v), "{v}");
    }

    #[test]
    fn matches_naive_on_random_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..5 {
            let n = 30 + trial * 7;
            let pts: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let s = DMatrix::from_row_slice(n, 3, &pts);
            let k = 1 + trial;
            let m = LofModel::fit(s.clone(), k).unwrap();
            for _ in 0..5 {
                let x = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
                assert!((m.score(&x).unwrap() - naive(&s, &x, k, None)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn too_few_rows() {
        let s = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!(LofModel::fit(s.clone(), 2).is_err());
        assert_eq!(LofModel::fit_capped(s, 20).unwrap().k(), 1);
    }
}
