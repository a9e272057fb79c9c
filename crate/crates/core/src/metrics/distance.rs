use nalgebra::DVector;

use crate::data::{FeatureKind, FeatureSpec};
use crate::error::{check_dim, Result};

/// Coordinates closer than this count as unchanged.
pub const CHANGE_TOL: f64 = 1e-9;

pub fn l2(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    squared_l2(a, b).sqrt()
}

/// Sum of squared differences, accumulated in index order.
pub fn squared_l2(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn l0(a: &DVector<f64>, b: &DVector<f64>) -> usize {
    a.iter()
        .zip(b.iter())
        .filter(|(x, y)| (*x - *y).abs() > CHANGE_TOL)
        .count()
}

/// `C · ‖a−b‖₀ + ‖a−b‖₁`, the search distance that favours few changed features.
pub fn sparsity_distance(a: &DVector<f64>, b: &DVector<f64>, c: f64) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| {
            let d = (x - y).abs();
            if d > CHANGE_TOL {
                c + d
            } else {
                d
            }
        })
        .sum()
}

/// Gower-style mixed distance: squared continuous differences plus a weighted
/// indicator per categorical group (binary columns count as their own group)
/// whose value changed.
pub fn l_mix(a: &DVector<f64>, b: &DVector<f64>, specs: &[FeatureSpec]) -> Result<f64> {
    check_dim(specs.len(), a.len())?;
    check_dim(specs.len(), b.len())?;
    let mut total = 0.0;
    let mut group_changed: Vec<Option<(bool, f64)>> = Vec::new();
    for (j, s) in specs.iter().enumerate() {
        let differs = (a[j] - b[j]).abs() > CHANGE_TOL;
        match s.kind {
            FeatureKind::Continuous => total += (a[j] - b[j]).powi(2),
            FeatureKind::Binary => {
                if differs {
                    total += s.cost();
                }
            }
            FeatureKind::Categorical { group, .. } => {
                if group_changed.len() <= group {
                    group_changed.resize(group + 1, None);
                }
                let e = group_changed[group].get_or_insert((false, s.cost()));
                e.0 |= differs;
            }
        }
    }
    total += group_changed
        .iter()
        .flatten()
        .filter(|(changed, _)| *changed)
        .map(|(_, cost)| cost)
        .sum::<f64>();
    Ok(total.sqrt())
}
