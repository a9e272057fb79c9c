//! Small numerically stable scalar helpers shared by the models and generators.

use nalgebra::{DMatrix, DVector};

/// Logistic sigmoid, evaluated without overflow for large |s|.
pub fn sigmoid(s: f64) -> f64 {
    if s >= 0.0 {
        1.0 / (1.0 + (-s).exp())
    } else {
        let e = s.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(s))`.
pub fn softplus(s: f64) -> f64 {
    if s > 0.0 {
        s + (-s).exp().ln_1p()
    } else {
        s.exp().ln_1p()
    }
}

/// Binary cross-entropy of a raw logit against label `y ∈ {0, 1}`.
///
/// `-[y log σ(s) + (1-y) log(1-σ(s))] = softplus(s) - y s`, which stays finite
/// for saturated logits.
pub fn bce_logit(s: f64, y: f64) -> f64 {
    softplus(s) - y * s
}

/// Derivative of [`bce_logit`] with respect to the logit.
pub fn bce_logit_grad(s: f64, y: f64) -> f64 {
    sigmoid(s) - y
}

pub fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub(crate) mod serde_dvector {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        Ok(DVector::from_vec(v))
    }
}

/// Matrices travel as a list of rows.
pub(crate) mod serde_dmatrix {
    use nalgebra::DMatrix;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::matrix_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::matrix_from_rows(&rows).map_err(D::Error::custom)
    }
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_is_stable_at_extremes() {
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0 && softplus(-800.0) < 1e-300);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_matches_naive_form_in_safe_range() {
        for &s in &[-3.0f64, -0.5, 0.0, 0.7, 4.0] {
            for &y in &[0.0f64, 1.0] {
                let p = 1.0 / (1.0 + (-s).exp());
                let naive = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
                assert!((bce_logit(s, y) - naive).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigmoid_symmetry() {
        for &s in &[-50.0, -1.0, 0.0, 2.5, 700.0] {
            assert!((sigmoid(s) + sigmoid(-s) - 1.0).abs() < 1e-15);
        }
    }
}
