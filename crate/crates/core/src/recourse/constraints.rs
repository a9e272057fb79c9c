use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::data::FeatureSpec;
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    NonDecreasing,
    NonIncreasing,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureConstraint {
    #[serde(default)]
    pub immutable: bool,
    #[serde(default)]
    pub lower: Option<f64>,
    #[serde(default)]
    pub upper: Option<f64>,
    #[serde(default)]
    pub direction: Option<Direction>,
}

/// Actionability restrictions on which features a counterfactual may change.
#[derive(Debug, Clone, PartialEq)]
pub struct RecourseConstraints {
    pub features: Vec<FeatureConstraint>,
    /// `C` in the search distance `C‖Δ‖₀ + ‖Δ‖₁`.
    pub sparsity_weight: f64,
    pub specs: Vec<FeatureSpec>,
}

impl RecourseConstraints {
    /// No actionability restrictions. Binary and one-hot columns stay in [0, 1].
    pub fn free(specs: &[FeatureSpec]) -> Self {
        let features = specs
            .iter()
            .map(|s| {
                if s.is_continuous() {
                    FeatureConstraint::default()
                } else {
                    FeatureConstraint {
                        lower: Some(0.0),
                        upper: Some(1.0),
                        ..FeatureConstraint::default()
                    }
                }
            })
            .collect();
        RecourseConstraints {
            features,
            sparsity_weight: 0.0,
            specs: specs.to_vec(),
        }
    }

    /// Immutability and bounds as declared on the feature specs.
    pub fn from_specs(specs: &[FeatureSpec]) -> Self {
        let mut c = Self::free(specs);
        for (f, s) in c.features.iter_mut().zip(specs) {
            f.immutable = s.immutable;
            f.lower = s.lower_bound.or(f.lower);
            f.upper = s.upper_bound.or(f.upper);
        }
        c
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn lock(mut self, j: usize) -> Self {
        self.features[j].immutable = true;
        self
    }

    pub fn range(mut self, j: usize, lower: Option<f64>, upper: Option<f64>) -> Self {
        self.features[j].lower = lower;
        self.features[j].upper = upper;
        self
    }

    pub fn direction(mut self, j: usize, d: Direction) -> Self {
        self.features[j].direction = Some(d);
        self
    }

    pub fn with_sparsity(mut self, c: f64) -> Self {
        self.sparsity_weight = c;
        self
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.specs.len(), self.features.len())?;
        if !(self.sparsity_weight >= 0.0) {
            return Err(Error::InvalidInput("sparsity weight must be non-negative".into()));
        }
        for (f, s) in self.features.iter().zip(&self.specs) {
            if let (Some(lo), Some(hi)) = (f.lower, f.upper) {
                if lo > hi {
                    return Err(Error::InvalidInput(format!("empty range for `{}`", s.name)));
                }
            }
        }
        Ok(())
    }

    /// Anchor the constraints at `x0`: immutable features collapse to a point
    /// and directions become one-sided ranges.
    pub fn bind(&self, x0: &DVector<f64>) -> Result<Bounds> {
        self.validate()?;
        check_dim(self.dim(), x0.len())?;
        let d = self.dim();
        let mut lo = DVector::from_element(d, f64::NEG_INFINITY);
        let mut hi = DVector::from_element(d, f64::INFINITY);
        for (j, f) in self.features.iter().enumerate() {
            if f.immutable {
                lo[j] = x0[j];
                hi[j] = x0[j];
                continue;
            }
            if let Some(l) = f.lower {
                lo[j] = l;
            }
            if let Some(u) = f.upper {
                hi[j] = u;
            }
            match f.direction {
                Some(Direction::NonDecreasing) => lo[j] = lo[j].max(x0[j]),
                Some(Direction::NonIncreasing) => hi[j] = hi[j].min(x0[j]),
                None => {}
            }
            if lo[j] > hi[j] {
                return Err(Error::InvalidInput(format!(
                    "constraints on `{}` leave no admissible value",
                    self.specs[j].name
                )));
            }
        }
        Ok(Bounds { lo, hi })
    }
}

/// Box constraints anchored at an instance. `lo[j] == hi[j]` marks a fixed
/// coordinate, which projection sets exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl Bounds {
    pub fn unbounded(d: usize) -> Self {
        Bounds {
            lo: DVector::from_element(d, f64::NEG_INFINITY),
            hi: DVector::from_element(d, f64::INFINITY),
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn fixed(&self, j: usize) -> bool {
        self.lo[j] == self.hi[j]
    }

    pub fn project(&self, x: &mut DVector<f64>) {
        for j in 0..x.len() {
            x[j] = if self.fixed(j) {
                self.lo[j]
            } else {
                x[j].clamp(self.lo[j], self.hi[j])
            };
        }
    }

    pub fn projected(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = x.clone();
        self.project(&mut y);
        y
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter().enumerate().all(|(j, &v)| v >= self.lo[j] && v <= self.hi[j])
    }

    /// Fix every coordinate outside `active` at its value in `x0`.
    pub fn restrict(&self, active: &[bool], x0: &DVector<f64>) -> Bounds {
        let mut b = self.clone();
        for (j, &a) in active.iter().enumerate() {
            if !a {
                b.lo[j] = x0[j];
                b.hi[j] = x0[j];
            }
        }
        b
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureKind;

    fn specs() -> Vec<FeatureSpec> {
        vec![
            FeatureSpec::continuous("a"),
            FeatureSpec::continuous("b"),
            FeatureSpec {
                kind: FeatureKind::Binary,
                ..FeatureSpec::continuous("c")
            },
        ]
    }

    #[test]
    fn immutable_features_collapse_to_x0() {
        let x0 = DVector::from_column_slice(&[0.3, -1.0, 1.0]);
        let b = RecourseConstraints::free(&specs()).lock(1).bind(&x0).unwrap();
        assert!(b.fixed(1) && !b.fixed(0));
        let mut x = DVector::from_column_slice(&[5.0, 7.0, 3.0]);
        b.project(&mut x);
        assert_eq!(x[1], -1.0);
        assert_eq!(x[2], 1.0);
        assert_eq!(x[0], 5.0);
    }

    #[test]
    fn directions_become_one_sided_ranges() {
        let x0 = DVector::from_column_slice(&[0.3, -1.0, 0.0]);
        let b = RecourseConstraints::free(&specs())
            .direction(0, Direction::NonDecreasing)
            .direction(1, Direction::NonIncreasing)
            .bind(&x0)
            .unwrap();
        assert_eq!((b.lo[0], b.hi[0]), (0.3, f64::INFINITY));
        assert_eq!((b.lo[1], b.hi[1]), (f64::NEG_INFINITY, -1.0));
    }

    #[test]
    fn contradictory_constraints_are_rejected() {
        let x0 = DVector::from_column_slice(&[0.3, -1.0, 0.0]);
        let c = RecourseConstraints::free(&specs())
            .range(0, Some(1.0), Some(2.0))
            .direction(0, Direction::NonIncreasing);
        assert!(c.bind(&x0).is_err());
        let c = RecourseConstraints::free(&specs()).range(0, Some(2.0), Some(1.0));
        assert!(c.validate().is_err());
    }

    #[test]
    fn spec_bounds_and_immutability_are_inherited() {
        let mut s = specs();
        s[0].lower_bound = Some(-0.5);
        s[1].immutable = true;
        let c = RecourseConstraints::from_specs(&s);
        assert_eq!(c.features[0].lower, Some(-0.5));
        assert!(c.features[1].immutable);
    }
}
