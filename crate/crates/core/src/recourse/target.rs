use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Result};
use crate::models::Model;
use crate::rashomon::RashomonEllipsoid;

/// A certified-score constraint `r(x) ≥ threshold` that generators drive
/// towards. Values and gradients are with respect to the raw input `x`.
pub trait RobustTarget: Sync {
    fn input_dim(&self) -> usize;

    fn threshold(&self) -> f64;

    /// Score under the base model, oriented so larger is better.
    fn nominal(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)>;

    /// Worst-case score over the model set, and a (super)gradient.
    fn robust(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)>;

    fn robust_value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.robust(x)?.0)
    }

    fn certified(&self, x: &DVector<f64>) -> Result<bool> {
        Ok(self.robust_value(x)? >= self.threshold())
    }

    /// True when `r` is concave and smooth in `x`, so the set it certifies is
    /// convex and the exact nearest point can be computed.
    fn concave(&self) -> bool;

    /// Diagnostics in model units.
    fn report(&self, x: &DVector<f64>) -> Result<TargetReport>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetReport {
    pub robust_logit: f64,
    pub baseline_logit: f64,
    pub worst_theta: DVector<f64>,
}

/// Which label the counterfactual should receive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    /// `0 → 1`: every model in the set must score at least `t`.
    #[default]
    ToPositive,
    /// `1 → 0`: every model must score strictly below `t`.
    ToNegative,
}

/// Binary classifier with an ellipsoidal model set around its head.
#[derive(Debug, Clone, Copy)]
pub struct BinaryTarget<'a> {
    pub model: &'a Model,
    pub ell: &'a RashomonEllipsoid,
    pub t: f64,
    pub polarity: Polarity,
}

impl<'a> BinaryTarget<'a> {
    pub fn new(model: &'a Model, ell: &'a RashomonEllipsoid, t: f64) -> Result<Self> {
        check_dim(model.lifted_dim(), ell.dim())?;
        Ok(BinaryTarget {
            model,
            ell,
            t,
            polarity: Polarity::ToPositive,
        })
    }

    pub fn with_polarity(mut self, polarity: Polarity) -> Self {
        self.polarity = polarity;
        self
    }

    fn sign(&self) -> f64 {
        match self.polarity {
            Polarity::ToPositive => 1.0,
            Polarity::ToNegative => -1.0,
        }
    }
}

impl RobustTarget for BinaryTarget<'_> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn threshold(&self) -> f64 {
        match self.polarity {
            Polarity::ToPositive => self.t,
            // The boundary itself belongs to the positive class.
            Polarity::ToNegative => -self.t + f64::EPSILON * (1.0 + self.t.abs()),
        }
    }

    fn nominal(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let z = self.model.lift(x)?;
        let theta = &self.model.head().theta;
        let g = self.model.lift_vjp(x, theta)?;
        Ok((self.sign() * theta.dot(&z), g * self.sign()))
    }

    fn robust(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let z = self.model.lift(x)?;
        let wc = self.ell.worst_case(&(&z * self.sign()))?;
        // For the negative direction the worst model maximizes θᵀz̃, i.e. it
        // minimizes θᵀ(−z̃); the gradient picks up the sign through the lift.
        let g = self.model.lift_vjp(x, &wc.worst_theta)? * self.sign();
        Ok((wc.robust_logit, g))
    }

    fn robust_value(&self, x: &DVector<f64>) -> Result<f64> {
        let z = self.model.lift(x)?;
        self.ell.robust_logit(&(z * self.sign()))
    }

    fn concave(&self) -> bool {
        matches!(self.model, Model::Linear(_))
    }

    fn report(&self, x: &DVector<f64>) -> Result<TargetReport> {
        let z = self.model.lift(x)?;
        let wc = self.ell.worst_case(&(&z * self.sign()))?;
        Ok(TargetReport {
            robust_logit: self.sign() * wc.robust_logit,
            baseline_logit: wc.nominal_logit * self.sign(),
            worst_theta: wc.worst_theta,
        })
    }
}
