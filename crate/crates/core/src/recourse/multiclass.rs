use nalgebra::DVector;

use super::target::{RobustTarget, TargetReport};
use crate::error::{check_dim, Error, Result};
use crate::models::Model;
use crate::rashomon::RashomonEllipsoid;

/// One linear score head per class over a shared lift (`[x;1]` or `[h(x);1]`).
#[derive(Debug, Clone)]
pub struct MulticlassHeads {
    /// Supplies the lift; its own head is ignored.
    pub lift: Model,
    pub heads: Vec<DVector<f64>>,
}

impl MulticlassHeads {
    pub fn new(lift: Model, heads: Vec<DVector<f64>>) -> Result<Self> {
        if heads.len() < 2 {
            return Err(Error::InvalidInput("need at least two class heads".into()));
        }
        for h in &heads {
            check_dim(lift.lifted_dim(), h.len())?;
        }
        Ok(MulticlassHeads { lift, heads })
    }

    pub fn classes(&self) -> usize {
        self.heads.len()
    }

    pub fn scores(&self, x: &DVector<f64>) -> Result<Vec<f64>> {
        let z = self.lift.lift(x)?;
        Ok(self.heads.iter().map(|h| h.dot(&z)).collect())
    }
}

/// Uncertainty over the class heads.
#[derive(Debug, Clone)]
pub enum MarginGeometry {
    /// Every head difference varies in one ellipsoid.
    Shared(RashomonEllipsoid),
    /// Heads vary jointly with block-diagonal curvature, one block per class.
    PerClass(Vec<RashomonEllipsoid>),
}

/// Worst-case margin of the target class over every competitor:
/// `min_c (θ_y−θ_c)ᵀz̃ − √(2ε q_c(z̃))` with `q_c = z̃ᵀH⁻¹z̃` (shared) or
/// `z̃ᵀ(H_y⁻¹ + H_c⁻¹)z̃` (per class).
#[derive(Debug, Clone, Copy)]
pub struct MulticlassTarget<'a> {
    pub heads: &'a MulticlassHeads,
    pub geometry: &'a MarginGeometry,
    pub class: usize,
    pub margin: f64,
}

struct Competitor {
    nominal: f64,
    robust: f64,
    grad_nominal: DVector<f64>,
    grad_robust: DVector<f64>,
}

impl<'a> MulticlassTarget<'a> {
    pub fn new(heads: &'a MulticlassHeads, geometry: &'a MarginGeometry, class: usize, margin: f64) -> Result<Self> {
        if class >= heads.classes() {
            return Err(Error::InvalidInput(format!("class {class} out of range")));
        }
        if !(margin >= 0.0) {
            return Err(Error::InvalidInput("margin must be non-negative".into()));
        }
        let p = heads.lift.lifted_dim();
        match geometry {
            MarginGeometry::Shared(e) => check_dim(p, e.dim())?,
            MarginGeometry::PerClass(es) => {
                check_dim(heads.classes(), es.len())?;
                for e in es {
                    check_dim(p, e.dim())?;
                    if e.epsilon() != es[0].epsilon() {
                        return Err(Error::InvalidInput("per-class ellipsoids must share epsilon".into()));
                    }
                }
            }
        }
        Ok(MulticlassTarget {
            heads,
            geometry,
            class,
            margin,
        })
    }

    fn epsilon(&self) -> f64 {
        match self.geometry {
            MarginGeometry::Shared(e) => e.epsilon(),
            MarginGeometry::PerClass(es) => es[0].epsilon(),
        }
    }

    /// `(q, H⁻¹z̃ summed over the blocks involved)`.
    fn inverse_terms(&self, z: &DVector<f64>, c: usize) -> Result<(f64, DVector<f64>)> {
        match self.geometry {
            MarginGeometry::Shared(e) => {
                let s = e.solve(z)?;
                Ok((z.dot(&s), s))
            }
            MarginGeometry::PerClass(es) => {
                let s = es[self.class].solve(z)? + es[c].solve(z)?;
                Ok((z.dot(&s), s))
            }
        }
    }

    fn competitors(&self, x: &DVector<f64>, with_grad: bool) -> Result<Vec<(usize, Competitor, DVector<f64>)>> {
        let z = self.heads.lift.lift(x)?;
        let eps = self.epsilon();
        let ty = &self.heads.heads[self.class];
        let mut out = Vec::new();
        for c in 0..self.heads.classes() {
            if c == self.class {
                continue;
            }
            let diff = ty - &self.heads.heads[c];
            let nominal = diff.dot(&z);
            let (q, s) = self.inverse_terms(&z, c)?;
            let q = q.max(0.0);
            let pen = (2.0 * eps * q).sqrt();
            let worst = if q > 0.0 && eps > 0.0 {
                &diff - s * ((2.0 * eps).sqrt() / q.sqrt())
            } else {
                diff.clone()
            };
            let (gn, gr) = if with_grad {
                (
                    self.heads.lift.lift_vjp(x, &diff)?,
                    self.heads.lift.lift_vjp(x, &worst)?,
                )
            } else {
                (DVector::zeros(0), DVector::zeros(0))
            };
            out.push((
                c,
                Competitor {
                    nominal,
                    robust: nominal - pen,
                    grad_nominal: gn,
                    grad_robust: gr,
                },
                worst,
            ));
        }
        Ok(out)
    }
}

impl RobustTarget for MulticlassTarget<'_> {
    fn input_dim(&self) -> usize {
        self.heads.lift.input_dim()
    }

    fn threshold(&self) -> f64 {
        self.margin
    }

    fn nominal(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let comps = self.competitors(x, true)?;
        let (_, c, _) = comps
            .into_iter()
            .min_by(|a, b| a.1.nominal.total_cmp(&b.1.nominal))
            .expect("at least one competitor");
        Ok((c.nominal, c.grad_nominal))
    }

    fn robust(&self, x: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        let comps = self.competitors(x, true)?;
        let (_, c, _) = comps
            .into_iter()
            .min_by(|a, b| a.1.robust.total_cmp(&b.1.robust))
            .expect("at least one competitor");
        Ok((c.robust, c.grad_robust))
    }

    fn robust_value(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self
            .competitors(x, false)?
            .iter()
            .map(|(_, c, _)| c.robust)
            .fold(f64::INFINITY, f64::min))
    }

    fn concave(&self) -> bool {
        self.heads.classes() == 2 && matches!(self.heads.lift, Model::Linear(_))
    }

    fn report(&self, x: &DVector<f64>) -> Result<TargetReport> {
        let comps = self.competitors(x, false)?;
        let nominal = comps.iter().map(|(_, c, _)| c.nominal).fold(f64::INFINITY, f64::min);
        let (_, c, worst) = comps
            .into_iter()
            .min_by(|a, b| a.1.robust.total_cmp(&b.1.robust))
            .expect("at least one competitor");
        Ok(TargetReport {
            robust_logit: c.robust,
            baseline_logit: nominal,
            worst_theta: worst,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSpec;
    use crate::models::LinearModel;
    use crate::rashomon::Stabilization;
    use crate::recourse::{generate_continuous, BinaryTarget, ContinuousConfig, RecourseConstraints};
    use nalgebra::DMatrix;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn specs(d: usize) -> Vec<FeatureSpec> {
        (0..d).map(|j| FeatureSpec::continuous(format!("x{j}"))).collect()
    }

    fn h() -> DMatrix<f64> {
        DMatrix::from_row_slice(3, 3, &[1.5, 0.2, 0.0, 0.2, 1.0, 0.1, 0.0, 0.1, 2.0])
    }

    #[test]
    fn two_classes_reduce_to_the_binary_case() {
        let t0 = v(&[0.2, -0.4, 0.1]);
        let t1 = v(&[0.9, 0.3, -0.3]);
        let diff = &t1 - &t0;
        let lift = Model::Linear(LinearModel::new(DVector::zeros(3), 0.0, 0.0));
        let heads = MulticlassHeads::new(lift, vec![t0, t1]).unwrap();
        let geom = MarginGeometry::Shared(
            RashomonEllipsoid::from_hessian(DVector::zeros(3), h(), 0.05, Stabilization::default()).unwrap(),
        );
        let mc = MulticlassTarget::new(&heads, &geom, 1, 0.2).unwrap();

        let bin_model = Model::Linear(LinearModel::new(diff.clone(), 0.0, 0.0));
        let ell = RashomonEllipsoid::from_hessian(diff, h(), 0.05, Stabilization::default()).unwrap();
        let bt = BinaryTarget::new(&bin_model, &ell, 0.2).unwrap();

        let x0 = v(&[-1.0, -0.7]);
        let cfg = ContinuousConfig::default();
        let cons = RecourseConstraints::free(&specs(2));
        let a = generate_continuous(&mc, &x0, &cfg, &cons).unwrap();
        let b = generate_continuous(&bt, &x0, &cfg, &cons).unwrap();
        assert!(a.certified && b.certified);
        assert!((a.x_c - b.x_c).amax() < 1e-6);
    }

    fn rotated_heads() -> MulticlassHeads {
        let w = v(&[1.0, 0.0]);
        let heads = (0..3)
            .map(|k| {
                let a = k as f64 * std::f64::consts::TAU / 3.0;
                v(&[a.cos() * w[0] - a.sin() * w[1], a.sin() * w[0] + a.cos() * w[1], 0.0])
            })
            .collect();
        MulticlassHeads::new(Model::Linear(LinearModel::new(DVector::zeros(3), 0.0, 0.0)), heads).unwrap()
    }

    #[test]
    fn symmetric_three_class_margins_hold_for_every_competitor() {
        let heads = rotated_heads();
        for geom in [
            MarginGeometry::Shared(
                RashomonEllipsoid::from_hessian(DVector::zeros(3), h(), 0.02, Stabilization::default()).unwrap(),
            ),
            MarginGeometry::PerClass(
                (0..3)
                    .map(|_| {
                        RashomonEllipsoid::from_hessian(DVector::zeros(3), h(), 0.02, Stabilization::default()).unwrap()
                    })
                    .collect(),
            ),
        ] {
            let t = MulticlassTarget::new(&heads, &geom, 0, 0.3).unwrap();
            let x0 = v(&[0.0, 0.0]);
            let cf = generate_continuous(
                &t,
                &x0,
                &ContinuousConfig::default(),
                &RecourseConstraints::free(&specs(2)),
            )
            .unwrap();
            assert!(cf.certified);
            let z = heads.lift.lift(&cf.x_c).unwrap();
            for c in 1..3 {
                let diff = &heads.heads[0] - &heads.heads[c];
                let pen = match &geom {
                    MarginGeometry::Shared(e) => e.penalty(&z).unwrap(),
                    MarginGeometry::PerClass(es) => {
                        (2.0 * 0.02 * (es[0].inverse_quadratic(&z).unwrap() + es[c].inverse_quadratic(&z).unwrap()))
                            .sqrt()
                    }
                };
                assert!(diff.dot(&z) - pen >= 0.3);
            }
            // Oracle: a dense grid finds no certified point much closer than the result.
            let mut best = f64::INFINITY;
            for i in -150..=150 {
                for j in -150..=150 {
                    let p = v(&[i as f64 * 0.01, j as f64 * 0.01]);
                    if t.certified(&p).unwrap() {
                        best = best.min(p.norm());
                    }
                }
            }
            assert!(cf.l2 <= best + 0.05, "{} vs grid {}", cf.l2, best);
        }
    }

    #[test]
    fn robust_gradient_matches_finite_differences() {
        let heads = rotated_heads();
        let geom = MarginGeometry::PerClass(
            (0..3)
                .map(|k| {
                    RashomonEllipsoid::from_hessian(
                        DVector::zeros(3),
                        h() * (1.0 + k as f64),
                        0.05,
                        Stabilization::default(),
                    )
                    .unwrap()
                })
                .collect(),
        );
        let t = MulticlassTarget::new(&heads, &geom, 2, 0.0).unwrap();
        let x = v(&[0.3, -0.8]);
        let (_, g) = t.robust(&x).unwrap();
        for j in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += 1e-6;
            xm[j] -= 1e-6;
            let fd = (t.robust_value(&xp).unwrap() - t.robust_value(&xm).unwrap()) / 2e-6;
            assert!((fd - g[j]).abs() < 1e-6 * (1.0 + fd.abs()));
        }
    }
}
