//! Ellipsoidal approximation of the set of near-optimal models.
//!
//! Around a trained head `θ̂` the regularized objective is approximated by its
//! second-order expansion, so the models within `ε` of the optimum form
//! `{θ : ½(θ−θ̂)ᵀH(θ−θ̂) ≤ ε}`. Minimizing a linear score `θᵀx` over that set
//! has a closed form, which is what every certificate in this crate uses.
//!
//! `H` is assembled as `(1/n) Zᵀ W Z + λI`, with `Z` the lifted design rows and
//! `W = diag(σ(s)(1−σ(s)))`. It is factorized once; queries cost two
//! triangular solves.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::models::Model;
use crate::numeric::sigmoid;

pub const ELLIPSOID_FILE_VERSION: u32 = 1;

/// How much diagonal loading may be added when `H` fails to factorize.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stabilization {
    pub initial_alpha: f64,
    pub max_alpha: f64,
    pub factor: f64,
}

impl Default for Stabilization {
    fn default() -> Self {
        Stabilization {
            initial_alpha: 1e-6,
            max_alpha: 1e-2,
            factor: 10.0,
        }
    }
}

/// Tolerance given either directly or as a fraction of the base objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonSpec {
    Absolute(f64),
    Relative(f64),
}

impl EpsilonSpec {
    pub fn resolve(self, base_objective: f64) -> Result<f64> {
        let eps = match self {
            EpsilonSpec::Absolute(e) => e,
            EpsilonSpec::Relative(r) => relative_epsilon(r, base_objective),
        };
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be finite and non-negative, got {eps}"
            )));
        }
        Ok(eps)
    }
}

/// `ε = fraction · L̂(θ̂)`.
pub fn relative_epsilon(fraction: f64, base_objective: f64) -> f64 {
    fraction * base_objective
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub model_id: Option<String>,
    pub dataset_hash: Option<String>,
}

/// Result of minimizing `θᵀx` over the ellipsoid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub robust_logit: f64,
    pub nominal_logit: f64,
    /// `√(2ε xᵀH⁻¹x)`.
    pub penalty: f64,
    #[serde(with = "crate::numeric::serde_dvector")]
    pub worst_theta: DVector<f64>,
}

/// Eigenpairs of `H`, eigenvalues in descending order.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub values: DVector<f64>,
    /// Column `i` pairs with `values[i]`.
    pub vectors: DMatrix<f64>,
}

impl Spectrum {
    pub fn top_vector(&self) -> DVector<f64> {
        self.vectors.column(0).into_owned()
    }

    /// `|cos|` of the angle between `direction` and the top eigenvector.
    pub fn cos_angle_to_top(&self, direction: &DVector<f64>) -> f64 {
        let n = direction.norm();
        if n == 0.0 {
            return 0.0;
        }
        (self.top_vector().dot(direction) / n).abs()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "EllipsoidFile", into = "EllipsoidFile")]
pub struct RashomonEllipsoid {
    center: DVector<f64>,
    hessian: DMatrix<f64>,
    chol_l: DMatrix<f64>,
    epsilon: f64,
    alpha: f64,
    provenance: Provenance,
}

/// Curvature of the regularized objective with respect to the head, at the
/// current head parameters.
pub fn head_hessian(model: &Model, ds: &Dataset) -> Result<DMatrix<f64>> {
    if ds.n() == 0 {
        return Err(Error::Empty("cannot build a Hessian from zero rows".into()));
    }
    let z = model.lift_rows(&ds.x)?;
    let theta = &model.head().theta;
    let n = ds.n() as f64;
    let s = &z * theta;
    let zw = DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| {
        let q = sigmoid(s[i]);
        z[(i, j)] * q * (1.0 - q)
    });
    let mut h = z.tr_mul(&zw) / n;
    for i in 0..h.nrows() {
        h[(i, i)] += model.lambda();
    }
    Ok(h)
}

fn symmetrize(h: &DMatrix<f64>) -> DMatrix<f64> {
    (h + h.transpose()) * 0.5
}

fn factor(h: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let l = h.clone().cholesky()?.unpack();
    if l.diagonal().iter().all(|v| v.is_finite() && *v > 0.0) {
        Some(l)
    } else {
        None
    }
}

fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(h.clone()).eigenvalues.min()
}

impl RashomonEllipsoid {
    /// Assemble and factorize `H` at the model's head, with default stabilization.
    pub fn build(model: &Model, ds: &Dataset, epsilon: f64) -> Result<Self> {
        Self::build_with(model, ds, epsilon, Stabilization::default())
    }

    pub fn build_with(model: &Model, ds: &Dataset, epsilon: f64, stab: Stabilization) -> Result<Self> {
        let h = head_hessian(model, ds)?;
        let mut ell = Self::from_hessian(model.head().theta.clone(), h, epsilon, stab)?;
        ell.provenance = Provenance {
            model_id: Some(model.id()),
            dataset_hash: Some(ds.content_hash()),
        };
        Ok(ell)
    }

    /// Factorize a given `H`, loading the diagonal only if plain Cholesky fails.
    pub fn from_hessian(
        center: DVector<f64>,
        hessian: DMatrix<f64>,
        epsilon: f64,
        stab: Stabilization,
    ) -> Result<Self> {
        check_dim(center.len(), hessian.nrows())?;
        check_dim(center.len(), hessian.ncols())?;
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be finite and non-negative, got {epsilon}"
            )));
        }
        if !center.iter().chain(hessian.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite entries in center or Hessian".into()));
        }
        let base = symmetrize(&hessian);
        let mut alpha = 0.0;
        let mut h = base.clone();
        let l = loop {
            if let Some(l) = factor(&h) {
                break l;
            }
            alpha = if alpha == 0.0 {
                stab.initial_alpha
            } else {
                alpha * stab.factor
            };
            if !(alpha > 0.0) || alpha > stab.max_alpha * (1.0 + 1e-12) {
                return Err(Error::IllConditioned {
                    min_eigenvalue: min_eigenvalue(&base),
                });
            }
            h = &base + DMatrix::from_diagonal_element(base.nrows(), base.ncols(), alpha);
        };
        Ok(RashomonEllipsoid {
            center,
            hessian: h,
            chol_l: l,
            epsilon,
            alpha,
            provenance: Provenance::default(),
        })
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    /// The factorized matrix, including any stabilization.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.chol_l
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn set_provenance(&mut self, p: Provenance) {
        self.provenance = p;
    }

    /// Same center and shape, different tolerance.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidInput(format!(
                "epsilon must be finite and non-negative, got {epsilon}"
            )));
        }
        let mut out = self.clone();
        out.epsilon = epsilon;
        Ok(out)
    }

    fn check(&self, x: &DVector<f64>) -> Result<()> {
        check_dim(self.dim(), x.len())?;
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinates".into()));
        }
        Ok(())
    }

    /// `L⁻¹x`.
    fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        self.chol_l
            .solve_lower_triangular(x)
            .expect("Cholesky factor has a positive diagonal")
    }

    /// `H⁻¹x` by two triangular solves.
    pub fn solve(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(x)?;
        let y = self.forward(x);
        Ok(self
            .chol_l
            .tr_solve_lower_triangular(&y)
            .expect("Cholesky factor has a positive diagonal"))
    }

    /// `xᵀH⁻¹x`.
    pub fn inverse_quadratic(&self, x: &DVector<f64>) -> Result<f64> {
        self.check(x)?;
        Ok(self.forward(x).norm_squared())
    }

    /// `√(2ε xᵀH⁻¹x)`.
    pub fn penalty(&self, x: &DVector<f64>) -> Result<f64> {
        Ok((2.0 * self.epsilon * self.inverse_quadratic(x)?).sqrt())
    }

    pub fn worst_case(&self, x: &DVector<f64>) -> Result<WorstCase> {
        self.check(x)?;
        let nominal = self.center.dot(x);
        let hx = self.solve(x)?;
        let q = x.dot(&hx).max(0.0);
        if q == 0.0 || self.epsilon == 0.0 {
            return Ok(WorstCase {
                robust_logit: nominal,
                nominal_logit: nominal,
                penalty: 0.0,
                worst_theta: self.center.clone(),
            });
        }
        let penalty = (2.0 * self.epsilon * q).sqrt();
        let worst_theta = &self.center - hx * ((2.0 * self.epsilon).sqrt() / q.sqrt());
        Ok(WorstCase {
            robust_logit: nominal - penalty,
            nominal_logit: nominal,
            penalty,
            worst_theta,
        })
    }

    pub fn robust_logit(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.center.dot(x) - self.penalty(x)?)
    }

    /// Certificate: every head in the set scores `x` at least `t`.
    pub fn is_robust(&self, x: &DVector<f64>, t: f64) -> Result<bool> {
        Ok(self.robust_logit(x)? >= t)
    }

    /// `½(θ−θ̂)ᵀH(θ−θ̂)`.
    pub fn quadratic_form(&self, theta: &DVector<f64>) -> Result<f64> {
        self.check(theta)?;
        let d = theta - &self.center;
        // ‖Lᵀd‖² avoids forming H d.
        Ok(0.5 * self.chol_l.tr_mul(&d).norm_squared())
    }

    pub fn membership(&self, theta: &DVector<f64>) -> Result<bool> {
        Ok(self.quadratic_form(theta)? <= self.epsilon)
    }

    /// Map a unit vector onto the boundary: `θ̂ + √(2ε) L⁻ᵀu`.
    ///
    /// Uniform `u` gives the same distribution as the symmetric square root
    /// would, since the two maps differ by a rotation.
    pub fn boundary_point(&self, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(u)?;
        let v = self
            .chol_l
            .tr_solve_lower_triangular(u)
            .expect("Cholesky factor has a positive diagonal");
        Ok(&self.center + v * (2.0 * self.epsilon).sqrt())
    }

    pub fn alignment_spectrum(&self) -> Result<Spectrum> {
        let eig = self
            .hessian
            .clone()
            .try_symmetric_eigen(1e-14, 10_000)
            .ok_or_else(|| Error::Numerical("eigensolver did not converge".into()))?;
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let values = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
        let vectors = DMatrix::from_fn(self.dim(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
        Ok(Spectrum { values, vectors })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ellipsoid serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// On-disk form: `H` flattened row-major.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EllipsoidFile {
    pub version: u32,
    pub dim: usize,
    pub center: Vec<f64>,
    pub hessian: Vec<f64>,
    pub epsilon: f64,
    pub alpha: f64,
    #[serde(default)]
    pub provenance: Provenance,
}

impl From<RashomonEllipsoid> for EllipsoidFile {
    fn from(e: RashomonEllipsoid) -> Self {
        let p = e.dim();
        EllipsoidFile {
            version: ELLIPSOID_FILE_VERSION,
            dim: p,
            center: e.center.iter().copied().collect(),
            hessian: (0..p)
                .flat_map(|i| (0..p).map(move |j| (i, j)))
                .map(|(i, j)| e.hessian[(i, j)])
                .collect(),
            epsilon: e.epsilon,
            alpha: e.alpha,
            provenance: e.provenance,
        }
    }
}

impl TryFrom<EllipsoidFile> for RashomonEllipsoid {
    type Error = Error;

    fn try_from(f: EllipsoidFile) -> Result<Self> {
        if f.version != ELLIPSOID_FILE_VERSION {
            return Err(Error::Schema(format!(
                "unsupported ellipsoid file version {}",
                f.version
            )));
        }
        check_dim(f.dim, f.center.len())?;
        check_dim(f.dim * f.dim, f.hessian.len())?;
        let h = DMatrix::from_row_slice(f.dim, f.dim, &f.hessian);
        let stab = Stabilization {
            initial_alpha: 0.0,
            max_alpha: 0.0,
            factor: 1.0,
        };
        let mut e = RashomonEllipsoid::from_hessian(DVector::from_vec(f.center), h, f.epsilon, stab)?;
        e.alpha = f.alpha;
        e.provenance = f.provenance;
        Ok(e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LinearModel;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn isotropic(center: &[f64], eps: f64) -> RashomonEllipsoid {
        let p = center.len();
        RashomonEllipsoid::from_hessian(v(center), DMatrix::identity(p, p), eps, Stabilization::default()).unwrap()
    }

    #[test]
    fn single_row_hessian_by_hand() {
        let model = Model::Linear(LinearModel::new(v(&[0.0, 0.0]), 0.001, 0.0));
        let ds = Dataset::from_rows(&[vec![1.0]], vec![1]).unwrap();
        let h = head_hessian(&model, &ds).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.251, 0.25, 0.25, 0.251]);
        assert!((h - expected).amax() < 1e-15);
    }

    #[test]
    fn hessian_matches_finite_differences_of_objective() {
        let model = Model::Linear(LinearModel::new(v(&[0.4, -0.3, 0.2]), 0.01, 0.0));
        let ds = Dataset::from_rows(
            &[vec![1.0, 0.5], vec![-0.3, 1.2], vec![0.7, -0.8], vec![-1.1, -0.2]],
            vec![1, 0, 1, 0],
        )
        .unwrap();
        let h = head_hessian(&model, &ds).unwrap();
        let step = 1e-5;
        for j in 0..3 {
            let mut tp = model.head().theta.clone();
            let mut tm = tp.clone();
            tp[j] += step;
            tm[j] -= step;
            let gp = model.with_head(&tp).unwrap().objective_grad(&ds).unwrap().1;
            let gm = model.with_head(&tm).unwrap().objective_grad(&ds).unwrap().1;
            let col = (gp - gm) / (2.0 * step);
            for i in 0..3 {
                assert!((col[i] - h[(i, j)]).abs() < 1e-5, "H[{i},{j}]");
            }
        }
    }

    #[test]
    fn heavy_ridge_is_near_isotropic() {
        let model = Model::Linear(LinearModel::new(v(&[0.1, 0.2, 0.0]), 1e4, 0.0));
        let ds = Dataset::from_rows(&[vec![1.0, 2.0], vec![-1.0, 0.3]], vec![1, 0]).unwrap();
        let ell = RashomonEllipsoid::build(&model, &ds, 0.1).unwrap();
        let s = ell.alignment_spectrum().unwrap();
        assert!(s.values[0] / s.values[2] < 1.001);
    }

    #[test]
    fn duplicating_rows_leaves_hessian_unchanged() {
        let model = Model::Linear(LinearModel::new(v(&[0.3, -0.5]), 0.01, 0.0));
        let ds = Dataset::from_rows(&[vec![1.0], vec![-2.0], vec![0.5]], vec![1, 0, 1]).unwrap();
        let doubled = ds.subset(&[0, 1, 2, 0, 1, 2]);
        let a = head_hessian(&model, &ds).unwrap();
        let b = head_hessian(&model, &doubled).unwrap();
        assert!((a - b).amax() < 1e-15);
    }

    #[test]
    fn singular_hessian_is_stabilized() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let ell = RashomonEllipsoid::from_hessian(v(&[0.0, 0.0]), h, 0.1, Stabilization::default()).unwrap();
        assert!(ell.alpha() >= 1e-6 && ell.alpha() <= 1e-2);
    }

    #[test]
    fn indefinite_hessian_is_ill_conditioned() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        match RashomonEllipsoid::from_hessian(v(&[0.0, 0.0]), h, 0.1, Stabilization::default()) {
            Err(Error::IllConditioned { min_eigenvalue }) => assert!((min_eigenvalue + 1.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn worst_case_isotropic_example() {
        let ell = isotropic(&[2.0, 0.0], 0.5);
        let wc = ell.worst_case(&v(&[1.0, 0.0])).unwrap();
        assert!((wc.robust_logit - 1.0).abs() < 1e-12);
        assert!((wc.worst_theta - v(&[1.0, 0.0])).amax() < 1e-12);
        assert!(ell.is_robust(&v(&[1.0, 0.0]), 0.5).unwrap());
        assert!(!ell.is_robust(&v(&[1.0, 0.0]), 1.5).unwrap());
    }

    #[test]
    fn sampled_circle_agrees_with_closed_form() {
        // Oracle: direct scan of the boundary circle ‖θ−θ̂‖ = 1.
        let center = v(&[2.0, 0.0]);
        let x = v(&[1.0, 0.0]);
        let n = 100_000;
        let best = (0..n)
            .map(|k| {
                let a = k as f64 / n as f64 * std::f64::consts::TAU;
                (center[0] + a.cos()) * x[0] + (center[1] + a.sin()) * x[1]
            })
            .fold(f64::INFINITY, f64::min);
        let wc = isotropic(&[2.0, 0.0], 0.5).worst_case(&x).unwrap();
        assert!((best - wc.robust_logit).abs() < 1e-3);
        assert!(best >= wc.robust_logit - 1e-12);
    }

    #[test]
    fn zero_epsilon_and_zero_point() {
        let ell = isotropic(&[2.0, -1.0], 0.0);
        let x = v(&[0.3, 0.7]);
        assert_eq!(ell.robust_logit(&x).unwrap(), ell.center().dot(&x));
        assert!(ell.is_robust(&x, ell.center().dot(&x)).unwrap());
        let ell = isotropic(&[2.0, -1.0], 0.4);
        let wc = ell.worst_case(&v(&[0.0, 0.0])).unwrap();
        assert_eq!(wc.robust_logit, 0.0);
        assert_eq!(wc.penalty, 0.0);
        assert_eq!(&wc.worst_theta, ell.center());
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let ell = isotropic(&[1.0, 0.0], 0.1);
        assert!(matches!(
            ell.worst_case(&v(&[f64::NAN, 0.0])),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            ell.worst_case(&v(&[1.0])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn membership_center_boundary_and_outside() {
        let h = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let ell = RashomonEllipsoid::from_hessian(v(&[0.5, -0.5]), h.clone(), 0.2, Stabilization::default()).unwrap();
        assert!(ell.membership(ell.center()).unwrap());
        let dir = v(&[0.3, 0.9]);
        let q = dir.dot(&(&h * &dir)) / 2.0;
        let outside = ell.center() + &dir * (2.0 * 0.2 / q).sqrt();
        assert!(!ell.membership(&outside).unwrap());
        let wc = ell.worst_case(&v(&[1.0, 2.0])).unwrap();
        let qf = ell.quadratic_form(&wc.worst_theta).unwrap();
        assert!(((qf - 0.2) / 0.2).abs() < 1e-8);
    }

    #[test]
    fn spectrum_of_rotated_diagonal() {
        let (c, s) = (0.6f64, 0.8f64);
        let r = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let d = DMatrix::from_diagonal(&v(&[4.0, 1.0]));
        let h = &r * d * r.transpose();
        let ell = RashomonEllipsoid::from_hessian(v(&[0.0, 0.0]), h, 0.1, Stabilization::default()).unwrap();
        let sp = ell.alignment_spectrum().unwrap();
        assert!((sp.values[0] - 4.0).abs() < 1e-10 && (sp.values[1] - 1.0).abs() < 1e-10);
        for k in 0..2 {
            let col = sp.vectors.column(k);
            let dot = col.dot(&r.column(k)).abs();
            assert!((dot - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn penalty_minimized_along_top_eigenvector() {
        let h = DMatrix::from_row_slice(2, 2, &[3.0, 1.2, 1.2, 1.5]);
        let ell = RashomonEllipsoid::from_hessian(v(&[0.0, 0.0]), h, 0.3, Stabilization::default()).unwrap();
        let q1 = ell.alignment_spectrum().unwrap().top_vector();
        let (best_deg, _) = (0..360)
            .map(|k| {
                let a = (k as f64).to_radians();
                (k, ell.penalty(&v(&[a.cos(), a.sin()])).unwrap())
            })
            .fold((0, f64::INFINITY), |acc, (k, p)| if p < acc.1 { (k, p) } else { acc });
        let a = (best_deg as f64).to_radians();
        let cos = (a.cos() * q1[0] + a.sin() * q1[1]).abs();
        assert!(cos >= 1f64.to_radians().cos() - 1e-12);
    }

    #[test]
    fn penalty_is_homogeneous_and_monotone_in_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, 0.1, 0.3, 1.0, 0.2, 0.1, 0.2, 0.7]);
        let ell = RashomonEllipsoid::from_hessian(v(&[0.1, 0.2, 0.3]), h, 0.2, Stabilization::default()).unwrap();
        for _ in 0..20 {
            let x = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let c = rng.random_range(-3.0..3.0);
            let a = ell.penalty(&(&x * c)).unwrap();
            let b = c.abs() * ell.penalty(&x).unwrap();
            assert!((a - b).abs() < 1e-10 * (1.0 + b));
            let lo = ell.with_epsilon(0.1).unwrap().robust_logit(&x).unwrap();
            let hi = ell.with_epsilon(0.4).unwrap().robust_logit(&x).unwrap();
            assert!(hi <= lo);
        }
    }

    #[test]
    fn boundary_points_have_unit_radius_under_identity() {
        let ell = isotropic(&[1.0, 2.0, 3.0], 0.5);
        let u = v(&[0.6, 0.0, 0.8]);
        let b = ell.boundary_point(&u).unwrap();
        assert!(((b - ell.center()).norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_preserves_queries() {
        let h = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
        let mut ell = RashomonEllipsoid::from_hessian(v(&[0.5, -0.5]), h, 0.2, Stabilization::default()).unwrap();
        ell.set_provenance(Provenance {
            model_id: Some("m".into()),
            dataset_hash: Some("d".into()),
        });
        let back = RashomonEllipsoid::from_json(&ell.to_json()).unwrap();
        let x = v(&[0.7, 1.3]);
        assert_eq!(back.robust_logit(&x).unwrap(), ell.robust_logit(&x).unwrap());
        assert_eq!(back.provenance(), ell.provenance());
        let raw: serde_json::Value = serde_json::from_str(&ell.to_json()).unwrap();
        assert_eq!(raw["hessian"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn relative_epsilon_scales_base_objective() {
        assert_eq!(EpsilonSpec::Relative(0.1).resolve(0.5).unwrap(), 0.05);
        assert_eq!(EpsilonSpec::Absolute(0.3).resolve(0.5).unwrap(), 0.3);
        assert!(EpsilonSpec::Absolute(-1.0).resolve(0.5).is_err());
    }
}
