//! Logistic-regression and small-MLP binary classifiers.
//!
//! Every model scores inputs as `θᵀ[h(x); 1]`, where `h` is the identity for
//! the linear model and the frozen penultimate embedding for the MLP. The
//! augmented vector `[h(x); 1]` is what the Rashomon ellipsoid operates on;
//! [`Model::lift`] produces it.

mod train;

pub use train::{refit_head, train, train_with_validation, TrainConfig, Trained};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, Scaler};
use crate::error::{check_dim, Error, Result};
use crate::numeric::{bce_logit, bce_logit_grad, serde_dmatrix, serde_dvector};

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LinearModel {
    /// Weights followed by the bias.
    #[serde(with = "serde_dvector")]
    pub theta: DVector<f64>,
    pub lambda: f64,
    pub threshold: f64,
}

impl LinearModel {
    pub fn new(theta: DVector<f64>, lambda: f64, threshold: f64) -> Self {
        LinearModel {
            theta,
            lambda,
            threshold,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.theta.len() - 1
    }

    pub fn weights(&self) -> nalgebra::DVectorView<'_, f64> {
        self.theta.rows(0, self.input_dim())
    }

    pub fn bias(&self) -> f64 {
        self.theta[self.input_dim()]
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DenseLayer {
    /// `out × in`.
    #[serde(with = "serde_dmatrix")]
    pub weights: DMatrix<f64>,
    #[serde(with = "serde_dvector")]
    pub bias: DVector<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MlpModel {
    pub hidden: Vec<DenseLayer>,
    pub activation: Activation,
    /// Last layer over the embedding.
    pub head: LinearModel,
}

impl MlpModel {
    pub fn input_dim(&self) -> usize {
        self.hidden.first().map_or(self.head.input_dim(), |l| l.weights.ncols())
    }

    pub fn embedding_dim(&self) -> usize {
        self.head.input_dim()
    }

    /// Pre-activations of every hidden layer and the final embedding.
    fn forward(&self, x: &DVector<f64>) -> (Vec<DVector<f64>>, DVector<f64>) {
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut a = x.clone();
        for layer in &self.hidden {
            let z = &layer.weights * &a + &layer.bias;
            a = z.map(|v| self.activation.apply(v));
            pre.push(z);
        }
        (pre, a)
    }

    /// `J_h(x)ᵀ v` for an upstream vector `v` on the embedding.
    fn embedding_vjp(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let (pre, _) = self.forward(x);
        let mut g = v.clone();
        for (layer, z) in self.hidden.iter().zip(&pre).rev() {
            let dz = g.zip_map(z, |gi, zi| gi * self.activation.derivative(zi));
            g = layer.weights.tr_mul(&dz);
        }
        g
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn head(&self) -> &LinearModel {
        match self {
            Model::Linear(m) => m,
            Model::Mlp(m) => &m.head,
        }
    }

    pub fn head_mut(&mut self) -> &mut LinearModel {
        match self {
            Model::Linear(m) => m,
            Model::Mlp(m) => &mut m.head,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.head().threshold
    }

    pub fn lambda(&self) -> f64 {
        self.head().lambda
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Model::Linear(m) => m.input_dim(),
            Model::Mlp(m) => m.input_dim(),
        }
    }

    /// Dimension `p` of the augmented space the ellipsoid lives in.
    pub fn lifted_dim(&self) -> usize {
        self.head().theta.len()
    }

    /// `[x; 1]` for linear models, `[h(x); 1]` for MLPs.
    pub fn lift(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.input_dim(), x.len())?;
        let h = match self {
            Model::Linear(_) => x.clone(),
            Model::Mlp(m) => m.forward(x).1,
        };
        Ok(h.push(1.0))
    }

    /// Penultimate-layer embedding of an MLP.
    pub fn embedding(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Model::Linear(_) => Err(Error::Unsupported("linear models have no hidden embedding".into())),
            Model::Mlp(m) => {
                check_dim(m.input_dim(), x.len())?;
                Ok(m.forward(x).1)
            }
        }
    }

    pub fn logit(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.head().theta.dot(&self.lift(x)?))
    }

    pub fn predict(&self, x: &DVector<f64>) -> Result<u8> {
        Ok(u8::from(self.logit(x)? >= self.threshold()))
    }

    /// Pull a vector `v` on the lifted space back to the input: `J_lift(x)ᵀ v`.
    pub fn lift_vjp(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.input_dim(), x.len())?;
        check_dim(self.lifted_dim(), v.len())?;
        let head = v.rows(0, v.len() - 1).into_owned();
        Ok(match self {
            Model::Linear(_) => head,
            Model::Mlp(m) => m.embedding_vjp(x, &head),
        })
    }

    /// Gradient of the logit with respect to the input.
    pub fn logit_input_grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.lift_vjp(x, &self.head().theta)
    }

    /// Lifted design matrix, one row per dataset row.
    pub fn lift_rows(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.input_dim(), x.ncols())?;
        let n = x.nrows();
        let emb = match self {
            Model::Linear(_) => x.clone(),
            Model::Mlp(m) => hidden_forward(m, x).1,
        };
        let p = emb.ncols() + 1;
        Ok(DMatrix::from_fn(
            n,
            p,
            |i, j| if j + 1 == p { 1.0 } else { emb[(i, j)] },
        ))
    }

    pub fn logits(&self, x: &DMatrix<f64>) -> Result<DVector<f64>> {
        Ok(self.lift_rows(x)? * &self.head().theta)
    }

    pub fn n_params(&self) -> usize {
        match self {
            Model::Linear(m) => m.theta.len(),
            Model::Mlp(m) => {
                m.hidden.iter().map(|l| l.weights.len() + l.bias.len()).sum::<usize>() + m.head.theta.len()
            }
        }
    }

    /// All trainable parameters, flattened: per hidden layer the weights
    /// row-major then the bias, then the head.
    pub fn params(&self) -> DVector<f64> {
        match self {
            Model::Linear(m) => m.theta.clone(),
            Model::Mlp(m) => {
                let mut out = Vec::with_capacity(self.n_params());
                for l in &m.hidden {
                    for i in 0..l.weights.nrows() {
                        out.extend(l.weights.row(i).iter());
                    }
                    out.extend(l.bias.iter());
                }
                out.extend(m.head.theta.iter());
                DVector::from_vec(out)
            }
        }
    }

    /// Copy of `self` with its parameters replaced (layout as in [`Model::params`]).
    pub fn with_params(&self, params: &DVector<f64>) -> Result<Model> {
        check_dim(self.n_params(), params.len())?;
        let mut out = self.clone();
        match &mut out {
            Model::Linear(m) => m.theta.copy_from(params),
            Model::Mlp(m) => {
                let mut k = 0;
                for l in &mut m.hidden {
                    for i in 0..l.weights.nrows() {
                        for j in 0..l.weights.ncols() {
                            l.weights[(i, j)] = params[k];
                            k += 1;
                        }
                    }
                    for b in l.bias.iter_mut() {
                        *b = params[k];
                        k += 1;
                    }
                }
                let p = m.head.theta.len();
                m.head.theta.copy_from(&params.rows(k, p));
            }
        }
        Ok(out)
    }

    /// Copy of `self` with the last-layer parameters replaced.
    pub fn with_head(&self, theta: &DVector<f64>) -> Result<Model> {
        check_dim(self.lifted_dim(), theta.len())?;
        let mut out = self.clone();
        out.head_mut().theta.copy_from(theta);
        Ok(out)
    }

    /// Mean binary cross-entropy over `ds` (no penalty).
    pub fn data_loss(&self, ds: &Dataset) -> Result<f64> {
        let s = self.logits(&ds.x)?;
        let n = ds.n() as f64;
        Ok(s.iter()
            .zip(&ds.y)
            .map(|(&si, &yi)| bce_logit(si, f64::from(yi)))
            .sum::<f64>()
            / n)
    }

    /// `L̂(θ) = mean BCE + (λ/2)‖θ‖²`, the penalty taken over every parameter.
    pub fn objective(&self, ds: &Dataset) -> Result<f64> {
        Ok(self.data_loss(ds)? + 0.5 * self.lambda() * self.params().norm_squared())
    }

    /// `L̂` and its gradient with respect to [`Model::params`].
    pub fn objective_grad(&self, ds: &Dataset) -> Result<(f64, DVector<f64>)> {
        check_dim(self.input_dim(), ds.d())?;
        let n = ds.n() as f64;
        let lambda = self.lambda();
        let params = self.params();
        match self {
            Model::Linear(m) => {
                let z = self.lift_rows(&ds.x)?;
                let s = &z * &m.theta;
                let mut loss = 0.0;
                let r = DVector::from_fn(ds.n(), |i, _| {
                    let y = ds.label(i);
                    loss += bce_logit(s[i], y);
                    bce_logit_grad(s[i], y) / n
                });
                let grad = z.tr_mul(&r) + &m.theta * lambda;
                Ok((loss / n + 0.5 * lambda * params.norm_squared(), grad))
            }
            Model::Mlp(m) => {
                let (pre, acts) = hidden_forward(m, &ds.x);
                let emb = acts.clone();
                let w = m.head.weights().into_owned();
                let s = &emb * &w + DVector::repeat(ds.n(), m.head.bias());
                let mut loss = 0.0;
                let r = DVector::from_fn(ds.n(), |i, _| {
                    let y = ds.label(i);
                    loss += bce_logit(s[i], y);
                    bce_logit_grad(s[i], y) / n
                });
                let mut head_grad = emb.tr_mul(&r).push(r.sum());
                head_grad += &m.head.theta * lambda;

                // Backpropagate through hidden layers.
                let mut layer_grads = Vec::with_capacity(m.hidden.len());
                let mut upstream = &r * w.transpose(); // n × h
                let inputs: Vec<DMatrix<f64>> = std::iter::once(ds.x.clone())
                    .chain(pre.iter().map(|z| z.map(|v| m.activation.apply(v))))
                    .collect();
                for (li, layer) in m.hidden.iter().enumerate().rev() {
                    let dz = upstream.zip_map(&pre[li], |g, z| g * m.activation.derivative(z));
                    let dw = dz.tr_mul(&inputs[li]) + &layer.weights * lambda;
                    let db = DVector::from_fn(dz.ncols(), |j, _| dz.column(j).sum()) + &layer.bias * lambda;
                    upstream = &dz * &layer.weights;
                    layer_grads.push((dw, db));
                }
                layer_grads.reverse();
                let mut out = Vec::with_capacity(params.len());
                for (dw, db) in &layer_grads {
                    for i in 0..dw.nrows() {
                        out.extend(dw.row(i).iter());
                    }
                    out.extend(db.iter());
                }
                out.extend(head_grad.iter());
                Ok((loss / n + 0.5 * lambda * params.norm_squared(), DVector::from_vec(out)))
            }
        }
    }

    /// Stable identifier derived from the serialized parameters.
    pub fn id(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("model serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// Hidden pre-activations (per layer) and the embedding matrix for a batch.
fn hidden_forward(m: &MlpModel, x: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
    let mut pre = Vec::with_capacity(m.hidden.len());
    let mut a = x.clone();
    for layer in &m.hidden {
        let mut z = &a * layer.weights.transpose();
        for mut row in z.row_iter_mut() {
            row += layer.bias.transpose();
        }
        a = z.map(|v| m.activation.apply(v));
        pre.push(z);
    }
    (pre, a)
}

/// On-disk model format.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelFile {
    pub version: u32,
    pub model: Model,
    #[serde(default)]
    pub scaler: Option<Scaler>,
    #[serde(default)]
    pub dataset_hash: Option<String>,
    #[serde(default)]
    pub final_objective: Option<f64>,
}

impl ModelFile {
    pub fn new(model: Model) -> Self {
        ModelFile {
            version: MODEL_FILE_VERSION,
            model,
            scaler: None,
            dataset_hash: None,
            final_objective: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: ModelFile = serde_json::from_str(text)?;
        if f.version != MODEL_FILE_VERSION {
            return Err(Error::Schema(format!("unsupported model file version {}", f.version)));
        }
        Ok(f)
    }
}
