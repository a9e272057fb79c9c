use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, DenseLayer, LinearModel, MlpModel, Model};
use crate::data::{Dataset, FeatureSpec};
use crate::error::{Error, Result};
use crate::numeric::sigmoid;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    /// Adam step size (MLP only; the linear solver uses Newton steps).
    pub learning_rate: f64,
    /// Epoch cap for the MLP, iteration cap for the linear solver.
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub lambda: f64,
    pub seed: u64,
    /// Empty means logistic regression.
    pub hidden_sizes: Vec<usize>,
    pub activation: Activation,
    pub batch_size: usize,
    pub threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            max_epochs: 200,
            early_stop_patience: 10,
            lambda: 0.001,
            seed: 0,
            hidden_sizes: Vec::new(),
            activation: Activation::Relu,
            batch_size: 32,
            threshold: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config("lambda must be non-negative".into()));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("max_epochs and batch_size must be positive".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Trained {
    pub model: Model,
    /// Regularized training objective at the returned parameters.
    pub final_objective: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    train_with_validation(ds, None, cfg)
}

/// Fit a model. A validation set, when given, drives MLP early stopping.
pub fn train_with_validation(ds: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    if ds.n() == 0 {
        return Err(Error::Empty("training set has no rows".into()));
    }
    if cfg.hidden_sizes.is_empty() {
        train_linear(ds, cfg)
    } else {
        train_mlp(ds, val, cfg)
    }
}

/// Damped Newton iterations with Armijo backtracking on the convex objective.
fn train_linear(ds: &Dataset, cfg: &TrainConfig) -> Result<Trained> {
    let d = ds.d();
    let p = d + 1;
    let n = ds.n() as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let init = DVector::from_fn(p, |_, _| 0.01 * (rng.random::<f64>() - 0.5));
    let mut model = Model::Linear(LinearModel::new(init, cfg.lambda, cfg.threshold));
    let z = model.lift_rows(&ds.x)?;

    let (mut f, mut g) = model.objective_grad(ds)?;
    let mut iterations = 0;
    for it in 0..cfg.max_epochs {
        if !f.is_finite() {
            return Err(Error::Training {
                epoch: it,
                message: "objective is not finite".into(),
            });
        }
        if g.amax() < 1e-11 {
            break;
        }
        iterations = it + 1;
        let theta = model.head().theta.clone();
        let s = &z * &theta;
        let w = s.map(|si| {
            let q = sigmoid(si);
            q * (1.0 - q) / n
        });
        let mut hess = DMatrix::from_diagonal_element(p, p, cfg.lambda + 1e-12);
        let zw = DMatrix::from_fn(ds.n(), p, |i, j| z[(i, j)] * w[i]);
        hess += z.tr_mul(&zw);
        let dir = match hess.cholesky() {
            Some(ch) => -ch.solve(&g),
            None => -g.clone(),
        };
        let slope = g.dot(&dir);
        // Below the objective's resolution Armijo is decided by round-off;
        // take the full Newton step while it still shrinks the gradient.
        if -slope <= 1e-14 * (1.0 + f.abs()) {
            let cand = model.with_head(&(&theta + &dir))?;
            let (fc, gc) = cand.objective_grad(ds)?;
            if !(gc.amax() < g.amax()) {
                break;
            }
            model = cand;
            f = fc;
            g = gc;
            continue;
        }
        let mut step = 1.0;
        let mut accepted = false;
        while step > 1e-12 {
            let cand = model.with_head(&(&theta + &dir * step))?;
            let (fc, gc) = cand.objective_grad(ds)?;
            if fc.is_finite() && fc <= f + 1e-4 * step * slope {
                model = cand;
                f = fc;
                g = gc;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Ok(Trained {
        grad_norm: g.norm(),
        final_objective: f,
        model,
        iterations,
    })
}

/// Refit the output layer of an MLP to optimality on its frozen embedding.
/// Linear models are returned unchanged.
pub fn refit_head(model: &Model, ds: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    if let Model::Linear(_) = model {
        return Ok(model.clone());
    }
    let lifted = model.lift_rows(&ds.x)?;
    let emb = lifted.columns(0, lifted.ncols() - 1).into_owned();
    let specs = (0..emb.ncols()).map(|j| FeatureSpec::continuous(format!("h{j}"))).collect();
    let eds = Dataset::new(emb, ds.y.clone(), specs)?;
    let head_cfg = TrainConfig {
        hidden_sizes: Vec::new(),
        lambda: model.lambda(),
        threshold: model.threshold(),
        max_epochs: cfg.max_epochs.max(100),
        ..cfg.clone()
    };
    let fit = train_linear(&eds, &head_cfg)?;
    model.with_head(&fit.model.head().theta)
}

fn init_mlp(d: usize, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Model {
    let mut hidden = Vec::with_capacity(cfg.hidden_sizes.len());
    let mut fan_in = d;
    for &h in &cfg.hidden_sizes {
        let limit = (6.0 / fan_in as f64).sqrt();
        let weights = DMatrix::from_fn(h, fan_in, |_, _| rng.random_range(-limit..limit));
        hidden.push(DenseLayer {
            weights,
            bias: DVector::zeros(h),
        });
        fan_in = h;
    }
    let limit = (6.0 / (fan_in + 1) as f64).sqrt();
    let mut theta = DVector::from_fn(fan_in + 1, |_, _| rng.random_range(-limit..limit));
    theta[fan_in] = 0.0;
    Model::Mlp(MlpModel {
        hidden,
        activation: cfg.activation,
        head: LinearModel::new(theta, cfg.lambda, cfg.threshold),
    })
}

/// Mini-batch Adam with early stopping on validation cross-entropy (or the
/// training objective when no validation set is supplied).
fn train_mlp(ds: &Dataset, val: Option<&Dataset>, cfg: &TrainConfig) -> Result<Trained> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = init_mlp(ds.d(), cfg, &mut rng);
    let np = model.n_params();
    let (beta1, beta2, eps) = (0.9, 0.999, 1e-8);
    let mut m1 = DVector::zeros(np);
    let mut m2 = DVector::zeros(np);
    let mut t = 0i32;

    let monitor = |m: &Model| -> Result<f64> {
        match val {
            Some(v) if v.n() > 0 => m.data_loss(v),
            _ => m.objective(ds),
        }
    };
    let mut best = model.clone();
    let mut best_score = monitor(&model)?;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..ds.n()).collect();
    let mut epochs = 0;

    for epoch in 0..cfg.max_epochs {
        epochs = epoch + 1;
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let sub = ds.subset(batch);
            let (f, g) = model.objective_grad(&sub)?;
            if !f.is_finite() || !g.iter().all(|v| v.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    message: "objective is not finite".into(),
                });
            }
            t += 1;
            m1 = &m1 * beta1 + &g * (1.0 - beta1);
            m2 = &m2 * beta2 + g.map(|v| v * v) * (1.0 - beta2);
            let c1 = 1.0 - beta1.powi(t);
            let c2 = 1.0 - beta2.powi(t);
            let step = m1.zip_map(&m2, |a, b| cfg.learning_rate * (a / c1) / ((b / c2).sqrt() + eps));
            model = model.with_params(&(model.params() - step))?;
        }
        let score = monitor(&model)?;
        if !score.is_finite() {
            return Err(Error::Training {
                epoch,
                message: "monitored loss is not finite".into(),
            });
        }
        if score < best_score - 1e-9 {
            best_score = score;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.early_stop_patience {
                break;
            }
        }
    }
    let (f, g) = best.objective_grad(ds)?;
    Ok(Trained {
        model: best,
        final_objective: f,
        grad_norm: g.norm(),
        iterations: epochs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_points() -> Dataset {
        Dataset::from_rows(&[vec![-1.0], vec![1.0]], vec![0, 1]).unwrap()
    }

    #[test]
    fn descent_from_zero_on_separable_pair() {
        let cfg = TrainConfig {
            lambda: 0.1,
            ..TrainConfig::default()
        };
        let t = train(&two_points(), &cfg).unwrap();
        assert!(t.final_objective < std::f64::consts::LN_2);
        assert!(t.grad_norm < 1e-8);
    }

    #[test]
    fn linear_training_is_bit_deterministic() {
        let cfg = TrainConfig {
            lambda: 0.1,
            seed: 5,
            ..TrainConfig::default()
        };
        let a = train(&two_points(), &cfg).unwrap();
        let b = train(&two_points(), &cfg).unwrap();
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn heavy_ridge_shrinks_weights() {
        let ds = Dataset::from_rows(
            &[vec![1.0, 2.0], vec![-1.0, 0.5], vec![0.3, -2.0], vec![2.0, 1.0]],
            vec![1, 0, 0, 1],
        )
        .unwrap();
        let lambda = 1e6;
        let t = train(
            &ds,
            &TrainConfig {
                lambda,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let norm = t.model.head().theta.norm();
        // Oracle: ‖θ̂‖ ≤ ‖∇Ĵ(0)‖ / λ.
        let zero = Model::Linear(LinearModel::new(DVector::zeros(3), 0.0, 0.0));
        let (_, g0) = zero.objective_grad(&ds).unwrap();
        assert!(norm <= g0.norm() / lambda + 1e-12);
        assert!(t.model.head().weights().norm() < 1e-2);
    }

    #[test]
    fn different_seeds_reach_the_same_linear_optimum() {
        let ds = Dataset::from_rows(
            &[
                vec![1.0, 2.0],
                vec![-1.0, 0.5],
                vec![0.3, -2.0],
                vec![2.0, 1.0],
                vec![0.1, 0.1],
            ],
            vec![1, 0, 0, 1, 1],
        )
        .unwrap();
        let a = train(
            &ds,
            &TrainConfig {
                seed: 1,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        let b = train(
            &ds,
            &TrainConfig {
                seed: 2,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!((a.model.head().theta.clone() - b.model.head().theta.clone()).amax() < 1e-8);
    }

    #[test]
    fn mlp_training_reduces_objective_and_is_deterministic() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| {
                let a = i as f64 / 40.0 * 6.0 - 3.0;
                vec![a, (a * 1.3).sin()]
            })
            .collect();
        let y = rows.iter().map(|r| u8::from(r[0] + r[1] > 0.0)).collect();
        let ds = Dataset::from_rows(&rows, y).unwrap();
        let cfg = TrainConfig {
            hidden_sizes: vec![8],
            learning_rate: 0.01,
            max_epochs: 60,
            seed: 3,
            ..TrainConfig::default()
        };
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert!(a.final_objective < std::f64::consts::LN_2);
    }

    #[test]
    fn head_refit_zeroes_the_head_gradient() {
        let rows: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let a = i as f64 / 50.0 * 6.0 - 3.0;
                vec![a, (a * 0.7).cos()]
            })
            .collect();
        let y = rows.iter().enumerate().map(|(i, r)| u8::from(r[0] - r[1] > 0.0 || i % 7 == 0)).collect();
        let ds = Dataset::from_rows(&rows, y).unwrap();
        let cfg = TrainConfig {
            hidden_sizes: vec![6],
            learning_rate: 0.01,
            max_epochs: 20,
            ..TrainConfig::default()
        };
        let base = train(&ds, &cfg).unwrap().model;
        let refit = refit_head(&base, &ds, &cfg).unwrap();
        let (f0, _) = base.objective_grad(&ds).unwrap();
        let (f1, g1) = refit.objective_grad(&ds).unwrap();
        assert!(f1 <= f0);
        let p = refit.lifted_dim();
        assert!(g1.rows(g1.len() - p, p).amax() < 1e-8);
        assert_eq!(refit.with_head(&base.head().theta).unwrap(), base);

        let lin = train(&ds, &TrainConfig::default()).unwrap().model;
        assert_eq!(refit_head(&lin, &ds, &cfg).unwrap(), lin);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&two_points(), &cfg), Err(Error::Config(_))));
    }
}
