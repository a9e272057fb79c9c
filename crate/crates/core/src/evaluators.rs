//! Proxy ensembles of near-optimal models used to score counterfactual
//! robustness empirically.
//!
//! Every member admitted by the retrain, dropout and AWP builders satisfies
//! `L̂(member) ≤ L̂(base) + ε_target` on the training data. Boundary samples of
//! the ellipsoid live on the quadratic model of that set instead, so they are
//! not held to the exact objective bound.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{train_with_validation, Model, TrainConfig};
use crate::rashomon::RashomonEllipsoid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Retrain,
    Dropout,
    Awp,
    EllipsoidBoundary,
}

impl EnsembleKind {
    pub fn name(self) -> &'static str {
        match self {
            EnsembleKind::Retrain => "retrain",
            EnsembleKind::Dropout => "dropout",
            EnsembleKind::Awp => "awp",
            EnsembleKind::EllipsoidBoundary => "ellipsoid_boundary",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub size: usize,
    /// Objective tolerance of the evaluator's model set.
    #[serde(default)]
    pub epsilon_target: f64,
    #[serde(default)]
    pub seed: u64,
    /// Candidate noise variances, tried from largest admissible down.
    #[serde(default)]
    pub dropout_grid: Option<Vec<f64>>,
    /// Draws used to estimate the admitted fraction at each grid variance.
    #[serde(default = "default_probe")]
    pub dropout_probe: usize,
    #[serde(default)]
    pub awp_step: Option<f64>,
    #[serde(default = "default_awp_iters")]
    pub awp_max_iter: usize,
}

fn default_probe() -> usize {
    100
}

fn default_awp_iters() -> usize {
    500
}

impl EnsembleSpec {
    pub fn new(kind: EnsembleKind, size: usize, epsilon_target: f64, seed: u64) -> Self {
        EnsembleSpec {
            kind,
            size,
            epsilon_target,
            seed,
            dropout_grid: None,
            dropout_probe: default_probe(),
            awp_step: None,
            awp_max_iter: default_awp_iters(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Config("ensemble size must be at least 1".into()));
        }
        if !(self.epsilon_target >= 0.0 && self.epsilon_target.is_finite()) {
            return Err(Error::Config("epsilon_target must be finite and non-negative".into()));
        }
        if self.dropout_probe == 0 {
            return Err(Error::Config("dropout_probe must be positive".into()));
        }
        Ok(())
    }
}

/// `1e-4, 2e-4, …` doubling while at most 1.
pub fn default_dropout_grid() -> Vec<f64> {
    let mut g = Vec::new();
    let mut v = 1e-4;
    while v <= 1.0 {
        g.push(v);
        v *= 2.0;
    }
    g
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelEnsemble {
    pub spec: EnsembleSpec,
    /// `L̂(base)` on the construction data, when the builder used any.
    pub base_objective: Option<f64>,
    pub members: Vec<Model>,
    /// `L̂(member)` per member, when computed.
    pub member_objectives: Vec<Option<f64>>,
    /// Members requested but not admitted.
    pub shortfall: usize,
    /// Selected dropout variance.
    #[serde(default)]
    pub variance: Option<f64>,
    /// AWP members that could not take a single compliant step.
    #[serde(default)]
    pub stalled: usize,
}

impl ModelEnsemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("ensemble serializes")
    }
}

/// A differentiable objective over a flat parameter vector.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, theta: &DVector<f64>) -> Result<f64>;
    fn value_grad(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)>;
}

/// `L̂` of a model family as a function of its flat parameters.
pub struct ModelObjective<'a> {
    pub base: &'a Model,
    pub ds: &'a Dataset,
}

impl Objective for ModelObjective<'_> {
    fn dim(&self) -> usize {
        self.base.n_params()
    }

    fn value(&self, theta: &DVector<f64>) -> Result<f64> {
        self.base.with_params(theta)?.objective(self.ds)
    }

    fn value_grad(&self, theta: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
        self.base.with_params(theta)?.objective_grad(self.ds)
    }
}

/// Result of one adversarial walk.
#[derive(Debug, Clone)]
pub struct AwpWalk {
    pub theta: DVector<f64>,
    pub value: f64,
    pub steps: usize,
}

/// Walk uphill from `start` with fixed-length steps, first along `initial`
/// and then along the normalized gradient, keeping the last iterate whose
/// objective stays within `bound`.
pub fn awp_walk(
    obj: &dyn Objective,
    start: &DVector<f64>,
    initial: &DVector<f64>,
    bound: f64,
    step: f64,
    max_iter: usize,
) -> Result<AwpWalk> {
    let mut theta = start.clone();
    let mut value = obj.value(&theta)?;
    let mut dir = initial.normalize();
    let mut steps = 0;
    for _ in 0..max_iter {
        let cand = &theta + &dir * step;
        let (v, g) = obj.value_grad(&cand)?;
        if !(v <= bound) {
            break;
        }
        theta = cand;
        value = v;
        steps += 1;
        let n = g.norm();
        if n > 0.0 && n.is_finite() {
            dir = g / n;
        }
    }
    Ok(AwpWalk { theta, value, steps })
}

fn random_unit(rng: &mut ChaCha8Rng, p: usize) -> DVector<f64> {
    loop {
        let u = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut *rng));
        let n: f64 = u.norm();
        if n > 1e-12 {
            return u / n;
        }
    }
}

fn member_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64 + 1);
    rng
}

/// Independent retraining with seeds `seed+1 … seed+m`.
pub fn build_retrain(
    base: &Model,
    ds: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    spec: &EnsembleSpec,
) -> Result<ModelEnsemble> {
    spec.validate()?;
    let base_obj = base.objective(ds)?;
    let bound = base_obj + spec.epsilon_target;
    let runs: Vec<Result<(Model, f64)>> = (1..=spec.size as u64)
        .into_par_iter()
        .map(|k| {
            let c = TrainConfig {
                seed: spec.seed + k,
                ..cfg.clone()
            };
            let t = train_with_validation(ds, val, &c)?;
            let obj = t.model.objective(ds)?;
            Ok((t.model, obj))
        })
        .collect();
    let mut members = Vec::new();
    let mut objectives = Vec::new();
    for r in runs {
        let (m, obj) = r?;
        if obj <= bound {
            members.push(m);
            objectives.push(Some(obj));
        }
    }
    finish(spec, Some(base_obj), members, objectives, None, 0)
}

/// Multiplicative Gaussian weight noise `w(1 + N(0, var))`.
pub fn perturb(base: &Model, var: f64, rng: &mut ChaCha8Rng) -> Result<Model> {
    let sd = var.sqrt();
    let p = base.params();
    let noisy = p.map(|w| {
        let z: f64 = StandardNormal.sample(&mut *rng);
        w * (1.0 + sd * z)
    });
    base.with_params(&noisy)
}

/// Fraction of `probe` noisy draws at variance `var` that stay within `bound`.
pub fn admitted_fraction(
    base: &Model,
    ds: &Dataset,
    var: f64,
    bound: f64,
    probe: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut ok = 0;
    for _ in 0..probe {
        if perturb(base, var, rng)?.objective(ds)? <= bound {
            ok += 1;
        }
    }
    Ok(ok as f64 / probe as f64)
}

/// Largest grid variance whose admitted fraction is at least 5%.
pub fn tune_dropout_variance(base: &Model, ds: &Dataset, spec: &EnsembleSpec) -> Result<(f64, Vec<(f64, f64)>)> {
    let bound = base.objective(ds)? + spec.epsilon_target;
    let mut grid = spec.dropout_grid.clone().unwrap_or_else(default_dropout_grid);
    grid.sort_by(f64::total_cmp);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut table = Vec::with_capacity(grid.len());
    for &v in &grid {
        table.push((v, admitted_fraction(base, ds, v, bound, spec.dropout_probe, &mut rng)?));
    }
    match table.iter().rev().find(|(_, f)| *f >= 0.05) {
        Some(&(v, _)) => Ok((v, table)),
        None => Err(Error::TuningFailure { grid: table }),
    }
}

pub fn build_dropout(base: &Model, ds: &Dataset, spec: &EnsembleSpec) -> Result<ModelEnsemble> {
    spec.validate()?;
    let base_obj = base.objective(ds)?;
    let bound = base_obj + spec.epsilon_target;
    let (var, _) = tune_dropout_variance(base, ds, spec)?;
    let mut members = Vec::new();
    let mut objectives = Vec::new();
    for i in 0..spec.size {
        let mut rng = member_rng(spec.seed, i);
        for v in [var, var / 2.0] {
            let m = perturb(base, v, &mut rng)?;
            let obj = m.objective(ds)?;
            if obj <= bound {
                members.push(m);
                objectives.push(Some(obj));
                break;
            }
        }
    }
    finish(spec, Some(base_obj), members, objectives, Some(var), 0)
}

/// Default AWP step `0.01·‖θ̂‖/√p` (or `0.01/√p` at the origin).
pub fn default_awp_step(params: &DVector<f64>) -> f64 {
    let p = params.len().max(1) as f64;
    let n = params.norm();
    0.01 * if n > 0.0 { n } else { 1.0 } / p.sqrt()
}

pub fn build_awp(base: &Model, ds: &Dataset, spec: &EnsembleSpec) -> Result<ModelEnsemble> {
    spec.validate()?;
    let obj = ModelObjective { base, ds };
    let start = base.params();
    let base_obj = obj.value(&start)?;
    let bound = base_obj + spec.epsilon_target;
    let step = spec.awp_step.unwrap_or_else(|| default_awp_step(&start));
    let walks: Vec<Result<AwpWalk>> = (0..spec.size)
        .into_par_iter()
        .map(|i| {
            let mut rng = member_rng(spec.seed, i);
            let u = random_unit(&mut rng, start.len());
            awp_walk(&obj, &start, &u, bound, step, spec.awp_max_iter)
        })
        .collect();
    let mut members = Vec::new();
    let mut objectives = Vec::new();
    let mut stalled = 0;
    for w in walks {
        let w = w?;
        if w.steps == 0 {
            stalled += 1;
        }
        members.push(base.with_params(&w.theta)?);
        objectives.push(Some(w.value));
    }
    finish(spec, Some(base_obj), members, objectives, None, stalled)
}

/// Uniform boundary samples `θ̂ + √(2ε)·L⁻ᵀu` of the ellipsoid, each a copy of
/// `base` with its head replaced.
pub fn build_ellipsoid_sampler(base: &Model, ell: &RashomonEllipsoid, spec: &EnsembleSpec) -> Result<ModelEnsemble> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut members = Vec::with_capacity(spec.size);
    for _ in 0..spec.size {
        let u = random_unit(&mut rng, ell.dim());
        members.push(base.with_head(&ell.boundary_point(&u)?)?);
    }
    let objectives = vec![None; members.len()];
    finish(spec, None, members, objectives, None, 0)
}

/// Build any ensemble kind. The boundary sampler uses an ellipsoid at
/// `ε = ε_target` around `base` on `ds`.
pub fn build_ensemble(
    base: &Model,
    ds: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
    spec: &EnsembleSpec,
) -> Result<ModelEnsemble> {
    match spec.kind {
        EnsembleKind::Retrain => build_retrain(base, ds, val, cfg, spec),
        EnsembleKind::Dropout => build_dropout(base, ds, spec),
        EnsembleKind::Awp => build_awp(base, ds, spec),
        EnsembleKind::EllipsoidBoundary => {
            let ell = RashomonEllipsoid::build(base, ds, spec.epsilon_target)?;
            build_ellipsoid_sampler(base, &ell, spec)
        }
    }
}

fn finish(
    spec: &EnsembleSpec,
    base_objective: Option<f64>,
    members: Vec<Model>,
    member_objectives: Vec<Option<f64>>,
    variance: Option<f64>,
    stalled: usize,
) -> Result<ModelEnsemble> {
    if members.is_empty() {
        return Err(Error::EmptyEnsemble(format!(
            "no {} member satisfied the objective bound",
            spec.kind.name()
        )));
    }
    Ok(ModelEnsemble {
        spec: spec.clone(),
        base_objective,
        shortfall: spec.size - members.len(),
        members,
        member_objectives,
        variance,
        stalled,
    })
}
