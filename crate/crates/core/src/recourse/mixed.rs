use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::constraints::{Bounds, RecourseConstraints};
use super::continuous::{generation_loss, ContinuousConfig};
use super::target::RobustTarget;
use super::{Counterfactual, Source};
use crate::data::{categorical_groups, FeatureKind};
use crate::error::{check_dim, Error, Result};
use crate::metrics::distance::l_mix;
use crate::numeric::all_finite;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixedConfig {
    pub temperature: f64,
    /// Discrete draws per sampling round.
    pub samples: usize,
    pub sample_every: usize,
    /// Further draws evaluated once the first certified draw appears.
    pub extra_samples: usize,
    pub seed: u64,
}

impl Default for MixedConfig {
    fn default() -> Self {
        MixedConfig {
            temperature: 0.5,
            samples: 8,
            sample_every: 10,
            extra_samples: 32,
            seed: 0,
        }
    }
}

/// `softmax((z + g) / τ)`.
pub fn gumbel_softmax(z: &[f64], g: &[f64], tau: f64) -> Vec<f64> {
    let a: Vec<f64> = z.iter().zip(g).map(|(zi, gi)| (zi + gi) / tau).collect();
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = a.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn gumbel(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    -(-u.ln()).ln()
}

/// A discrete variable: a one-hot group, or a binary column seen as the
/// second of two categories.
#[derive(Debug, Clone)]
struct Group {
    cols: Vec<usize>,
    binary: bool,
    logits: Vec<f64>,
}

impl Group {
    fn k(&self) -> usize {
        if self.binary {
            2
        } else {
            self.cols.len()
        }
    }

    fn write(&self, y: &[f64], x: &mut DVector<f64>) {
        if self.binary {
            x[self.cols[0]] = y[1];
        } else {
            for (c, v) in self.cols.iter().zip(y) {
                x[*c] = *v;
            }
        }
    }

    fn active(&self, x: &DVector<f64>) -> usize {
        if self.binary {
            usize::from(x[self.cols[0]] >= 0.5)
        } else {
            (0..self.cols.len())
                .max_by(|&a, &b| x[self.cols[a]].total_cmp(&x[self.cols[b]]))
                .unwrap_or(0)
        }
    }

    /// Gradient of the loss with respect to the relaxed vector.
    fn pull(&self, grad: &DVector<f64>) -> Vec<f64> {
        if self.binary {
            vec![0.0, grad[self.cols[0]]]
        } else {
            self.cols.iter().map(|&c| grad[c]).collect()
        }
    }
}

fn one_hot(k: usize, i: usize) -> Vec<f64> {
    (0..k).map(|j| if j == i { 1.0 } else { 0.0 }).collect()
}

/// Counterfactual over continuous and categorical features. Categorical
/// groups are optimized through a Gumbel-Softmax relaxation and periodically
/// sampled as exact one-hot vectors; the best certified sample by mixed
/// distance is returned.
pub fn generate_mixed(
    target: &dyn RobustTarget,
    x0: &DVector<f64>,
    cfg: &ContinuousConfig,
    mix: &MixedConfig,
    cons: &RecourseConstraints,
) -> Result<Counterfactual> {
    cfg.validate()?;
    check_dim(target.input_dim(), x0.len())?;
    if !(mix.temperature > 0.0) || mix.sample_every == 0 {
        return Err(Error::InvalidInput(
            "temperature and sample_every must be positive".into(),
        ));
    }
    let specs = &cons.specs;
    let bounds = cons.bind(x0)?;
    if target.certified(x0)? {
        return Counterfactual::assess(target, x0, x0.clone(), specs, 0, Source::Mixed);
    }

    let mut groups: Vec<Group> = Vec::new();
    for cols in categorical_groups(specs) {
        groups.push(Group {
            cols,
            binary: false,
            logits: Vec::new(),
        });
    }
    for (j, s) in specs.iter().enumerate() {
        if matches!(s.kind, FeatureKind::Binary) {
            groups.push(Group {
                cols: vec![j],
                binary: true,
                logits: Vec::new(),
            });
        }
    }
    // Groups with any fixed column stay at x0.
    groups.retain(|g| g.cols.iter().all(|&c| !bounds.fixed(c)));
    if groups.is_empty() {
        return Err(Error::InvalidInput(
            "mixed generation needs at least one changeable categorical feature".into(),
        ));
    }
    for g in &mut groups {
        let k = g.k();
        let a = g.active(x0);
        g.logits = (0..k)
            .map(|i| {
                if k == 1 {
                    0.0
                } else if i == a {
                    0.9f64.ln()
                } else {
                    (0.1 / (k - 1) as f64).ln()
                }
            })
            .collect();
    }
    let discrete: Vec<bool> = (0..x0.len()).map(|j| !specs[j].is_continuous()).collect();
    let mut cont_bounds = bounds.clone();
    for (j, &d) in discrete.iter().enumerate() {
        if d {
            cont_bounds.lo[j] = f64::NEG_INFINITY;
            cont_bounds.hi[j] = f64::INFINITY;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(mix.seed);
    let mut x = x0.clone();
    let mut best_seen = target.robust_value(x0)?;
    let mut found: Vec<DVector<f64>> = Vec::new();
    let mut steps = 0;
    let tau = mix.temperature;

    let draw = |groups: &[Group], base: &DVector<f64>, rng: &mut ChaCha8Rng, greedy: bool| {
        let mut cand = base.clone();
        for g in groups {
            let k = g.k();
            let pick = (0..k)
                .map(|i| (i, g.logits[i] + if greedy { 0.0 } else { gumbel(rng) }))
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .map_or(0, |p| p.0);
            g.write(&one_hot(k, pick), &mut cand);
        }
        snap(&mut cand, &bounds, &discrete);
        cand
    };

    for step in 0..=cfg.max_steps {
        if step % mix.sample_every == 0 || step == cfg.max_steps {
            for s in 0..=mix.samples {
                let cand = draw(&groups, &x, &mut rng, s == 0);
                let r = target.robust_value(&cand)?;
                best_seen = best_seen.max(r);
                if r >= target.threshold() {
                    found.push(cand);
                }
            }
            if !found.is_empty() {
                steps = step;
                for _ in 0..mix.extra_samples {
                    let cand = draw(&groups, &x, &mut rng, false);
                    if target.certified(&cand)? {
                        found.push(cand);
                    }
                }
                break;
            }
        }
        if step == cfg.max_steps {
            break;
        }
        let noise: Vec<Vec<f64>> = groups
            .iter()
            .map(|g| (0..g.k()).map(|_| gumbel(&mut rng)).collect())
            .collect();
        let relaxed: Vec<Vec<f64>> = groups
            .iter()
            .zip(&noise)
            .map(|(g, n)| gumbel_softmax(&g.logits, n, tau))
            .collect();
        for (g, y) in groups.iter().zip(&relaxed) {
            g.write(y, &mut x);
        }
        let (loss, grad) = generation_loss(target, &x, x0, cfg)?;
        if !loss.is_finite() || !all_finite(&grad) {
            return Err(Error::Optimization { step });
        }
        for j in 0..x.len() {
            if !discrete[j] {
                x[j] -= cfg.learning_rate * grad[j];
            }
        }
        cont_bounds.project(&mut x);
        for (g, y) in groups.iter_mut().zip(&relaxed) {
            let gy = g.pull(&grad);
            let dot: f64 = y.iter().zip(&gy).map(|(a, b)| a * b).sum();
            for i in 0..g.k() {
                g.logits[i] -= cfg.learning_rate * y[i] * (gy[i] - dot) / tau;
            }
        }
    }
    if found.is_empty() {
        return Err(Error::NoRobustCandidate {
            max_robust_logit: best_seen,
        });
    }
    let mut best: Option<(f64, DVector<f64>)> = None;
    for c in found {
        let d = l_mix(&c, x0, specs)?;
        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
            best = Some((d, c));
        }
    }
    let (_, x_c) = best.expect("at least one certified sample");
    Counterfactual::assess(target, x0, x_c, specs, steps, Source::Mixed)
}

/// Put fixed coordinates back at their anchor values.
fn snap(x: &mut DVector<f64>, bounds: &Bounds, discrete: &[bool]) {
    for j in 0..x.len() {
        if bounds.fixed(j) {
            x[j] = bounds.lo[j];
        } else if !discrete[j] {
            x[j] = x[j].clamp(bounds.lo[j], bounds.hi[j]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureSpec;
    use crate::models::{LinearModel, Model};
    use crate::rashomon::{RashomonEllipsoid, Stabilization};
    use crate::recourse::BinaryTarget;
    use nalgebra::DMatrix;

    #[test]
    fn low_temperature_approaches_argmax() {
        let z = [0.0, 1.0, -0.5];
        let y = gumbel_softmax(&z, &[0.0; 3], 0.01);
        assert!(y[1] >= 0.99);
        assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_category_is_fixed_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let y = gumbel_softmax(&[0.3], &[gumbel(&mut rng)], 0.5);
            assert_eq!(y, vec![1.0]);
        }
    }

    fn mixed_problem() -> (Model, RashomonEllipsoid, Vec<FeatureSpec>) {
        let cat = |member| FeatureSpec {
            kind: FeatureKind::Categorical { group: 0, member },
            ..FeatureSpec::continuous(format!("c={member}"))
        };
        let specs = vec![
            FeatureSpec::continuous("a"),
            cat(0),
            cat(1),
            cat(2),
            FeatureSpec {
                kind: FeatureKind::Binary,
                ..FeatureSpec::continuous("b")
            },
        ];
        let theta = DVector::from_column_slice(&[0.5, -1.0, 0.2, 1.5, 0.8, -0.6]);
        let m = Model::Linear(LinearModel::new(theta.clone(), 0.0, 0.0));
        let e = RashomonEllipsoid::from_hessian(theta, DMatrix::identity(6, 6) * 5.0, 0.01, Stabilization::default())
            .unwrap();
        (m, e, specs)
    }

    #[test]
    fn emitted_groups_are_exactly_one_hot() {
        let (m, e, specs) = mixed_problem();
        let t = BinaryTarget::new(&m, &e, 0.0).unwrap();
        let x0 = DVector::from_column_slice(&[-0.5, 1.0, 0.0, 0.0, 0.0]);
        let cons = RecourseConstraints::free(&specs);
        let cf = generate_mixed(&t, &x0, &ContinuousConfig::default(), &MixedConfig::default(), &cons).unwrap();
        assert!(cf.certified);
        let g = [cf.x_c[1], cf.x_c[2], cf.x_c[3]];
        assert_eq!(g.iter().sum::<f64>(), 1.0);
        assert_eq!(g.iter().filter(|v| **v == 1.0).count(), 1);
        assert!(cf.x_c[4] == 0.0 || cf.x_c[4] == 1.0);
    }

    #[test]
    fn locked_group_keeps_its_category() {
        let (m, e, specs) = mixed_problem();
        let t = BinaryTarget::new(&m, &e, 0.0).unwrap();
        let x0 = DVector::from_column_slice(&[-0.5, 1.0, 0.0, 0.0, 0.0]);
        let cons = RecourseConstraints::free(&specs).lock(1).lock(2).lock(3);
        let cf = generate_mixed(&t, &x0, &ContinuousConfig::default(), &MixedConfig::default(), &cons).unwrap();
        assert!(cf.certified);
        assert_eq!(&cf.x_c.as_slice()[1..4], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn same_seed_same_result() {
        let (m, e, specs) = mixed_problem();
        let t = BinaryTarget::new(&m, &e, 0.0).unwrap();
        let x0 = DVector::from_column_slice(&[-0.5, 1.0, 0.0, 0.0, 0.0]);
        let cons = RecourseConstraints::free(&specs);
        let a = generate_mixed(&t, &x0, &ContinuousConfig::default(), &MixedConfig::default(), &cons).unwrap();
        let b = generate_mixed(&t, &x0, &ContinuousConfig::default(), &MixedConfig::default(), &cons).unwrap();
        assert_eq!(a, b);
    }
}
