use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::constraints::{Bounds, RecourseConstraints};
use super::target::RobustTarget;
use super::{Counterfactual, Source};
use crate::error::{check_dim, Error, Result};
use crate::numeric::{all_finite, sigmoid, softplus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContinuousConfig {
    pub alpha_pred: f64,
    pub beta_rob: f64,
    pub lambda_prox: f64,
    pub gamma_sparse: f64,
    pub learning_rate: f64,
    pub max_steps: usize,
    /// Replace the first certified iterate by the nearest certified point
    /// (exact when the certified set is convex).
    pub polish: bool,
}

impl Default for ContinuousConfig {
    fn default() -> Self {
        ContinuousConfig {
            alpha_pred: 1.0,
            beta_rob: 1.0,
            lambda_prox: 0.1,
            gamma_sparse: 0.0,
            learning_rate: 0.05,
            max_steps: 2000,
            polish: true,
        }
    }
}

impl ContinuousConfig {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha_pred, self.beta_rob, self.lambda_prox, self.gamma_sparse];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidInput(
                "loss coefficients must be finite and non-negative".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning rate must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidInput("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Generation loss and its gradient in `x`:
/// `α·sp(t−s) + β·sp(t−r) + λ‖x−x₀‖² + γ‖x−x₀‖₁`, with `s` the nominal and `r`
/// the worst-case score and `sp` the softplus.
pub fn generation_loss(
    target: &dyn RobustTarget,
    x: &DVector<f64>,
    x0: &DVector<f64>,
    cfg: &ContinuousConfig,
) -> Result<(f64, DVector<f64>)> {
    check_dim(x0.len(), x.len())?;
    let t = target.threshold();
    let (s, gs) = target.nominal(x)?;
    let (r, gr) = target.robust(x)?;
    let diff = x - x0;
    let loss = cfg.alpha_pred * softplus(t - s)
        + cfg.beta_rob * softplus(t - r)
        + cfg.lambda_prox * diff.norm_squared()
        + cfg.gamma_sparse * diff.iter().map(|v| v.abs()).sum::<f64>();
    let mut grad = gs * (-cfg.alpha_pred * sigmoid(t - s)) - gr * (cfg.beta_rob * sigmoid(t - r));
    grad += &diff * (2.0 * cfg.lambda_prox);
    if cfg.gamma_sparse > 0.0 {
        grad += diff.map(|v| {
            cfg.gamma_sparse
                * if v > 0.0 {
                    1.0
                } else if v < 0.0 {
                    -1.0
                } else {
                    0.0
                }
        });
    }
    Ok((loss, grad))
}

pub(crate) struct Descent {
    pub x: DVector<f64>,
    pub steps: usize,
    pub certified: bool,
    pub best_robust: f64,
}

/// Projected gradient descent on the generation loss, stopping at the first
/// certified iterate. `on_grad` sees every loss gradient.
pub(crate) fn descend(
    target: &dyn RobustTarget,
    x0: &DVector<f64>,
    cfg: &ContinuousConfig,
    bounds: &Bounds,
    mut on_grad: impl FnMut(&DVector<f64>),
) -> Result<Descent> {
    cfg.validate()?;
    check_dim(target.input_dim(), x0.len())?;
    check_dim(bounds.dim(), x0.len())?;
    let thr = target.threshold();
    let r0 = target.robust_value(x0)?;
    if r0 >= thr {
        return Ok(Descent {
            x: x0.clone(),
            steps: 0,
            certified: true,
            best_robust: r0,
        });
    }
    let mut x = x0.clone();
    let mut best = (r0, x0.clone());
    // Local copy: the proximity weight is relaxed when descent stalls short
    // of the certified set.
    let mut local = *cfg;
    for step in 0..cfg.max_steps {
        let (loss, g) = generation_loss(target, &x, x0, &local)?;
        if !loss.is_finite() || !all_finite(&g) {
            return Err(Error::Optimization { step });
        }
        on_grad(&g);
        let mut next = &x - g * cfg.learning_rate;
        bounds.project(&mut next);
        let r = target.robust_value(&next)?;
        if r >= thr {
            let x = finish(target, x0, &x, next, cfg, bounds)?;
            let best_robust = target.robust_value(&x)?;
            return Ok(Descent {
                x,
                steps: step + 1,
                certified: true,
                best_robust,
            });
        }
        if r > best.0 {
            best = (r, next.clone());
        }
        let moved = (&next - &x).amax();
        if moved <= 1e-7 * (1.0 + x.amax()) {
            if local.lambda_prox > 1e-9 || local.gamma_sparse > 1e-9 {
                local.lambda_prox *= 0.5;
                local.gamma_sparse *= 0.5;
            } else if moved == 0.0 {
                break;
            }
        }
        x = next;
    }
    if target.concave() {
        if let Some(p) = nearest_certified(target, x0, bounds, &best.1)? {
            if target.robust_value(&p)? >= thr {
                let best_robust = target.robust_value(&p)?;
                return Ok(Descent {
                    x: p,
                    steps: cfg.max_steps,
                    certified: true,
                    best_robust,
                });
            }
        }
    }
    Ok(Descent {
        x: best.1,
        steps: cfg.max_steps,
        certified: false,
        best_robust: best.0,
    })
}

/// Refine a step that crossed into the certified set.
fn finish(
    target: &dyn RobustTarget,
    x0: &DVector<f64>,
    prev: &DVector<f64>,
    crossed: DVector<f64>,
    cfg: &ContinuousConfig,
    bounds: &Bounds,
) -> Result<DVector<f64>> {
    let thr = target.threshold();
    // First certified point on the last step's segment.
    let (mut lo, mut hi) = (0.0, 1.0);
    let mut best = crossed.clone();
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let mut p = prev + (&crossed - prev) * mid;
        bounds.project(&mut p);
        if target.robust_value(&p)? >= thr {
            hi = mid;
            best = p;
        } else {
            lo = mid;
        }
    }
    if cfg.polish && cfg.gamma_sparse == 0.0 && target.concave() {
        if let Some(p) = nearest_certified(target, x0, bounds, &best)? {
            if (&p - x0).norm() <= (&best - x0).norm() {
                return Ok(p);
            }
        }
    }
    Ok(best)
}

/// Nearest point to `x0` within `bounds` whose worst-case score reaches the
/// threshold, for concave scores.
///
/// For a multiplier `μ ≥ 0`, `x(μ) = argmin_{x∈B} ½‖x−x₀‖² − μ r(x)` is unique
/// and `r(x(μ))` is non-decreasing in `μ`, so bisection on `μ` locates the
/// point where the constraint becomes active. Only points verified to be
/// certified are ever returned.
pub(crate) fn nearest_certified(
    target: &dyn RobustTarget,
    x0: &DVector<f64>,
    bounds: &Bounds,
    warm: &DVector<f64>,
) -> Result<Option<DVector<f64>>> {
    let thr = target.threshold();
    let start = bounds.projected(x0);
    if target.robust_value(&start)? >= thr {
        return Ok(Some(start));
    }
    let mut mu_lo = 0.0;
    let mut mu_hi = 1.0;
    let mut x_hi = prox_solve(target, x0, bounds, mu_hi, warm)?;
    let mut guard = 0;
    while target.robust_value(&x_hi)? < thr {
        mu_lo = mu_hi;
        mu_hi *= 4.0;
        guard += 1;
        if guard > 30 {
            return Ok(None);
        }
        x_hi = prox_solve(target, x0, bounds, mu_hi, &x_hi)?;
    }
    let mut x_lo = if mu_lo == 0.0 {
        start
    } else {
        prox_solve(target, x0, bounds, mu_lo, &x_hi)?
    };
    // r(x(μ)) − t is increasing in μ; bracketed secant with the Illinois
    // correction, falling back to bisection when the secant leaves the bracket.
    let mut f_lo = target.robust_value(&x_lo)? - thr;
    let mut f_hi = target.robust_value(&x_hi)? - thr;
    let tol = 1e-12 * (1.0 + thr.abs());
    let mut side = 0i8;
    for _ in 0..200 {
        if f_hi <= tol || mu_hi - mu_lo <= 1e-15 * mu_hi || (&x_hi - &x_lo).amax() <= 1e-14 {
            break;
        }
        let secant = mu_hi - f_hi * (mu_hi - mu_lo) / (f_hi - f_lo);
        let mid = if secant > mu_lo && secant < mu_hi && secant.is_finite() {
            secant
        } else {
            0.5 * (mu_lo + mu_hi)
        };
        let x_mid = prox_solve(target, x0, bounds, mid, &x_hi)?;
        let f_mid = target.robust_value(&x_mid)? - thr;
        if f_mid >= 0.0 {
            mu_hi = mid;
            x_hi = x_mid;
            f_hi = f_mid;
            if side == 1 {
                f_lo *= 0.5;
            }
            side = 1;
        } else {
            mu_lo = mid;
            x_lo = x_mid;
            f_lo = f_mid;
            if side == -1 {
                f_hi *= 0.5;
            }
            side = -1;
        }
    }
    Ok(Some(x_hi))
}

/// Spectral projected gradient on `½‖x−x₀‖² − μ r(x)` over the box.
fn prox_solve(
    target: &dyn RobustTarget,
    x0: &DVector<f64>,
    bounds: &Bounds,
    mu: f64,
    start: &DVector<f64>,
) -> Result<DVector<f64>> {
    let eval = |x: &DVector<f64>| -> Result<(f64, DVector<f64>)> {
        let (r, gr) = target.robust(x)?;
        let d = x - x0;
        Ok((0.5 * d.norm_squared() - mu * r, d - gr * mu))
    };
    let mut x = bounds.projected(start);
    let (mut f, mut g) = eval(&x)?;
    let mut step = 1.0 / (1.0 + mu);
    // Nonmonotone Armijo reference: the largest of the last few objectives.
    let mut recent = std::collections::VecDeque::from([f]);
    for _ in 0..5000 {
        let pg = bounds.projected(&(&x - &g)) - &x;
        if pg.amax() <= 1e-10 * (1.0 + x.amax()) {
            break;
        }
        let dir = bounds.projected(&(&x - &g * step)) - &x;
        let slope = g.dot(&dir);
        if slope >= 0.0 {
            break;
        }
        let f_ref = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut a = 1.0;
        let (x_new, f_new, g_new) = loop {
            let mut cand = &x + &dir * a;
            bounds.project(&mut cand);
            let (fc, gc) = eval(&cand)?;
            if fc <= f_ref + 1e-4 * a * slope || a < 1e-12 {
                break (cand, fc, gc);
            }
            a *= 0.5;
        };
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        step = if sy > 0.0 {
            (s.norm_squared() / sy).clamp(1e-12, 1e12)
        } else {
            1.0
        };
        let moved = s.amax();
        x = x_new;
        f = f_new;
        g = g_new;
        recent.push_back(f);
        if recent.len() > 10 {
            recent.pop_front();
        }
        if moved == 0.0 {
            break;
        }
    }
    Ok(x)
}

/// Gradient-based robust counterfactual. Uncertified results are returned
/// with `certified = false` rather than as an error.
pub fn generate_continuous(
    target: &dyn RobustTarget,
    x0: &DVector<f64>,
    cfg: &ContinuousConfig,
    cons: &RecourseConstraints,
) -> Result<Counterfactual> {
    let bounds = cons.bind(x0)?;
    let run = descend(target, x0, cfg, &bounds, |_| {})?;
    Counterfactual::assess(target, x0, run.x, &cons.specs, run.steps, Source::Continuous)
}

/// As [`generate_continuous`], with every feature outside `active` held at `x0`.
pub fn generate_masked(
    target: &dyn RobustTarget,
    x0: &DVector<f64>,
    cfg: &ContinuousConfig,
    cons: &RecourseConstraints,
    active: &[bool],
) -> Result<Counterfactual> {
    check_dim(x0.len(), active.len())?;
    let bounds = cons.bind(x0)?.restrict(active, x0);
    let run = descend(target, x0, cfg, &bounds, |_| {})?;
    Counterfactual::assess(target, x0, run.x, &cons.specs, run.steps, Source::Continuous)
}
