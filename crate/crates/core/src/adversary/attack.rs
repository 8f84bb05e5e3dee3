//! Inner maximization (exact and PGD) and Danskin robust gradients.

use nalgebra::{DMatrix, DVector};

use super::loss::{LossModel, ModelKind};
use super::{AdversaryError, AttackConfig, AttackMethod, NormKind, PerturbationSpec, Sample};

/// Step used by symmetrized central-difference Hessians.
const FD_HESSIAN_STEP: f64 = 1e-4;

/// Result of a closed-form inner maximization. `unique` is false when the
/// maximizer is degenerate (constant objective or tied coordinates); training
/// proceeds with the returned maximizer either way.
#[derive(Debug, Clone)]
pub struct ExactInnerMax {
    pub delta: DVector<f64>,
    pub unique: bool,
}

/// Project `delta` onto the `ε`-ball of the given norm, in place.
pub fn project(norm: NormKind, epsilon: f64, delta: &mut DVector<f64>) {
    match norm {
        NormKind::L2 => {
            let n = delta.norm();
            if n > epsilon {
                *delta *= epsilon / n;
            }
        }
        NormKind::Linf => {
            for v in delta.iter_mut() {
                *v = v.clamp(-epsilon, epsilon);
            }
        }
    }
}

/// Projected gradient ascent on `δ ↦ Q(w; x+δ, y)` from `δ = 0`.
///
/// Keeps the best-loss iterate, so the returned perturbation never does worse
/// than the clean point. `steps = 1` with `step_size ≥ ε` is FGSM for `ℓ∞`.
pub fn inner_max_pgd(
    model: &LossModel,
    w: &DVector<f64>,
    sample: &Sample,
    spec: &PerturbationSpec,
) -> DVector<f64> {
    let d = sample.x.len();
    if spec.epsilon == 0.0 {
        return DVector::zeros(d);
    }
    let mut delta = DVector::zeros(d);
    let mut best = delta.clone();
    let mut best_loss = model.loss_at(w, &sample.x, sample.y);
    for _ in 0..spec.steps {
        let x_adv = &sample.x + &delta;
        let g = model.grad_x_at(w, &x_adv, sample.y);
        match spec.norm {
            NormKind::L2 => {
                let n = g.norm();
                if n == 0.0 {
                    break;
                }
                delta.axpy(spec.step_size / n, &g, 1.0);
            }
            NormKind::Linf => {
                for (dv, gv) in delta.iter_mut().zip(g.iter()) {
                    *dv += spec.step_size * gv.signum();
                }
            }
        }
        project(spec.norm, spec.epsilon, &mut delta);
        let loss = model.loss_at(w, &(&sample.x + &delta), sample.y);
        if loss > best_loss {
            best_loss = loss;
            best = delta.clone();
        }
    }
    best
}

/// Sign with the tie at zero broken to `+1`.
fn sign_plus(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Closed-form inner maximizer for the loss kinds that admit one.
pub fn inner_max_exact(
    model: &LossModel,
    w: &DVector<f64>,
    sample: &Sample,
    spec: &PerturbationSpec,
) -> Result<ExactInnerMax, AdversaryError> {
    let d = sample.x.len();
    if spec.epsilon == 0.0 {
        return Ok(ExactInnerMax { delta: DVector::zeros(d), unique: true });
    }
    // Both supported kinds have a perturbation gradient that is constant in
    // δ, so the maximizer is the ball extreme point along that direction.
    let direction = match model.kind() {
        ModelKind::RobustLinearRegression => {
            let r = sample.y - sample.x.dot(w);
            if w.norm() == 0.0 {
                return Ok(ExactInnerMax { delta: DVector::zeros(d), unique: false });
            }
            let mut dir = -sign_plus(r) * w;
            let unique = r != 0.0;
            if !unique {
                // symmetric pair of maximizers; report and return one
                dir = -w.clone();
            }
            (dir, unique)
        }
        ModelKind::QuadraticHeterogeneous { minimizer, coupling, .. } => {
            let a = -(coupling.transpose() * (w - minimizer));
            let unique = a.norm() != 0.0;
            (a, unique)
        }
        ModelKind::DoubleWell2d { .. } => return Err(AdversaryError::Unsupported),
    };
    let (dir, mut unique) = direction;
    let delta = match spec.norm {
        NormKind::L2 => {
            let n = dir.norm();
            if n == 0.0 {
                return Ok(ExactInnerMax { delta: DVector::zeros(d), unique: false });
            }
            (spec.epsilon / n) * dir
        }
        NormKind::Linf => DVector::from_fn(d, |i, _| {
            if dir[i] == 0.0 {
                unique = false;
                spec.epsilon
            } else {
                spec.epsilon * dir[i].signum()
            }
        }),
    };
    Ok(ExactInnerMax { delta, unique })
}

/// Solve the inner maximization with the configured method.
pub fn compute_delta(
    model: &LossModel,
    w: &DVector<f64>,
    sample: &Sample,
    attack: &AttackConfig,
) -> Result<DVector<f64>, AdversaryError> {
    match attack.method {
        AttackMethod::Exact => Ok(inner_max_exact(model, w, sample, &attack.spec)?.delta),
        AttackMethod::Pgd => Ok(inner_max_pgd(model, w, sample, &attack.spec)),
    }
}

/// Robust per-sample gradient: `∇_w Q(w; x + δ̂, y)` with `δ̂` held constant
/// (Danskin). Shard-averaging this yields `∇J_k(w)`.
pub fn robust_grad(
    model: &LossModel,
    w: &DVector<f64>,
    sample: &Sample,
    attack: &AttackConfig,
) -> Result<DVector<f64>, AdversaryError> {
    let delta = compute_delta(model, w, sample, attack)?;
    Ok(model.grad_w_at(w, &(&sample.x + delta), sample.y))
}

/// Robust local risk `J_k(w)`: shard average of the δ-maximized loss.
pub fn local_risk(
    model: &LossModel,
    w: &DVector<f64>,
    attack: &AttackConfig,
) -> Result<f64, AdversaryError> {
    let mut acc = 0.0;
    for s in model.shard().samples() {
        let delta = compute_delta(model, w, s, attack)?;
        acc += model.loss_at(w, &(&s.x + delta), s.y);
    }
    Ok(acc / model.shard().len() as f64)
}

/// `∇J_k(w)`: shard mean of the robust per-sample gradients.
pub fn risk_gradient(
    model: &LossModel,
    w: &DVector<f64>,
    attack: &AttackConfig,
) -> Result<DVector<f64>, AdversaryError> {
    let mut g = DVector::zeros(model.model_dim());
    for s in model.shard().samples() {
        g += robust_grad(model, w, s, attack)?;
    }
    Ok(g / model.shard().len() as f64)
}

/// `∇²J_k(w)`.
///
/// Analytic for the regression and quadratic kinds (the inner maximizer is
/// known in closed form, so the robust risk has an explicit Hessian away from
/// degeneracies); symmetrized central differences of the robust gradient for
/// the double well.
pub fn risk_hessian(
    model: &LossModel,
    w: &DVector<f64>,
    attack: &AttackConfig,
) -> Result<DMatrix<f64>, AdversaryError> {
    let eps = attack.spec.epsilon;
    match model.kind() {
        ModelKind::RobustLinearRegression => {
            let m = w.len();
            let wn = w.norm();
            if eps > 0.0 && wn < 1e-12 {
                return fd_risk_hessian(model, w, attack);
            }
            let mut h = DMatrix::zeros(m, m);
            for s in model.shard().samples() {
                let r = s.y - s.x.dot(w);
                match attack.spec.norm {
                    NormKind::L2 => {
                        let what = w / wn.max(1e-300);
                        let g = -sign_plus(r) * &s.x + eps * &what;
                        h += &g * g.transpose();
                        if eps > 0.0 {
                            let proj = DMatrix::identity(m, m) - &what * what.transpose();
                            h += (r.abs() + eps * wn) * (eps / wn) * proj;
                        }
                    }
                    NormKind::Linf => {
                        let sgn = DVector::from_fn(m, |i, _| sign_plus(w[i]));
                        let g = -sign_plus(r) * &s.x + eps * sgn;
                        h += &g * g.transpose();
                    }
                }
            }
            Ok(h / model.shard().len() as f64)
        }
        ModelKind::QuadraticHeterogeneous { hessian, minimizer, coupling } => {
            let mut h = hessian.clone();
            if eps > 0.0 {
                if let NormKind::L2 = attack.spec.norm {
                    let u = coupling.transpose() * (w - minimizer);
                    let un = u.norm();
                    if un < 1e-12 {
                        return fd_risk_hessian(model, w, attack);
                    }
                    let v = u / un;
                    let proj = DMatrix::identity(v.len(), v.len()) - &v * v.transpose();
                    h += (eps / un) * coupling * proj * coupling.transpose();
                }
                // ℓ∞: the robust term ε·‖Cᵀ(w−θ)‖₁ is piecewise linear, so
                // it contributes nothing to the Hessian away from kinks.
            }
            Ok(h)
        }
        ModelKind::DoubleWell2d { .. } => fd_risk_hessian(model, w, attack),
    }
}

/// Central-difference Hessian of the robust risk gradient, symmetrized.
fn fd_risk_hessian(
    model: &LossModel,
    w: &DVector<f64>,
    attack: &AttackConfig,
) -> Result<DMatrix<f64>, AdversaryError> {
    let m = w.len();
    let mut h = DMatrix::zeros(m, m);
    for j in 0..m {
        let mut wp = w.clone();
        let mut wm = w.clone();
        wp[j] += FD_HESSIAN_STEP;
        wm[j] -= FD_HESSIAN_STEP;
        let gp = risk_gradient(model, &wp, attack)?;
        let gm = risk_gradient(model, &wm, attack)?;
        let col = (gp - gm) / (2.0 * FD_HESSIAN_STEP);
        h.set_column(j, &col);
    }
    Ok(0.5 * (&h + h.transpose()))
}

/// Network risk `J(w) = (1/K) Σ_k J_k(w)`.
pub fn network_risk(
    models: &[LossModel],
    w: &DVector<f64>,
    attack: &AttackConfig,
) -> Result<f64, AdversaryError> {
    let mut acc = 0.0;
    for m in models {
        acc += local_risk(m, w, attack)?;
    }
    Ok(acc / models.len() as f64)
}

pub fn network_risk_gradient(
    models: &[LossModel],
    w: &DVector<f64>,
    attack: &AttackConfig,
) -> Result<DVector<f64>, AdversaryError> {
    let mut g = DVector::zeros(models[0].model_dim());
    for m in models {
        g += risk_gradient(m, w, attack)?;
    }
    Ok(g / models.len() as f64)
}

pub fn network_risk_hessian(
    models: &[LossModel],
    w: &DVector<f64>,
    attack: &AttackConfig,
) -> Result<DMatrix<f64>, AdversaryError> {
    let m0 = models[0].model_dim();
    let mut h = DMatrix::zeros(m0, m0);
    for m in models {
        h += risk_hessian(m, w, attack)?;
    }
    Ok(h / models.len() as f64)
}
