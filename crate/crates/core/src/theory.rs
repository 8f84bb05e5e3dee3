//! Minimizer-local theory: the short-term model and closed-form escaping
//! efficiency.
//!
//! Near a local minimizer `w*` of the network robust risk, the stacked error
//! recursion is approximated by freezing every agent's Hessian at `w*`:
//!
//! ```text
//! W̃'_n = A₂(A₁ − μ·H)·W̃'_{n−1} − μ·A₂·d − μ·A₂·s_n
//! ```
//!
//! with `H = diag{H_k*}`, heterogeneity `d = col{∇J_k(w*)}`, and gradient
//! noise `s_n`. Because this recursion is linear, its mean and covariance
//! propagate exactly ([`er_exact_linear`]), giving a Monte-Carlo-free oracle
//! for the excess risk `ER_n = (1/2K)·E‖W̃'_n‖²_{I⊗H̄}`. The closed forms
//! [`e_of_n`] and [`f_terms`] are the leading-order predictions; their sum
//! [`predict_er`] must approach the oracle as `μ → 0`.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::adversary::{
    network_risk_gradient, risk_gradient, risk_hessian, AdversaryError, AttackConfig, LossModel,
};
use crate::dynamics::{self, DynamicsError, InitMode, TrainingConfig};
use crate::linalg::{
    block_weighted_sq_norm, kron_identity, psd_sqrt, stack, symmetric_eigen_desc, unstack,
};
use crate::noise::{estimate_covariance, exact_covariance};
use crate::seeding::{make_rng, stream};
use crate::topology::{CombinationMatrix, StrategyMatrices};

/// Gradient-norm bound certifying "at a minimizer".
pub const MINIMIZER_GRAD_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("w* is not a local minimizer: {0}")]
    NotAtMinimizer(String),
    #[error("step size too large: mu*lambda_max = {0} (needs < 1)")]
    StepTooLarge(f64),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Frozen quantities at the minimizer.
#[derive(Debug, Clone)]
pub struct TheoryContext {
    pub w_star: DVector<f64>,
    /// Per-agent robust-risk Hessians `H_k* = ∇²J_k(w*)`.
    pub h_blocks: Vec<DMatrix<f64>>,
    /// Network Hessian `H̄ = (1/K)Σ H_k*`.
    pub h_bar: DMatrix<f64>,
    /// Stacked heterogeneity vector `d = col{∇J_k(w*)}`, length `K·M`.
    pub d: DVector<f64>,
    /// Per-agent `B = 1` noise covariances at `w*`.
    pub r_blocks: Vec<DMatrix<f64>>,
    /// Network noise covariance `R̄_s = (1/K²)Σ R_k`.
    pub r_bar: DMatrix<f64>,
    /// `max_k ‖H_k* − H̄‖₂`.
    pub rho_disagreement: f64,
}

impl TheoryContext {
    pub fn agent_count(&self) -> usize {
        self.h_blocks.len()
    }

    pub fn model_dim(&self) -> usize {
        self.h_bar.nrows()
    }

    /// `Σ_k d_k`; zero (to tolerance) at a stationary point of `J`.
    pub fn d_sum(&self) -> DVector<f64> {
        let blocks = unstack(&self.d, self.agent_count());
        let mut s = DVector::zeros(self.model_dim());
        for b in &blocks {
            s += b;
        }
        s
    }
}

/// Freeze Hessians, heterogeneity, and noise covariances at `w_star`.
///
/// Covariances are enumerated exactly over the shards when `mc_samples = 0`
/// and Monte-Carlo estimated with `mc_samples` draws otherwise (both are
/// estimates of the same empirical expectation; enumeration has no sampling
/// error).
pub fn build_context(
    models: &[LossModel],
    w_star: &DVector<f64>,
    attack: &AttackConfig,
    mc_samples: usize,
    seed: u64,
) -> Result<TheoryContext, TheoryError> {
    let k = models.len();
    let m = models[0].model_dim();

    let grad = network_risk_gradient(models, w_star, attack)?;
    if grad.norm() > MINIMIZER_GRAD_TOL {
        return Err(TheoryError::NotAtMinimizer(format!(
            "‖∇J(w*)‖ = {} exceeds {MINIMIZER_GRAD_TOL}",
            grad.norm()
        )));
    }

    let mut h_blocks = Vec::with_capacity(k);
    let mut d_blocks = Vec::with_capacity(k);
    let mut r_blocks = Vec::with_capacity(k);
    for (idx, model) in models.iter().enumerate() {
        h_blocks.push(risk_hessian(model, w_star, attack)?);
        d_blocks.push(risk_gradient(model, w_star, attack)?);
        let r = if mc_samples == 0 {
            exact_covariance(model, w_star, attack)?
        } else {
            estimate_covariance(model, w_star, 1, attack, mc_samples, seed ^ idx as u64)?.covariance
        };
        r_blocks.push(r);
    }

    let mut h_bar = DMatrix::zeros(m, m);
    for h in &h_blocks {
        h_bar += h;
    }
    h_bar /= k as f64;

    let (h_eigs, _) = symmetric_eigen_desc(&h_bar);
    if h_eigs[h_eigs.len() - 1] <= 0.0 {
        return Err(TheoryError::NotAtMinimizer(format!(
            "H̄ is not positive definite (min eigenvalue {})",
            h_eigs[h_eigs.len() - 1]
        )));
    }

    let mut r_bar = DMatrix::zeros(m, m);
    for r in &r_blocks {
        r_bar += r;
    }
    r_bar /= (k * k) as f64;

    let rho_disagreement = h_blocks
        .iter()
        .map(|h| {
            let (vals, _) = symmetric_eigen_desc(&(h - &h_bar));
            vals.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
        })
        .fold(0.0, f64::max);

    Ok(TheoryContext {
        w_star: w_star.clone(),
        h_blocks,
        h_bar,
        d: stack(&d_blocks),
        r_blocks,
        r_bar,
        rho_disagreement,
    })
}

/// Precomputed matrices of the linear short-term recursion.
#[derive(Debug, Clone)]
pub struct ShortTermModel {
    /// `A₂(A₁ − μ·H)`, acting on the stacked error.
    pub m_lin: DMatrix<f64>,
    /// `A₂ ⊗ I`.
    pub a2_block: DMatrix<f64>,
    /// `μ·A₂·d`.
    pub drift: DVector<f64>,
    pub mu: f64,
    k: usize,
    m: usize,
}

impl ShortTermModel {
    pub fn new(ctx: &TheoryContext, sm: &StrategyMatrices, mu: f64) -> Self {
        let k = ctx.agent_count();
        let m = ctx.model_dim();
        let a1b = kron_identity(&sm.a1, m);
        let a2b = kron_identity(&sm.a2, m);
        let mut h_block = DMatrix::zeros(k * m, k * m);
        for (i, h) in ctx.h_blocks.iter().enumerate() {
            h_block.view_mut((i * m, i * m), (m, m)).copy_from(h);
        }
        let m_lin = &a2b * (a1b - mu * h_block);
        let drift = mu * &a2b * &ctx.d;
        ShortTermModel { m_lin, a2_block: a2b, drift, mu, k, m }
    }

    /// One linear step with injected per-agent noise blocks.
    pub fn step(&self, error: &DVector<f64>, noise: &[DVector<f64>]) -> DVector<f64> {
        &self.m_lin * error - &self.drift - self.mu * (&self.a2_block * stack(noise))
    }

    pub fn agent_count(&self) -> usize {
        self.k
    }

    pub fn model_dim(&self) -> usize {
        self.m
    }
}

/// Noise closure for the short-term recursion.
pub enum NoiseSource<'a> {
    /// Deterministic drift only.
    Zero,
    /// Gaussian with per-agent covariance `R_k(w*)/B`, independent across
    /// agents and iterations (the closure Theorem 1 is stated under).
    Gaussian(GaussianNoise),
    /// Re-draw mini-batches from the shards at `w*` (cross-check mode; pairs
    /// exactly with a true run fed the same streams).
    Resample {
        models: &'a [LossModel],
        attack: &'a AttackConfig,
        batch: usize,
        shard_means: Vec<DVector<f64>>,
        w_star: DVector<f64>,
    },
}

/// Cached square roots of `R_k/B`.
pub struct GaussianNoise {
    factors: Vec<DMatrix<f64>>,
}

impl<'a> NoiseSource<'a> {
    pub fn gaussian(ctx: &TheoryContext, batch: usize) -> NoiseSource<'static> {
        let factors = ctx
            .r_blocks
            .iter()
            .map(|r| psd_sqrt(&(r / batch as f64)))
            .collect();
        NoiseSource::Gaussian(GaussianNoise { factors })
    }

    pub fn resample(
        models: &'a [LossModel],
        attack: &'a AttackConfig,
        batch: usize,
        w_star: &DVector<f64>,
    ) -> Result<NoiseSource<'a>, AdversaryError> {
        let shard_means = models
            .iter()
            .map(|m| risk_gradient(m, w_star, attack))
            .collect::<Result<_, _>>()?;
        Ok(NoiseSource::Resample {
            models,
            attack,
            batch,
            shard_means,
            w_star: w_star.clone(),
        })
    }

    /// Draw one iteration's worth of per-agent noise blocks.
    pub fn draw(
        &self,
        model_dim: usize,
        agents: usize,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<Vec<DVector<f64>>, AdversaryError> {
        match self {
            NoiseSource::Zero => Ok(vec![DVector::zeros(model_dim); agents]),
            NoiseSource::Gaussian(g) => Ok(g
                .factors
                .iter()
                .zip(rngs)
                .map(|(f, rng)| {
                    let z: DVector<f64> =
                        DVector::from_fn(f.ncols(), |_, _| StandardNormal.sample(rng));
                    f * z
                })
                .collect()),
            NoiseSource::Resample { models, attack, batch, shard_means, w_star } => models
                .iter()
                .zip(shard_means)
                .zip(rngs)
                .map(|((model, mean), rng)| {
                    let idx = dynamics::draw_batch(rng, model.shard().len(), *batch);
                    Ok(dynamics::batch_gradient(model, w_star, &idx, attack)? - mean)
                })
                .collect(),
        }
    }
}

/// One step of the short-term recursion with noise drawn from `source`.
pub fn short_term_step(
    error: &DVector<f64>,
    model: &ShortTermModel,
    source: &NoiseSource,
    rngs: &mut [ChaCha8Rng],
) -> Result<DVector<f64>, TheoryError> {
    let noise = source.draw(model.model_dim(), model.agent_count(), rngs)?;
    Ok(model.step(error, &noise))
}

fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let m = blocks[0].nrows();
    let k = blocks.len();
    let mut out = DMatrix::zeros(k * m, k * m);
    for (i, b) in blocks.iter().enumerate() {
        out.view_mut((i * m, i * m), (m, m)).copy_from(b);
    }
    out
}

/// `Tr((I⊗H̄)·C)` over the diagonal blocks of `C`.
fn trace_block_weighted(cov: &DMatrix<f64>, h_bar: &DMatrix<f64>) -> f64 {
    let m = h_bar.nrows();
    let k = cov.nrows() / m;
    let mut acc = 0.0;
    for i in 0..k {
        let block = cov.view((i * m, i * m), (m, m));
        acc += (h_bar * block).trace();
    }
    acc
}

/// Exact second-moment propagation of the short-term model under the
/// Gaussian-at-`w*` noise closure.
///
/// Returns `ER'_n` for `n = 0..=n_max`, where iteration `n` means `n + 1`
/// applications of the recursion from `W̃'_{-1} = 0`: with
/// `M = A₂(A₁ − μH)`, the mean and covariance evolve as
/// `m_n = M·m_{n−1} − μ·A₂·d` and `C_n = M·C_{n−1}·Mᵀ + μ²·A₂·R/B·A₂ᵀ`,
/// and `ER'_n = (1/2K)(m_nᵀ(I⊗H̄)m_n + Tr((I⊗H̄)C_n))`. No Monte Carlo error.
pub fn er_exact_linear(
    ctx: &TheoryContext,
    sm: &StrategyMatrices,
    mu: f64,
    batch: usize,
    n_max: usize,
) -> Vec<f64> {
    let k = ctx.agent_count();
    let model = ShortTermModel::new(ctx, sm, mu);
    let r_scaled: Vec<DMatrix<f64>> =
        ctx.r_blocks.iter().map(|r| r / batch as f64).collect();
    let r_block = block_diag(&r_scaled);
    let noise_add = mu * mu * (&model.a2_block * r_block * model.a2_block.transpose());

    let km = k * ctx.model_dim();
    let mut mean = DVector::zeros(km);
    let mut cov = DMatrix::zeros(km, km);
    let mut out = Vec::with_capacity(n_max + 1);
    for _ in 0..=n_max {
        mean = &model.m_lin * mean - &model.drift;
        cov = &model.m_lin * cov * model.m_lin.transpose() + &noise_add;
        let bias = block_weighted_sq_norm(&mean, &ctx.h_bar);
        let fluct = trace_block_weighted(&cov, &ctx.h_bar);
        out.push((bias + fluct) / (2.0 * k as f64));
    }
    out
}

/// Monte Carlo estimate of `ER'_n` from short-term trajectories (plus its
/// standard error), for self-consistency checks against [`er_exact_linear`].
pub fn monte_carlo_short_term_er(
    ctx: &TheoryContext,
    sm: &StrategyMatrices,
    mu: f64,
    batch: usize,
    n_max: usize,
    trials: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let k = ctx.agent_count();
    let model = ShortTermModel::new(ctx, sm, mu);
    let source = NoiseSource::gaussian(ctx, batch);
    let per_trial: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let mut rngs: Vec<ChaCha8Rng> = (0..k as u64)
                .map(|a| make_rng(seed, &[stream::SHORT_TERM, t, a]))
                .collect();
            let mut w = DVector::zeros(k * ctx.model_dim());
            let mut vals = Vec::with_capacity(n_max + 1);
            for _ in 0..=n_max {
                w = short_term_step(&w, &model, &source, &mut rngs).expect("gaussian noise");
                vals.push(block_weighted_sq_norm(&w, &ctx.h_bar) / (2.0 * k as f64));
            }
            vals
        })
        .collect();
    let mut mean = vec![0.0; n_max + 1];
    let mut se = vec![0.0; n_max + 1];
    for vals in &per_trial {
        for (i, v) in vals.iter().enumerate() {
            mean[i] += v;
        }
    }
    for m in &mut mean {
        *m /= trials as f64;
    }
    for vals in &per_trial {
        for (i, v) in vals.iter().enumerate() {
            se[i] += (v - mean[i]) * (v - mean[i]);
        }
    }
    for s in &mut se {
        *s = (*s / (trials as f64 * (trials as f64 - 1.0))).sqrt();
    }
    (mean, se)
}

/// `e(n) = ¼·Tr((I − (I − μH̄)^{2(n+1)})·R̄_s)`, via the eigendecomposition
/// of `H̄` (never by repeated multiplication).
pub fn e_of_n(ctx: &TheoryContext, mu: f64, n: usize) -> Result<f64, TheoryError> {
    let (values, vectors) = symmetric_eigen_desc(&ctx.h_bar);
    let lam_max = values[0];
    if mu * lam_max >= 1.0 {
        return Err(TheoryError::StepTooLarge(mu * lam_max));
    }
    let exponent = 2 * (n as i32 + 1);
    let m = ctx.model_dim();
    let damped = DMatrix::from_fn(m, m, |i, j| {
        vectors[(i, j)] * (1.0 - mu * values[j]).powi(exponent)
    });
    let shrink = DMatrix::identity(m, m) - &damped * vectors.transpose();
    Ok(0.25 * (shrink * &ctx.r_bar).trace())
}

/// The heterogeneity terms of Theorem 1:
/// `f_con(n) = (1/2K)·‖dᵀV_α(I−P_α)⁻¹(I−P_α^{n+1})‖²` and `f_dif` with an
/// extra `P_α` factor, both in the `I_{K−1}⊗H̄` weighted norm.
///
/// Always `0 ≤ f_dif(n) ≤ f_con(n)`; both vanish when `d = 0` or `K = 1`.
pub fn f_terms(ctx: &TheoryContext, cm: &CombinationMatrix, n: usize) -> (f64, f64) {
    let k = ctx.agent_count();
    if k <= 1 {
        return (0.0, 0.0);
    }
    let d_blocks = unstack(&ctx.d, k);
    let v_alpha = cm.v_alpha();
    let p_alpha = cm.p_alpha();
    let mut f_con = 0.0;
    let mut f_dif = 0.0;
    for j in 0..k - 1 {
        let mut y = DVector::zeros(ctx.model_dim());
        for (a, dk) in d_blocks.iter().enumerate() {
            y.axpy(v_alpha[(a, j)], dk, 1.0);
        }
        let p = p_alpha[j];
        let geom = (1.0 - p.powi(n as i32 + 1)) / (1.0 - p);
        let energy = (&ctx.h_bar * &y).dot(&y);
        f_con += geom * geom * energy;
        f_dif += (p * geom) * (p * geom) * energy;
    }
    let scale = 1.0 / (2.0 * k as f64);
    (scale * f_con, scale * f_dif)
}

/// Leading-order escaping-efficiency predictions at iteration `n`.
#[derive(Debug, Clone)]
pub struct TheoryPrediction {
    pub n: usize,
    pub e_n: f64,
    pub f_con_n: f64,
    pub f_dif_n: f64,
    pub er_cen: f64,
    pub er_con: f64,
    pub er_dif: f64,
}

/// `ER_cen = (μ/B)e(n)`, `ER_dif = ER_cen + μ²f_dif(n)`,
/// `ER_con = ER_cen + μ²f_con(n)`. The ordering
/// `ER_cen ≤ ER_dif ≤ ER_con` holds by construction of the `f` terms.
pub fn predict_er(
    ctx: &TheoryContext,
    cm: &CombinationMatrix,
    mu: f64,
    batch: usize,
    n: usize,
) -> Result<TheoryPrediction, TheoryError> {
    let e_n = e_of_n(ctx, mu, n)?;
    let (f_con_n, f_dif_n) = f_terms(ctx, cm, n);
    let base = mu / batch as f64 * e_n;
    let pred = TheoryPrediction {
        n,
        e_n,
        f_con_n,
        f_dif_n,
        er_cen: base,
        er_dif: base + mu * mu * f_dif_n,
        er_con: base + mu * mu * f_con_n,
    };
    debug_assert!(pred.er_cen <= pred.er_dif + 1e-15 && pred.er_dif <= pred.er_con + 1e-15);
    Ok(pred)
}

/// Paired gap between the true dynamics and the short-term model.
#[derive(Debug, Clone)]
pub struct ApproximationError {
    /// `Ê‖W̃_n‖²` (true dynamics), indexed by iteration `0..=horizon`.
    pub mean_sq_true: Vec<f64>,
    /// `Ê‖W̃'_n‖²` (short-term model, resampled noise, paired streams).
    pub mean_sq_short: Vec<f64>,
    /// `|Ê‖W̃'_n‖² − Ê‖W̃_n‖²|`.
    pub gap: Vec<f64>,
    /// `gap / Ê‖W̃_n‖²`.
    pub ratio: Vec<f64>,
}

/// Estimate `|E‖W̃'_n‖² − E‖W̃_n‖²|` with paired seeds: the true run and the
/// short-term run consume identical mini-batch index streams, so the
/// difference estimator has far lower variance than two independent runs.
pub fn approximation_error(
    models: &[LossModel],
    ctx: &TheoryContext,
    cm: &CombinationMatrix,
    sm: &StrategyMatrices,
    cfg: &TrainingConfig,
    attack: &AttackConfig,
    trials: usize,
    seed: u64,
) -> Result<ApproximationError, TheoryError> {
    let k = models.len();
    let horizon = cfg.horizon;
    let model = ShortTermModel::new(ctx, sm, cfg.mu);
    let source = NoiseSource::resample(models, attack, cfg.batch, &ctx.w_star)?;

    let per_trial: Result<Vec<(Vec<f64>, Vec<f64>)>, TheoryError> = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let trial_seed = crate::seeding::derive_seed(seed, &[stream::TRIAL, t]);
            let run_cfg = TrainingConfig {
                seed: trial_seed,
                snapshot_stride: 1,
                horizon,
                ..cfg.clone()
            };
            let traj = dynamics::run(models, &run_cfg, attack, cm, &ctx.w_star)?;
            if traj.diverged.is_some() || traj.snapshots.len() != horizon + 1 {
                return Err(TheoryError::Dynamics(DynamicsError::DivergedNaN {
                    iteration: traj.diverged.unwrap_or(0),
                }));
            }
            let sq_true: Vec<f64> = traj
                .snapshots
                .iter()
                .map(|s| s.error_vector().norm_squared())
                .collect();

            // identical streams -> identical batch index draws
            let mut rngs = crate::seeding::agent_data_streams(trial_seed, 0, k);
            let mut w = match &run_cfg.init {
                InitMode::AtMinimizer => DVector::zeros(k * ctx.model_dim()),
                InitMode::Offset { value } => {
                    stack(&vec![DVector::from_vec(value.clone()); k])
                }
            };
            let mut sq_short = Vec::with_capacity(horizon + 1);
            sq_short.push(w.norm_squared());
            for _ in 0..horizon {
                w = short_term_step(&w, &model, &source, &mut rngs)?;
                sq_short.push(w.norm_squared());
            }
            Ok((sq_true, sq_short))
        })
        .collect();

    let per_trial = per_trial?;
    let mut mean_sq_true = vec![0.0; horizon + 1];
    let mut mean_sq_short = vec![0.0; horizon + 1];
    for (st, ss) in &per_trial {
        for i in 0..=horizon {
            mean_sq_true[i] += st[i];
            mean_sq_short[i] += ss[i];
        }
    }
    for v in mean_sq_true.iter_mut().chain(mean_sq_short.iter_mut()) {
        *v /= trials as f64;
    }
    let gap: Vec<f64> = mean_sq_true
        .iter()
        .zip(&mean_sq_short)
        .map(|(t, s)| (s - t).abs())
        .collect();
    let ratio: Vec<f64> = gap
        .iter()
        .zip(&mean_sq_true)
        .map(|(g, t)| if *t > 0.0 { g / t } else { 0.0 })
        .collect();
    Ok(ApproximationError { mean_sq_true, mean_sq_short, gap, ratio })
}

/// Split a stacked error into its consensus mean component
/// `w̄ = (1/√K)(𝟙ᵀ⊗I)W̃` and the disagreement component
/// `w̌ = (V_αᵀ⊗I)W̃`; `‖W̃‖² = ‖w̄‖² + ‖w̌‖²`.
pub fn bar_check_decompose(
    error: &DVector<f64>,
    cm: &CombinationMatrix,
) -> (DVector<f64>, DVector<f64>) {
    let k = cm.k();
    let blocks = unstack(error, k);
    let m = blocks[0].len();
    let scale = 1.0 / (k as f64).sqrt();
    let mut bar = DVector::zeros(m);
    for b in &blocks {
        bar.axpy(scale, b, 1.0);
    }
    let v_alpha = cm.v_alpha();
    let mut check = DVector::zeros((k - 1) * m);
    for j in 0..k.saturating_sub(1) {
        let mut row = DVector::zeros(m);
        for (a, b) in blocks.iter().enumerate() {
            row.axpy(v_alpha[(a, j)], b, 1.0);
        }
        check.rows_mut(j * m, m).copy_from(&row);
    }
    (bar, check)
}
