//! The three distributed adversarial training recursions.
//!
//! Per iteration every agent draws a mini-batch (uniform with replacement
//! from its own shard, one ChaCha stream per agent), perturbs each drawn
//! sample at its current local iterate, and applies the strategy's update:
//!
//! - centralized: one shared iterate moves by the average of all `K·B`
//!   perturbed gradients;
//! - diffusion: adapt locally, then combine neighbor intermediates;
//! - consensus: combine neighbor iterates, then subtract the local gradient
//!   evaluated at the *pre-mixing* iterate.
//!
//! All three are instances of one recursion on the stacked error vector,
//! `W̃_n = A₂(A₁·W̃_{n−1} − μ·col{batch gradients})`; [`unified_step`] is that
//! form and the per-strategy steps must agree with it to 1e−12 when fed the
//! same draws.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{robust_grad, AdversaryError, AttackConfig, LossModel};
use crate::linalg::{stack, unstack};
use crate::seeding::agent_data_streams;
use crate::topology::{combine_columns, CombinationMatrix, Strategy, StrategyMatrices};

/// Agreement tolerance for the centralized row-identity invariant.
pub const CONSENSUS_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("iterates diverged to non-finite values at iteration {iteration}")]
    DivergedNaN { iteration: usize },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
}

/// Where agents start relative to the reference minimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InitMode {
    AtMinimizer,
    Offset { value: Vec<f64> },
}

/// Step size, batching, horizon, and seeding for one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub mu: f64,
    pub batch: usize,
    pub horizon: usize,
    pub strategy: Strategy,
    pub seed: u64,
    pub init: InitMode,
    pub snapshot_stride: usize,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.mu >= 0.0) {
            return Err(DynamicsError::InvalidConfig(format!("mu {} must be >= 0", self.mu)));
        }
        if self.batch < 1 {
            return Err(DynamicsError::InvalidConfig("batch must be >= 1".into()));
        }
        if self.snapshot_stride < 1 {
            return Err(DynamicsError::InvalidConfig("snapshot_stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Large-batch regime flag: `1/B ≤ μ`.
    pub fn large_batch(&self) -> bool {
        1.0 / self.batch as f64 <= self.mu
    }

    /// Mild-attack regime flag: `ε ≤ μ²`.
    pub fn small_eps(&self, epsilon: f64) -> bool {
        epsilon <= self.mu * self.mu
    }
}

/// Per-agent iterates plus the reference minimizer they are measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    iterates: Vec<DVector<f64>>,
    reference: DVector<f64>,
    iteration: usize,
}

impl NetworkState {
    pub fn new(iterates: Vec<DVector<f64>>, reference: DVector<f64>, iteration: usize) -> Self {
        assert!(!iterates.is_empty());
        assert!(iterates.iter().all(|w| w.len() == reference.len()));
        NetworkState { iterates, reference, iteration }
    }

    /// All agents exactly at the reference point.
    pub fn at_minimizer(k: usize, reference: DVector<f64>) -> Self {
        NetworkState { iterates: vec![reference.clone(); k], reference, iteration: 0 }
    }

    pub fn with_offset(k: usize, reference: DVector<f64>, offset: &DVector<f64>) -> Self {
        let w = &reference + offset;
        NetworkState { iterates: vec![w; k], reference, iteration: 0 }
    }

    pub fn agent_count(&self) -> usize {
        self.iterates.len()
    }

    pub fn model_dim(&self) -> usize {
        self.reference.len()
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn rows(&self) -> &[DVector<f64>] {
        &self.iterates
    }

    pub fn reference(&self) -> &DVector<f64> {
        &self.reference
    }

    pub fn mean_iterate(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.model_dim());
        for w in &self.iterates {
            m += w;
        }
        m / self.agent_count() as f64
    }

    /// Stacked block error `col{w_k − w*}`.
    pub fn error_vector(&self) -> DVector<f64> {
        let blocks: Vec<DVector<f64>> =
            self.iterates.iter().map(|w| w - &self.reference).collect();
        stack(&blocks)
    }

    pub fn is_finite(&self) -> bool {
        self.iterates.iter().all(|w| w.iter().all(|v| v.is_finite()))
    }

    fn rows_identical(&self, tol: f64) -> bool {
        let first = &self.iterates[0];
        self.iterates.iter().all(|w| (w - first).amax() <= tol)
    }
}

/// Draw a mini-batch of sample indices, uniform with replacement.
pub fn draw_batch(rng: &mut ChaCha8Rng, shard_len: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.random_range(0..shard_len)).collect()
}

/// Mini-batch mean of robust per-sample gradients at a given point.
pub fn batch_gradient(
    model: &LossModel,
    w: &DVector<f64>,
    indices: &[usize],
    attack: &AttackConfig,
) -> Result<DVector<f64>, AdversaryError> {
    let mut g = DVector::zeros(model.model_dim());
    for &i in indices {
        g += robust_grad(model, w, model.shard().sample(i), attack)?;
    }
    Ok(g / indices.len() as f64)
}

/// Draw one mini-batch per agent and evaluate its robust gradient at that
/// agent's `points[k]`. This is the single sampling primitive all strategies
/// share, which is what makes paired comparisons exact.
pub fn batch_gradients(
    models: &[LossModel],
    points: &[DVector<f64>],
    batch: usize,
    attack: &AttackConfig,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<DVector<f64>>, AdversaryError> {
    models
        .iter()
        .zip(points)
        .zip(rngs)
        .map(|((m, w), rng)| {
            let idx = draw_batch(rng, m.shard().len(), batch);
            batch_gradient(m, w, &idx, attack)
        })
        .collect()
}

fn next_state(
    state: &NetworkState,
    iterates: Vec<DVector<f64>>,
) -> Result<NetworkState, DynamicsError> {
    let out = NetworkState {
        iterates,
        reference: state.reference.clone(),
        iteration: state.iteration + 1,
    };
    if out.is_finite() {
        Ok(out)
    } else {
        Err(DynamicsError::DivergedNaN { iteration: out.iteration })
    }
}

/// One centralized step: the shared iterate moves by the μ-scaled average of
/// all `K·B` perturbed gradients.
pub fn step_centralized(
    state: &NetworkState,
    models: &[LossModel],
    cfg: &TrainingConfig,
    attack: &AttackConfig,
    rngs: &mut [ChaCha8Rng],
) -> Result<NetworkState, DynamicsError> {
    assert!(
        state.rows_identical(CONSENSUS_TOL),
        "centralized state must keep all rows identical"
    );
    let k = state.agent_count();
    let shared = state.iterates[0].clone();
    let points = vec![shared.clone(); k];
    let grads = batch_gradients(models, &points, cfg.batch, attack, rngs)?;
    let mut mean_g = DVector::zeros(state.model_dim());
    for g in &grads {
        mean_g += g;
    }
    mean_g /= k as f64;
    let new_w = shared - cfg.mu * mean_g;
    next_state(state, vec![new_w; k])
}

/// One diffusion step: adapt at the local iterate, then combine neighbors.
pub fn step_diffusion(
    state: &NetworkState,
    models: &[LossModel],
    cfg: &TrainingConfig,
    attack: &AttackConfig,
    cm: &CombinationMatrix,
    rngs: &mut [ChaCha8Rng],
) -> Result<NetworkState, DynamicsError> {
    let grads = batch_gradients(models, state.rows(), cfg.batch, attack, rngs)?;
    let phi: Vec<DVector<f64>> = state
        .rows()
        .iter()
        .zip(&grads)
        .map(|(w, g)| w - cfg.mu * g)
        .collect();
    next_state(state, combine_columns(cm.a(), &phi))
}

/// One consensus step: combine neighbor iterates, then subtract the gradient
/// evaluated at the pre-mixing iterate.
pub fn step_consensus(
    state: &NetworkState,
    models: &[LossModel],
    cfg: &TrainingConfig,
    attack: &AttackConfig,
    cm: &CombinationMatrix,
    rngs: &mut [ChaCha8Rng],
) -> Result<NetworkState, DynamicsError> {
    let grads = batch_gradients(models, state.rows(), cfg.batch, attack, rngs)?;
    let phi = combine_columns(cm.a(), state.rows());
    let iterates: Vec<DVector<f64>> = phi
        .iter()
        .zip(&grads)
        .map(|(p, g)| p - cfg.mu * g)
        .collect();
    next_state(state, iterates)
}

/// Dispatch one step of the configured strategy.
pub fn step(
    state: &NetworkState,
    models: &[LossModel],
    cfg: &TrainingConfig,
    attack: &AttackConfig,
    cm: &CombinationMatrix,
    rngs: &mut [ChaCha8Rng],
) -> Result<NetworkState, DynamicsError> {
    match cfg.strategy {
        Strategy::Centralized => step_centralized(state, models, cfg, attack, rngs),
        Strategy::Diffusion => step_diffusion(state, models, cfg, attack, cm, rngs),
        Strategy::Consensus => step_consensus(state, models, cfg, attack, cm, rngs),
    }
}

/// The unified error recursion `W̃' = A₂(A₁·W̃ − μ·col{g_k})` on injected
/// gradients (same draws as the per-strategy step, not re-drawn).
pub fn unified_step(
    error: &DVector<f64>,
    grads: &[DVector<f64>],
    mu: f64,
    sm: &StrategyMatrices,
) -> DVector<f64> {
    let k = grads.len();
    let blocks = unstack(error, k);
    let mixed1 = combine_columns(&sm.a1, &blocks);
    let adapted: Vec<DVector<f64>> = mixed1
        .iter()
        .zip(grads)
        .map(|(b, g)| b - mu * g)
        .collect();
    stack(&combine_columns(&sm.a2, &adapted))
}

/// A recorded trajectory: snapshots at the configured stride plus the final
/// state, with an early-stop marker if the run went non-finite.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<NetworkState>,
    pub diverged: Option<usize>,
}

impl Trajectory {
    pub fn final_state(&self) -> &NetworkState {
        self.snapshots.last().expect("trajectory holds at least the initial state")
    }
}

/// Run a full trajectory. Deterministic given `cfg.seed`; divergence is
/// recorded (partial trace kept) rather than propagated as a panic.
pub fn run(
    models: &[LossModel],
    cfg: &TrainingConfig,
    attack: &AttackConfig,
    cm: &CombinationMatrix,
    w_star: &DVector<f64>,
) -> Result<Trajectory, DynamicsError> {
    cfg.validate()?;
    let k = models.len();
    let mut state = match &cfg.init {
        InitMode::AtMinimizer => NetworkState::at_minimizer(k, w_star.clone()),
        InitMode::Offset { value } => {
            let off = DVector::from_vec(value.clone());
            if off.len() != w_star.len() {
                return Err(DynamicsError::InvalidConfig(format!(
                    "offset dimension {} does not match model dimension {}",
                    off.len(),
                    w_star.len()
                )));
            }
            NetworkState::with_offset(k, w_star.clone(), &off)
        }
    };
    let mut rngs = agent_data_streams(cfg.seed, 0, k);
    let mut snapshots = vec![state.clone()];
    let mut diverged = None;
    for n in 1..=cfg.horizon {
        match step(&state, models, cfg, attack, cm, &mut rngs) {
            Ok(next) => state = next,
            Err(DynamicsError::DivergedNaN { iteration }) => {
                diverged = Some(iteration);
                break;
            }
            Err(e) => return Err(e),
        }
        if n % cfg.snapshot_stride == 0 || n == cfg.horizon {
            snapshots.push(state.clone());
        }
    }
    Ok(Trajectory { snapshots, diverged })
}
