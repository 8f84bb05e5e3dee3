//! Empirical measurements over trajectories: excess risk, consensus
//! distance, basin membership, and Hessian-trace flatness.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::adversary::{
    network_risk, network_risk_gradient, network_risk_hessian, AdversaryError, AttackConfig,
    LossModel,
};
use crate::dynamics::NetworkState;
use crate::linalg::symmetric_eigen_desc;
use crate::topology::Strategy;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("basin test inconclusive after {steps} descent steps")]
    Inconclusive { steps: usize },
    #[error("descent step too large: gd_mu*lambda_max = {0} (needs < 1)")]
    StepTooLarge(f64),
    #[error(transparent)]
    Adversary(#[from] AdversaryError),
}

/// One aggregated row of a training trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceRecord {
    pub n: usize,
    pub strategy: Strategy,
    pub er_empirical: f64,
    pub consensus_distance: f64,
    /// `Ê‖W̃_n‖²` over trials.
    pub mean_sq_error: f64,
    /// Trial-averaged per-agent excess risks `J(w_k) − J(w*)`.
    pub per_agent_excess: Vec<f64>,
    pub escaped_fraction: Option<f64>,
}

/// Trial- and agent-averaged excess risk `(1/K)Σ_k Ê J(w_{k,n}) − J(w*)`.
///
/// `j_star` must be `J(w*)` computed with the same attack configuration; the
/// result may be slightly negative within Monte Carlo error near the minimum.
pub fn excess_risk(
    states: &[&NetworkState],
    models: &[LossModel],
    j_star: f64,
    attack: &AttackConfig,
) -> Result<f64, MetricsError> {
    let per_agent = per_agent_excess(states, models, j_star, attack)?;
    Ok(per_agent.iter().sum::<f64>() / per_agent.len() as f64)
}

/// Trial-averaged excess risk of each agent separately.
pub fn per_agent_excess(
    states: &[&NetworkState],
    models: &[LossModel],
    j_star: f64,
    attack: &AttackConfig,
) -> Result<Vec<f64>, MetricsError> {
    let k = states[0].agent_count();
    let mut acc = vec![0.0; k];
    for state in states {
        for (a, w) in state.rows().iter().enumerate() {
            acc[a] += network_risk(models, w, attack)? - j_star;
        }
    }
    for v in &mut acc {
        *v /= states.len() as f64;
    }
    Ok(acc)
}

/// Root-mean-square deviation of agents from their own average:
/// `√((1/K)Σ_k ‖w_k − w̄‖²)`.
pub fn consensus_distance(state: &NetworkState) -> f64 {
    let mean = state.mean_iterate();
    let k = state.agent_count() as f64;
    (state.rows().iter().map(|w| (w - &mean).norm_squared()).sum::<f64>() / k).sqrt()
}

/// Outcome of the noiseless-descent basin test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasinVerdict {
    /// Descent converged to `w*`.
    Inside,
    /// Descent left the bounding box or settled at a different minimum.
    Escaped,
    /// Descent neither converged nor left within the step budget.
    Inconclusive,
}

/// Parameters for the noiseless-descent membership test.
#[derive(Debug, Clone, Serialize)]
pub struct BasinTest {
    pub gd_steps: usize,
    pub gd_mu: f64,
    /// Radius around `w*` that counts as "converged to w*".
    pub tol: f64,
    /// Distance from `w*` beyond which the trajectory has left the basin.
    pub bound: f64,
}

/// Classify a point by running noiseless full-gradient descent on `J`.
///
/// Checks `gd_mu·λ_max(∇²J) < 1` at the probe before descending. A run that
/// ends at a stationary point with positive-definite curvature away from `w*`
/// has settled in another basin and counts as escaped; a saddle (such as the
/// barrier top) stays inconclusive.
pub fn basin_verdict(
    point: &DVector<f64>,
    w_star: &DVector<f64>,
    models: &[LossModel],
    attack: &AttackConfig,
    test: &BasinTest,
) -> Result<BasinVerdict, MetricsError> {
    let h = network_risk_hessian(models, point, attack)?;
    let (eigs, _) = symmetric_eigen_desc(&h);
    if test.gd_mu * eigs[0] >= 1.0 {
        return Err(MetricsError::StepTooLarge(test.gd_mu * eigs[0]));
    }
    let mut w = point.clone();
    for _ in 0..test.gd_steps {
        if (&w - w_star).norm() <= test.tol {
            return Ok(BasinVerdict::Inside);
        }
        if (&w - w_star).norm() > test.bound {
            return Ok(BasinVerdict::Escaped);
        }
        let g = network_risk_gradient(models, &w, attack)?;
        w -= test.gd_mu * g;
    }
    if (&w - w_star).norm() <= test.tol {
        return Ok(BasinVerdict::Inside);
    }
    // settled elsewhere? require a stationary point with PD curvature
    let g = network_risk_gradient(models, &w, attack)?;
    if g.norm() <= 1e-8 {
        let h_end = network_risk_hessian(models, &w, attack)?;
        let (eigs_end, _) = symmetric_eigen_desc(&h_end);
        if eigs_end[eigs_end.len() - 1] > 0.0 && (&w - w_star).norm() > test.tol {
            return Ok(BasinVerdict::Escaped);
        }
    }
    Ok(BasinVerdict::Inconclusive)
}

/// Boolean form of [`basin_verdict`]; inconclusive runs surface as an error.
pub fn in_basin(
    point: &DVector<f64>,
    w_star: &DVector<f64>,
    models: &[LossModel],
    attack: &AttackConfig,
    test: &BasinTest,
) -> Result<bool, MetricsError> {
    match basin_verdict(point, w_star, models, attack, test)? {
        BasinVerdict::Inside => Ok(true),
        BasinVerdict::Escaped => Ok(false),
        BasinVerdict::Inconclusive => Err(MetricsError::Inconclusive { steps: test.gd_steps }),
    }
}

/// Flatness measure: `Tr(∇²J(w))`.
pub fn flatness_trace(
    models: &[LossModel],
    w: &DVector<f64>,
    attack: &AttackConfig,
) -> Result<f64, MetricsError> {
    Ok(network_risk_hessian(models, w, attack)?.trace())
}

/// Mean squared stacked error over trials.
pub fn mean_sq_error(states: &[&NetworkState]) -> f64 {
    states.iter().map(|s| s.error_vector().norm_squared()).sum::<f64>() / states.len() as f64
}

/// `Tr(∇²J)` from a precomputed Hessian, for callers that already hold one.
pub fn trace_of(h: &DMatrix<f64>) -> f64 {
    h.trace()
}
