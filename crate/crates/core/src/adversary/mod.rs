//! Agent loss models, adversarial inner maximization, and robust gradients.
//!
//! Each agent owns a loss `Q_k(w; x, y)` over a fixed data shard. The robust
//! local risk replaces every sample by its worst-case perturbation inside an
//! `ℓ2`/`ℓ∞` ball of radius `ε`; gradients of that risk follow from Danskin's
//! theorem (perturb, then differentiate treating the perturbation as a
//! constant). Three loss families are provided: robust linear regression and
//! a heterogeneous quadratic (both with closed-form inner maximizers that
//! serve as oracles for PGD) and a two-basin double-well landscape used by
//! the escape experiments.

mod attack;
mod landscape;
mod loss;

pub use attack::{
    inner_max_exact, inner_max_pgd, local_risk, network_risk, network_risk_gradient,
    network_risk_hessian, project, risk_gradient, risk_hessian, robust_grad, ExactInnerMax,
};
pub use landscape::landscape_profile;
pub use loss::{DoubleWell, LossModel, ModelKind};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("exact inner maximization is not available for this loss kind")]
    Unsupported,
    #[error("invalid perturbation spec: {0}")]
    InvalidSpec(String),
    #[error("invalid dataset shard: {0}")]
    InvalidShard(String),
}

/// Norm bounding the perturbation variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L2,
    Linf,
}

/// How the inner maximization is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Exact,
    Pgd,
}

/// Perturbation budget and PGD schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub norm: NormKind,
    pub epsilon: f64,
    pub steps: usize,
    pub step_size: f64,
}

impl PerturbationSpec {
    pub fn new(norm: NormKind, epsilon: f64, steps: usize, step_size: f64) -> Result<Self, AdversaryError> {
        let spec = PerturbationSpec { norm, epsilon, steps, step_size };
        spec.validate()?;
        Ok(spec)
    }

    /// Zero-budget spec: every attack returns δ = 0.
    pub fn clean() -> Self {
        PerturbationSpec { norm: NormKind::L2, epsilon: 0.0, steps: 1, step_size: 1.0 }
    }

    pub fn validate(&self) -> Result<(), AdversaryError> {
        if !(self.epsilon >= 0.0) {
            return Err(AdversaryError::InvalidSpec(format!("epsilon {} < 0", self.epsilon)));
        }
        if self.steps < 1 {
            return Err(AdversaryError::InvalidSpec("steps must be >= 1".into()));
        }
        if !(self.step_size > 0.0) {
            return Err(AdversaryError::InvalidSpec(format!("step_size {} <= 0", self.step_size)));
        }
        Ok(())
    }
}

/// Perturbation spec plus the attack method used to solve it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackConfig {
    pub spec: PerturbationSpec,
    pub method: AttackMethod,
}

impl AttackConfig {
    pub fn clean() -> Self {
        AttackConfig { spec: PerturbationSpec::clean(), method: AttackMethod::Exact }
    }

    pub fn exact(norm: NormKind, epsilon: f64) -> Self {
        AttackConfig {
            spec: PerturbationSpec { norm, epsilon, steps: 1, step_size: epsilon.max(1e-12) },
            method: AttackMethod::Exact,
        }
    }

    pub fn pgd(norm: NormKind, epsilon: f64, steps: usize, step_size: f64) -> Self {
        AttackConfig {
            spec: PerturbationSpec { norm, epsilon, steps, step_size },
            method: AttackMethod::Pgd,
        }
    }
}

/// One labelled observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x: DVector<f64>,
    pub y: f64,
}

/// An agent's fixed training data.
#[derive(Debug, Clone)]
pub struct DatasetShard {
    samples: Vec<Sample>,
}

impl DatasetShard {
    pub fn new(samples: Vec<Sample>) -> Result<Self, AdversaryError> {
        if samples.is_empty() {
            return Err(AdversaryError::InvalidShard("shard must hold at least one sample".into()));
        }
        let d = samples[0].x.len();
        if samples.iter().any(|s| s.x.len() != d) {
            return Err(AdversaryError::InvalidShard("inconsistent feature dimensions".into()));
        }
        Ok(DatasetShard { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn data_dim(&self) -> usize {
        self.samples[0].x.len()
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    /// Mean feature vector of the shard.
    pub fn mean_x(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.data_dim());
        for s in &self.samples {
            m += &s.x;
        }
        m / self.len() as f64
    }
}
