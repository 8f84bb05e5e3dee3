//! Simulation and theory toolkit for distributed adversarial training.
//!
//! The crate implements the three classic distributed stochastic-gradient
//! strategies (centralized, consensus, diffusion) with per-sample adversarial
//! perturbations, together with the linear short-term model of the error
//! dynamics near a local minimizer and closed-form escaping-efficiency
//! predictions. Everything is exercised on small synthetic agent networks
//! where exact oracles (closed-form attacks, analytic Hessians, exact
//! second-moment propagation) are available, so the theory can be validated
//! instead of merely plotted.
//!
//! Module map:
//! - [`topology`]: combination matrices (Metropolis weights), spectral
//!   decomposition, strategy matrix pairs, block extension.
//! - [`adversary`]: loss models over data shards, inner maximization
//!   (exact + PGD), robust gradients via Danskin's theorem, landscape probes.
//! - [`dynamics`]: the three training recursions and the unified error-vector
//!   recursion, plus seeded trajectory runs.
//! - [`noise`]: gradient-noise sampling and covariance estimation.
//! - [`theory`]: frozen minimizer-local context, short-term model, exact
//!   linear second-moment oracle, and the closed-form ER predictions.
//! - [`metrics`]: empirical excess risk, consensus distance, basin membership,
//!   Hessian-trace flatness.
//! - [`harness`]: configs, seed derivation, suite orchestration, CSV/SVG
//!   emission.

pub mod adversary;
pub mod dynamics;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod noise;
pub mod seeding;
pub mod theory;
pub mod topology;

pub use adversary::{
    AttackConfig, AttackMethod, DatasetShard, LossModel, NormKind, PerturbationSpec, Sample,
};
pub use dynamics::{InitMode, NetworkState, TrainingConfig, Trajectory};
pub use theory::{TheoryContext, TheoryPrediction};
pub use topology::{CombinationMatrix, Graph, Strategy, StrategyMatrices};
