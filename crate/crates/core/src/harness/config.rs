//! Experiment configuration schema (JSON, unknown keys rejected).

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::adversary::{AttackConfig, AttackMethod, NormKind, PerturbationSpec};
use crate::dynamics::InitMode;
use crate::topology::{GraphSpec, Strategy};

/// Default `ℓ∞` budget used when a config omits epsilon (8/255, the common
/// strong-attack setting; 3/255 and 128/255-`ℓ2` are the other presets).
pub const DEFAULT_EPS_LINF_STRONG: f64 = 8.0 / 255.0;
pub const DEFAULT_EPS_LINF_MILD: f64 = 3.0 / 255.0;
pub const DEFAULT_EPS_L2: f64 = 128.0 / 255.0;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub graph: GraphConfig,
    pub loss: LossConfig,
    pub perturbation: PerturbationConfig,
    pub training: TrainingBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theory: Option<TheoryOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub escape: Option<EscapeOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landscape: Option<LandscapeOptions>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.trials == 0 {
            return Err(HarnessError::ConfigInvalid("trials must be >= 1".into()));
        }
        if !(self.training.mu > 0.0) {
            return Err(HarnessError::ConfigInvalid("training.mu must be > 0".into()));
        }
        if self.training.batch == 0 {
            return Err(HarnessError::ConfigInvalid("training.batch must be >= 1".into()));
        }
        if self.training.horizon == 0 {
            return Err(HarnessError::ConfigInvalid("training.horizon must be >= 1".into()));
        }
        if self.training.strategies.is_empty() {
            return Err(HarnessError::ConfigInvalid("training.strategies must be nonempty".into()));
        }
        self.perturbation
            .spec()
            .validate()
            .map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?;
        if self.loss.agents() < 1 {
            return Err(HarnessError::ConfigInvalid("loss.agents must be >= 1".into()));
        }
        Ok(())
    }

    pub fn attack(&self) -> AttackConfig {
        AttackConfig { spec: self.perturbation.spec(), method: self.perturbation.attack.method }
    }

    /// Derived regime flags (never user-set): `1/B ≤ μ` and `ε ≤ μ²`.
    pub fn regime(&self) -> RegimeFlags {
        RegimeFlags {
            large_batch: 1.0 / self.training.batch as f64 <= self.training.mu,
            small_eps: self.perturbation.epsilon <= self.training.mu * self.training.mu,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RegimeFlags {
    pub large_batch: bool,
    pub small_eps: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphConfig {
    /// Erdős–Rényi draw patched to connectivity, all self-loops.
    Random { k: usize, edge_prob: f64, seed: u64 },
    /// Explicit edge list in the `validate-graph` wire format.
    Explicit {
        #[serde(rename = "K")]
        k: usize,
        edges: Vec<(usize, usize)>,
        self_loops: Vec<usize>,
    },
    Complete { k: usize },
    Ring { k: usize },
}

impl GraphConfig {
    pub fn build(&self) -> Result<crate::topology::Graph, HarnessError> {
        use crate::topology::Graph;
        let g = match self {
            GraphConfig::Random { k, edge_prob, seed } => Graph::random_connected(*k, *edge_prob, *seed),
            GraphConfig::Explicit { k, edges, self_loops } => {
                Graph::from_spec(&GraphSpec { k: *k, edges: edges.clone(), self_loops: self_loops.clone() })
                    .map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?
            }
            GraphConfig::Complete { k } => Graph::complete(*k),
            GraphConfig::Ring { k } => Graph::ring(*k),
        };
        Ok(g)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossConfig {
    /// `Q = ½(y − xᵀw)²` over heterogeneous planted-weight shards.
    RobustLinearRegression {
        agents: usize,
        dim: usize,
        samples_per_agent: usize,
        /// Scale of planted-weight offsets (centered across agents).
        heterogeneity: f64,
        label_noise: f64,
        seed: u64,
    },
    /// Per-agent quadratics with linear data coupling and antithetic shards
    /// (shard means are exactly zero, so `w*` and `d` are exact).
    QuadraticHeterogeneous {
        agents: usize,
        model_dim: usize,
        data_dim: usize,
        /// Per-agent sample count; must be even (antithetic pairs).
        samples_per_agent: usize,
        /// Scale of minimizer offsets (centered across agents).
        heterogeneity: f64,
        /// Scale of per-agent Hessian disagreement.
        hessian_spread: f64,
        /// Scale of the data coupling (drives gradient-noise size).
        coupling_scale: f64,
        seed: u64,
    },
    /// Two-basin landscape with configurable sharp/flat trace ratio.
    DoubleWell2d {
        agents: usize,
        data_dim: usize,
        samples_per_agent: usize,
        sharp_curvature: f64,
        cross_curvature: f64,
        flat_pos: f64,
        /// Risk value of the flat minimum relative to the sharp one (may be
        /// negative: escaping toward a lower, flatter basin).
        flat_lift: f64,
        trace_ratio: f64,
        /// Cubic skew of the sharp basin.
        #[serde(default)]
        skew: f64,
        /// Location of the shared sharp minimum. Keep it away from the
        /// origin so the attack direction is well defined at the minimizer.
        #[serde(default)]
        base: [f64; 2],
        /// Scale of per-agent shifts along the escape coordinate (centered).
        heterogeneity: f64,
        /// Scale of per-agent shifts along the cross coordinate; dominates
        /// the heterogeneity vector without flattening the two-basin shape.
        heterogeneity_cross: f64,
        coupling_scale: f64,
        seed: u64,
    },
}

impl LossConfig {
    pub fn agents(&self) -> usize {
        match self {
            LossConfig::RobustLinearRegression { agents, .. } => *agents,
            LossConfig::QuadraticHeterogeneous { agents, .. } => *agents,
            LossConfig::DoubleWell2d { agents, .. } => *agents,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationConfig {
    pub norm: NormKind,
    pub epsilon: f64,
    pub attack: AttackBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackBlock {
    pub method: AttackMethod,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
}

fn default_steps() -> usize {
    10
}

fn default_step_size() -> f64 {
    2.0 / 255.0
}

impl PerturbationConfig {
    pub fn spec(&self) -> PerturbationSpec {
        PerturbationSpec {
            norm: self.norm,
            epsilon: self.epsilon,
            steps: self.attack.steps,
            step_size: self.attack.step_size,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingBlock {
    pub mu: f64,
    pub batch: usize,
    pub horizon: usize,
    #[serde(default = "default_stride")]
    pub snapshot_stride: usize,
    #[serde(default = "default_init")]
    pub init: InitMode,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<Strategy>,
}

fn default_stride() -> usize {
    1
}

fn default_init() -> InitMode {
    InitMode::AtMinimizer
}

fn all_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryOptions {
    pub n_max: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EscapeOptions {
    pub gd_steps: usize,
    pub gd_mu: f64,
    pub tol: f64,
    /// Escape radius; pick about 10× the basin scale.
    pub bound: f64,
    /// Evaluate basin membership every this many snapshots.
    #[serde(default = "default_stride")]
    pub eval_stride: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandscapeOptions {
    pub n_dirs: usize,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_steps: usize,
}

impl LandscapeOptions {
    pub fn grid(&self) -> Vec<f64> {
        (0..self.alpha_steps)
            .map(|i| {
                self.alpha_min
                    + (self.alpha_max - self.alpha_min) * i as f64
                        / (self.alpha_steps.max(2) - 1) as f64
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let json = r#"{
            "seed": 1, "trials": 1, "bogus": true,
            "graph": {"type": "complete", "k": 2},
            "loss": {"kind": "robust_linear_regression", "agents": 2, "dim": 2,
                     "samples_per_agent": 4, "heterogeneity": 0.1, "label_noise": 0.1, "seed": 0},
            "perturbation": {"norm": "l2", "epsilon": 0.0, "attack": {"method": "exact"}},
            "training": {"mu": 0.05, "batch": 4, "horizon": 5}
        }"#;
        assert!(matches!(
            ExperimentConfig::from_json(json),
            Err(HarnessError::ConfigInvalid(_))
        ));
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let json = r#"{
            "seed": 1, "trials": 2,
            "graph": {"type": "random", "k": 4, "edge_prob": 0.5, "seed": 3},
            "loss": {"kind": "quadratic_heterogeneous", "agents": 4, "model_dim": 2,
                     "data_dim": 2, "samples_per_agent": 8, "heterogeneity": 0.5,
                     "hessian_spread": 0.2, "coupling_scale": 1.0, "seed": 5},
            "perturbation": {"norm": "linf", "epsilon": 0.0031372549019607846,
                             "attack": {"method": "pgd", "steps": 10, "step_size": 0.00784313725490196}},
            "training": {"mu": 0.05, "batch": 32, "horizon": 20}
        }"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        assert_eq!(cfg.training.strategies.len(), 3);
        assert_eq!(cfg.training.snapshot_stride, 1);
        assert!(matches!(cfg.training.init, InitMode::AtMinimizer));
        let flags = cfg.regime();
        assert!(flags.large_batch); // 1/32 <= 0.05
        assert!(!flags.small_eps); // 3/255 > 0.0025
    }

    #[test]
    fn regime_flags_follow_definitions() {
        let json = r#"{
            "seed": 1, "trials": 1,
            "graph": {"type": "complete", "k": 2},
            "loss": {"kind": "robust_linear_regression", "agents": 2, "dim": 2,
                     "samples_per_agent": 4, "heterogeneity": 0.1, "label_noise": 0.1, "seed": 0},
            "perturbation": {"norm": "l2", "epsilon": 0.001, "attack": {"method": "exact"}},
            "training": {"mu": 0.1, "batch": 16, "horizon": 5}
        }"#;
        let cfg = ExperimentConfig::from_json(json).unwrap();
        let flags = cfg.regime();
        assert!(flags.large_batch); // 1/16 = 0.0625 <= 0.1
        assert!(flags.small_eps); // 0.001 <= 0.01
    }
}
