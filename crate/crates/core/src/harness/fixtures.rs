//! Seeded ensemble generators and bundled experiment fixtures.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{
    AttackBlock, EscapeOptions, ExperimentConfig, GraphConfig, LossConfig, PerturbationConfig,
    TheoryOptions, TrainingBlock,
};
use super::HarnessError;
use crate::adversary::{
    network_risk_gradient, network_risk_hessian, AttackConfig, AttackMethod, DatasetShard,
    DoubleWell, LossModel, NormKind, Sample,
};
use crate::dynamics::InitMode;
use crate::seeding::{make_rng, stream};
use crate::topology::Strategy;

/// Centered per-agent offsets: mean subtracted so they straddle zero.
fn centered_offsets(rng: &mut impl Rng, agents: usize, dim: usize, scale: f64) -> Vec<DVector<f64>> {
    let mut offs: Vec<DVector<f64>> = (0..agents)
        .map(|_| DVector::from_fn(dim, |_, _| scale * (rng.random::<f64>() * 2.0 - 1.0)))
        .collect();
    let mean = offs.iter().fold(DVector::zeros(dim), |acc, o| acc + o) / agents as f64;
    for o in &mut offs {
        *o -= &mean;
    }
    offs
}

/// Antithetic shard: (x, −x) pairs, so the shard mean is exactly zero.
fn antithetic_shard(rng: &mut impl Rng, samples: usize, dim: usize) -> DatasetShard {
    assert!(samples >= 2 && samples % 2 == 0, "antithetic shards need an even sample count");
    let mut out = Vec::with_capacity(samples);
    for _ in 0..samples / 2 {
        let x: DVector<f64> = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        out.push(Sample { x: -&x, y: 0.0 });
        out.push(Sample { x, y: 0.0 });
    }
    DatasetShard::new(out).expect("nonempty antithetic shard")
}

/// Build the agent ensemble described by a loss config.
pub fn build_ensemble(loss: &LossConfig) -> Result<Vec<LossModel>, HarnessError> {
    match loss {
        LossConfig::RobustLinearRegression {
            agents,
            dim,
            samples_per_agent,
            heterogeneity,
            label_noise,
            seed,
        } => {
            let mut rng = make_rng(*seed, &[stream::FIXTURE]);
            let base = DVector::from_fn(*dim, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let offsets = centered_offsets(&mut rng, *agents, *dim, *heterogeneity);
            let mut models = Vec::with_capacity(*agents);
            for off in offsets {
                let planted = &base + off;
                let samples: Vec<Sample> = (0..*samples_per_agent)
                    .map(|_| {
                        let x: DVector<f64> =
                            DVector::from_fn(*dim, |_, _| StandardNormal.sample(&mut rng));
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        let y = x.dot(&planted) + label_noise * noise;
                        Sample { x, y }
                    })
                    .collect();
                models.push(LossModel::robust_linear_regression(
                    DatasetShard::new(samples).map_err(|e| HarnessError::ConfigInvalid(e.to_string()))?,
                ));
            }
            Ok(models)
        }
        LossConfig::QuadraticHeterogeneous {
            agents,
            model_dim,
            data_dim,
            samples_per_agent,
            heterogeneity,
            hessian_spread,
            coupling_scale,
            seed,
        } => {
            if samples_per_agent % 2 != 0 {
                return Err(HarnessError::ConfigInvalid(
                    "quadratic shards are antithetic; samples_per_agent must be even".into(),
                ));
            }
            let mut rng = make_rng(*seed, &[stream::FIXTURE]);
            let m = *model_dim;
            let base = DVector::from_fn(m, |_, _| rng.random::<f64>() * 2.0 - 1.0);
            let offsets = centered_offsets(&mut rng, *agents, m, *heterogeneity);
            let mut models = Vec::with_capacity(*agents);
            for off in offsets {
                let s = DMatrix::from_fn(m, m, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                });
                let hessian =
                    DMatrix::identity(m, m) + (*hessian_spread / m as f64) * (&s * s.transpose());
                let coupling = DMatrix::from_fn(m, *data_dim, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    coupling_scale * z / (*data_dim as f64).sqrt()
                });
                let shard = antithetic_shard(&mut rng, *samples_per_agent, *data_dim);
                models.push(LossModel::quadratic(hessian, &base + off, coupling, shard));
            }
            Ok(models)
        }
        LossConfig::DoubleWell2d {
            agents,
            data_dim,
            samples_per_agent,
            sharp_curvature,
            cross_curvature,
            flat_pos,
            flat_lift,
            trace_ratio,
            skew,
            base,
            heterogeneity,
            heterogeneity_cross,
            coupling_scale,
            seed,
        } => {
            if samples_per_agent % 2 != 0 {
                return Err(HarnessError::ConfigInvalid(
                    "double-well shards are antithetic; samples_per_agent must be even".into(),
                ));
            }
            let mut rng = make_rng(*seed, &[stream::FIXTURE]);
            let well = DoubleWell::with_trace_ratio(
                *sharp_curvature,
                *cross_curvature,
                *flat_pos,
                *flat_lift,
                *trace_ratio,
                *skew,
            );
            let mut offsets = centered_offsets(&mut rng, *agents, 2, 1.0);
            for o in &mut offsets {
                o[0] = base[0] + o[0] * heterogeneity;
                o[1] = base[1] + o[1] * heterogeneity_cross;
            }
            let mut models = Vec::with_capacity(*agents);
            for off in offsets {
                let coupling = DMatrix::from_fn(2, *data_dim, |_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    coupling_scale * z / (*data_dim as f64).sqrt()
                });
                let shard = antithetic_shard(&mut rng, *samples_per_agent, *data_dim);
                models.push(LossModel::double_well(well.clone(), off, coupling, shard));
            }
            Ok(models)
        }
    }
}

/// The natural starting guess for the network minimizer of an ensemble.
pub fn minimizer_guess(models: &[LossModel], loss: &LossConfig) -> DVector<f64> {
    match loss {
        LossConfig::RobustLinearRegression { dim, .. } => {
            // pooled least squares
            let rows: usize = models.iter().map(|m| m.shard().len()).sum();
            let mut x = DMatrix::zeros(rows, *dim);
            let mut y = DVector::zeros(rows);
            let mut r = 0;
            for m in models {
                for s in m.shard().samples() {
                    x.row_mut(r).copy_from(&s.x.transpose());
                    y[r] = s.y;
                    r += 1;
                }
            }
            x.svd(true, true).solve(&y, 1e-12).expect("pooled least squares")
        }
        LossConfig::QuadraticHeterogeneous { model_dim, .. } => {
            // Homogeneous ensembles share the minimizer exactly; returning it
            // untouched keeps downstream heterogeneity vectors bitwise zero.
            let thetas: Vec<&DVector<f64>> = models
                .iter()
                .filter_map(|model| match model.kind() {
                    crate::adversary::ModelKind::QuadraticHeterogeneous { minimizer, .. } => {
                        Some(minimizer)
                    }
                    _ => None,
                })
                .collect();
            if thetas.windows(2).all(|w| w[0] == w[1]) {
                return thetas[0].clone();
            }
            // stationarity of the clean risk: (ΣH_k)w = Σ(H_kθ_k + C_k·x̄_k);
            // antithetic shards have x̄_k = 0 exactly.
            let m = *model_dim;
            let mut h_sum = DMatrix::zeros(m, m);
            let mut rhs = DVector::zeros(m);
            for model in models {
                if let crate::adversary::ModelKind::QuadraticHeterogeneous {
                    hessian,
                    minimizer,
                    ..
                } = model.kind()
                {
                    h_sum += hessian;
                    rhs += hessian * minimizer;
                }
            }
            h_sum.cholesky().expect("positive definite Hessian sum").solve(&rhs)
        }
        LossConfig::DoubleWell2d { base, .. } => DVector::from_vec(base.to_vec()),
    }
}

/// Damped Newton polish of the network robust-risk minimizer.
///
/// Returns the guess unchanged if its gradient already meets the tolerance
/// (this keeps analytically-exact minimizers bitwise intact).
pub fn find_minimizer(
    models: &[LossModel],
    attack: &AttackConfig,
    guess: DVector<f64>,
    max_step: f64,
) -> Result<DVector<f64>, HarnessError> {
    const TOL: f64 = 1e-12;
    let mut w = guess;
    for _ in 0..200 {
        let g = network_risk_gradient(models, &w, attack)?;
        if g.norm() <= TOL {
            return Ok(w);
        }
        let h = network_risk_hessian(models, &w, attack)?;
        let mut step = match h.cholesky() {
            Some(c) => c.solve(&g),
            None => g.clone(),
        };
        if step.norm() > max_step {
            step *= max_step / step.norm();
        }
        w -= step;
    }
    let g = network_risk_gradient(models, &w, attack)?;
    if g.norm() <= 1e-9 {
        Ok(w)
    } else {
        Err(HarnessError::MinimizerNotFound(format!(
            "Newton stalled with gradient norm {}",
            g.norm()
        )))
    }
}

/// Bundled fixture: heterogeneous quadratic network on eight agents.
pub fn hetero_quad_k8() -> ExperimentConfig {
    ExperimentConfig {
        seed: 7,
        trials: 64,
        graph: GraphConfig::Random { k: 8, edge_prob: 0.5, seed: 11 },
        loss: LossConfig::QuadraticHeterogeneous {
            agents: 8,
            model_dim: 4,
            data_dim: 4,
            samples_per_agent: 64,
            heterogeneity: 1.0,
            hessian_spread: 0.3,
            coupling_scale: 1.0,
            seed: 21,
        },
        perturbation: PerturbationConfig {
            norm: NormKind::L2,
            epsilon: 0.0,
            attack: AttackBlock { method: AttackMethod::Exact, steps: 1, step_size: 1.0 },
        },
        training: TrainingBlock {
            mu: 0.05,
            batch: 64,
            horizon: 20,
            snapshot_stride: 1,
            init: InitMode::AtMinimizer,
            strategies: Strategy::ALL.to_vec(),
        },
        theory: Some(TheoryOptions { n_max: 20 }),
        escape: None,
        landscape: None,
    }
}

/// Random heterogeneous quadratic fixture family (growing seeds give the "20
/// random fixtures" used in validation).
pub fn random_hetero_quad(index: u64, k: usize, mu: f64, batch: usize) -> ExperimentConfig {
    let horizon = (1.0 / mu).floor() as usize;
    ExperimentConfig {
        seed: 1000 + index,
        trials: 512,
        graph: GraphConfig::Random { k, edge_prob: 0.45, seed: 500 + index },
        loss: LossConfig::QuadraticHeterogeneous {
            agents: k,
            model_dim: 3,
            data_dim: 3,
            samples_per_agent: 32,
            heterogeneity: 1.2,
            hessian_spread: 0.25,
            coupling_scale: 0.8,
            seed: 900 + index,
        },
        perturbation: PerturbationConfig {
            norm: NormKind::L2,
            epsilon: mu * mu / 2.0,
            attack: AttackBlock { method: AttackMethod::Exact, steps: 1, step_size: 1.0 },
        },
        training: TrainingBlock {
            mu,
            batch,
            horizon,
            snapshot_stride: 1,
            init: InitMode::AtMinimizer,
            strategies: Strategy::ALL.to_vec(),
        },
        theory: Some(TheoryOptions { n_max: horizon }),
        escape: None,
        landscape: None,
    }
}

/// Homogeneous quadratic network: identical minimizers with exactly-zero
/// shard means, so the heterogeneity vector `d` is bitwise zero while the
/// Hessians and gradient noise still differ across agents.
pub fn homogeneous_quad(k: usize, mu: f64, batch: usize, trials: usize) -> ExperimentConfig {
    let horizon = (1.0 / mu).floor() as usize;
    ExperimentConfig {
        seed: 60,
        trials,
        graph: GraphConfig::Random { k, edge_prob: 0.7, seed: 61 },
        loss: LossConfig::QuadraticHeterogeneous {
            agents: k,
            model_dim: 3,
            data_dim: 3,
            samples_per_agent: 32,
            heterogeneity: 0.0,
            hessian_spread: 0.3,
            coupling_scale: 1.0,
            seed: 62,
        },
        perturbation: PerturbationConfig {
            norm: NormKind::L2,
            epsilon: 0.0,
            attack: AttackBlock { method: AttackMethod::Exact, steps: 1, step_size: 1.0 },
        },
        training: TrainingBlock {
            mu,
            batch,
            horizon,
            snapshot_stride: 1,
            init: InitMode::AtMinimizer,
            strategies: Strategy::ALL.to_vec(),
        },
        theory: Some(TheoryOptions { n_max: horizon }),
        escape: None,
        landscape: None,
    }
}

/// Near-minimum double-well fixture for short-term approximation studies:
/// the cubic skew makes the Hessian vary right at the minimizer, which is
/// what the frozen-Hessian model gets wrong at O(μ³).
pub fn lemma5_double_well(mu: f64, trials: usize) -> ExperimentConfig {
    let batch = (2.0 / mu).ceil() as usize;
    let horizon = (1.0 / mu).floor() as usize;
    ExperimentConfig {
        seed: 70,
        trials,
        graph: GraphConfig::Ring { k: 4 },
        loss: LossConfig::DoubleWell2d {
            agents: 4,
            data_dim: 2,
            samples_per_agent: 16,
            sharp_curvature: 4.25,
            cross_curvature: 0.5,
            flat_pos: 1.0,
            flat_lift: -0.05,
            trace_ratio: 4.0,
            skew: -1.2,
            base: [2.0, 1.0],
            heterogeneity: 0.6,
            heterogeneity_cross: 0.6,
            coupling_scale: 1.2,
            seed: 71,
        },
        perturbation: PerturbationConfig {
            norm: NormKind::L2,
            epsilon: mu * mu / 2.0,
            attack: AttackBlock { method: AttackMethod::Pgd, steps: 1, step_size: mu * mu },
        },
        training: TrainingBlock {
            mu,
            batch,
            horizon,
            snapshot_stride: 1,
            init: InitMode::AtMinimizer,
            strategies: Strategy::ALL.to_vec(),
        },
        theory: Some(TheoryOptions { n_max: horizon }),
        escape: None,
        landscape: None,
    }
}

/// Two-basin escape-study fixture: agents sit in the sharp basin of a 4:1
/// trace-ratio double well; mild heterogeneity along the escape coordinate
/// keeps the network risk bimodal while gradient noise (amplified more by
/// consensus than diffusion, and averaged away by the centralized strategy)
/// carries iterates over the barrier.
pub fn escape_double_well(mu: f64, batch: usize, trials: usize) -> ExperimentConfig {
    let horizon = (1.0 / mu).ceil() as usize;
    ExperimentConfig {
        seed: 40,
        trials,
        graph: GraphConfig::Ring { k: 8 },
        loss: LossConfig::DoubleWell2d {
            agents: 8,
            data_dim: 2,
            samples_per_agent: 16,
            sharp_curvature: 4.25,
            cross_curvature: 0.5,
            flat_pos: 1.0,
            flat_lift: -0.05,
            trace_ratio: 4.0,
            skew: -0.4,
            base: [2.0, 1.0],
            heterogeneity: 0.3,
            heterogeneity_cross: 1.0,
            coupling_scale: 4.0,
            seed: 41,
        },
        perturbation: PerturbationConfig {
            norm: NormKind::L2,
            // the double-well objective is linear in the perturbation, so a
            // single full-length PGD step lands on the exact maximizer
            epsilon: mu * mu / 2.0,
            attack: AttackBlock { method: AttackMethod::Pgd, steps: 1, step_size: mu * mu },
        },
        training: TrainingBlock {
            mu,
            batch,
            horizon,
            snapshot_stride: 1,
            init: InitMode::AtMinimizer,
            strategies: Strategy::ALL.to_vec(),
        },
        theory: None,
        escape: Some(EscapeOptions {
            gd_steps: 800,
            gd_mu: 0.08,
            tol: 1e-3,
            bound: 5.0,
            eval_stride: horizon.max(1),
        }),
        landscape: None,
    }
}
