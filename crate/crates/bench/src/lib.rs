//! Shared fixture builders for the benchmarks.

use escape_bench_core::adversary::AttackConfig;
use escape_bench_core::harness::fixtures::{build_ensemble, find_minimizer, minimizer_guess};
use escape_bench_core::harness::LossConfig;
use escape_bench_core::LossModel;
use nalgebra::DVector;

/// Heterogeneous quadratic ensemble plus its exact minimizer.
pub fn quad_fixture(agents: usize, model_dim: usize) -> (Vec<LossModel>, DVector<f64>) {
    let loss = LossConfig::QuadraticHeterogeneous {
        agents,
        model_dim,
        data_dim: model_dim,
        samples_per_agent: 64,
        heterogeneity: 1.0,
        hessian_spread: 0.3,
        coupling_scale: 1.0,
        seed: 21,
    };
    let models = build_ensemble(&loss).expect("fixture ensemble");
    let attack = AttackConfig::clean();
    let guess = minimizer_guess(&models, &loss);
    let w_star = find_minimizer(&models, &attack, guess, 1.0).expect("fixture minimizer");
    (models, w_star)
}

/// Regression ensemble used by the attack benchmarks.
pub fn regression_fixture(agents: usize, dim: usize) -> Vec<LossModel> {
    let loss = LossConfig::RobustLinearRegression {
        agents,
        dim,
        samples_per_agent: 64,
        heterogeneity: 0.5,
        label_noise: 0.2,
        seed: 9,
    };
    build_ensemble(&loss).expect("fixture ensemble")
}
