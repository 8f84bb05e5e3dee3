//! Gradient-noise sampling and covariance estimation.
//!
//! The gradient noise of agent `k` at `w` is the mini-batch mean of robust
//! per-sample gradients minus the exact shard mean `∇J_k(w)`. Expectations
//! are empirical (full-shard averages), so the exact `B = 1` covariance is a
//! population covariance over the shard and can be enumerated without Monte
//! Carlo; the sampled estimators below exist to verify the `1/B` scalings on
//! the estimation path the training loop actually uses.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::adversary::{risk_gradient, robust_grad, AdversaryError, AttackConfig, LossModel};
use crate::dynamics::{batch_gradient, draw_batch};
use crate::seeding::{make_rng, stream};

/// Draws per parallel chunk; fixed so reductions are order-stable.
const CHUNK: usize = 512;

/// Moments of the sampled gradient noise at a probe point.
#[derive(Debug, Clone)]
pub struct NoiseStatistics {
    pub mean: DVector<f64>,
    /// Average of `‖s‖²` over draws.
    pub second_moment: f64,
    /// Average of `‖s‖⁴` over draws.
    pub fourth_moment: f64,
    /// Unbiased sample covariance.
    pub covariance: DMatrix<f64>,
    pub sample_count: usize,
    pub batch_size: usize,
}

/// Direct and independence-based estimates of the network noise covariance.
#[derive(Debug, Clone)]
pub struct NetworkCovariance {
    /// Covariance of the agent-averaged noise, estimated directly.
    pub direct: DMatrix<f64>,
    /// `(1/K²) Σ_k R̂_k`, valid because shards are independent.
    pub independence_sum: DMatrix<f64>,
}

impl NetworkCovariance {
    pub fn frobenius_gap(&self) -> f64 {
        let denom = self.independence_sum.norm().max(1e-300);
        (&self.direct - &self.independence_sum).norm() / denom
    }
}

/// One gradient-noise draw: mini-batch robust gradient minus `∇J_k(w)`.
///
/// The shard mean is recomputed here; batch estimation paths precompute it.
pub fn noise_sample(
    model: &LossModel,
    w: &DVector<f64>,
    batch: usize,
    attack: &AttackConfig,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<DVector<f64>, AdversaryError> {
    let mean = risk_gradient(model, w, attack)?;
    let idx = draw_batch(rng, model.shard().len(), batch);
    Ok(batch_gradient(model, w, &idx, attack)? - mean)
}

/// Per-sample robust gradients minus their shard mean, enumerated.
fn centered_sample_gradients(
    model: &LossModel,
    w: &DVector<f64>,
    attack: &AttackConfig,
) -> Result<Vec<DVector<f64>>, AdversaryError> {
    let mean = risk_gradient(model, w, attack)?;
    model
        .shard()
        .samples()
        .iter()
        .map(|s| Ok(robust_grad(model, w, s, attack)? - &mean))
        .collect()
}

/// Exact `B = 1` noise covariance: the population covariance of per-sample
/// robust gradients over the shard. No Monte Carlo error.
pub fn exact_covariance(
    model: &LossModel,
    w: &DVector<f64>,
    attack: &AttackConfig,
) -> Result<DMatrix<f64>, AdversaryError> {
    let centered = centered_sample_gradients(model, w, attack)?;
    let m = model.model_dim();
    let mut cov = DMatrix::zeros(m, m);
    for c in &centered {
        cov += c * c.transpose();
    }
    Ok(cov / centered.len() as f64)
}

/// Exact network covariance `R̄_s = (1/K²) Σ_k R_{s,k}(w*)` (independent shards).
pub fn exact_network_covariance(
    models: &[LossModel],
    w_star: &DVector<f64>,
    attack: &AttackConfig,
) -> Result<DMatrix<f64>, AdversaryError> {
    let k = models.len();
    let m = models[0].model_dim();
    let mut acc = DMatrix::zeros(m, m);
    for model in models {
        acc += exact_covariance(model, w_star, attack)?;
    }
    Ok(acc / (k * k) as f64)
}

struct MomentAccumulator {
    sum: DVector<f64>,
    outer: DMatrix<f64>,
    sq: f64,
    quad: f64,
}

impl MomentAccumulator {
    fn new(m: usize) -> Self {
        MomentAccumulator {
            sum: DVector::zeros(m),
            outer: DMatrix::zeros(m, m),
            sq: 0.0,
            quad: 0.0,
        }
    }

    fn push(&mut self, s: &DVector<f64>) {
        self.sum += s;
        self.outer += s * s.transpose();
        let n2 = s.norm_squared();
        self.sq += n2;
        self.quad += n2 * n2;
    }

    fn merge(mut self, other: MomentAccumulator) -> Self {
        self.sum += other.sum;
        self.outer += other.outer;
        self.sq += other.sq;
        self.quad += other.quad;
        self
    }
}

/// Monte Carlo noise statistics at `w` with `n_samples` independent draws.
///
/// Draws are chunked with per-chunk derived seeds and merged in chunk order,
/// so the result is bitwise stable across thread counts.
pub fn estimate_covariance(
    model: &LossModel,
    w: &DVector<f64>,
    batch: usize,
    attack: &AttackConfig,
    n_samples: usize,
    seed: u64,
) -> Result<NoiseStatistics, AdversaryError> {
    assert!(n_samples >= 2, "need at least two draws for a covariance");
    let mean_grad = risk_gradient(model, w, attack)?;
    let m = model.model_dim();
    let shard_len = model.shard().len();
    let chunks: Vec<usize> = (0..n_samples.div_ceil(CHUNK)).collect();
    let partials: Result<Vec<MomentAccumulator>, AdversaryError> = chunks
        .par_iter()
        .map(|&c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n_samples);
            let mut acc = MomentAccumulator::new(m);
            let mut rng = make_rng(seed, &[stream::NOISE_DRAW, c as u64]);
            for _ in lo..hi {
                let idx = draw_batch(&mut rng, shard_len, batch);
                let s = batch_gradient(model, w, &idx, attack)? - &mean_grad;
                acc.push(&s);
            }
            Ok(acc)
        })
        .collect();
    let acc = partials?
        .into_iter()
        .reduce(|a, b| a.merge(b))
        .expect("at least one chunk");

    let n = n_samples as f64;
    let mean = &acc.sum / n;
    let covariance = (acc.outer - n * (&mean * mean.transpose())) / (n - 1.0);
    Ok(NoiseStatistics {
        mean,
        second_moment: acc.sq / n,
        fourth_moment: acc.quad / n,
        covariance,
        sample_count: n_samples,
        batch_size: batch,
    })
}

/// Covariance of the agent-averaged `B = 1` noise at `w*`, estimated directly
/// and through the independence identity.
pub fn network_covariance(
    models: &[LossModel],
    w_star: &DVector<f64>,
    attack: &AttackConfig,
    n_samples: usize,
    seed: u64,
) -> Result<NetworkCovariance, AdversaryError> {
    assert!(n_samples >= 2);
    let k = models.len();
    let m = models[0].model_dim();
    let means: Vec<DVector<f64>> = models
        .iter()
        .map(|mo| risk_gradient(mo, w_star, attack))
        .collect::<Result<_, _>>()?;

    let chunks: Vec<usize> = (0..n_samples.div_ceil(CHUNK)).collect();
    let partials: Result<Vec<MomentAccumulator>, AdversaryError> = chunks
        .par_iter()
        .map(|&c| {
            let lo = c * CHUNK;
            let hi = ((c + 1) * CHUNK).min(n_samples);
            let mut acc = MomentAccumulator::new(m);
            let mut rng = make_rng(seed, &[stream::NOISE_DRAW, c as u64]);
            for _ in lo..hi {
                let mut avg = DVector::zeros(m);
                for (mo, mean) in models.iter().zip(&means) {
                    let i = draw_batch(&mut rng, mo.shard().len(), 1)[0];
                    avg += robust_grad(mo, w_star, mo.shard().sample(i), attack)? - mean;
                }
                avg /= k as f64;
                acc.push(&avg);
            }
            Ok(acc)
        })
        .collect();
    let acc = partials?
        .into_iter()
        .reduce(|a, b| a.merge(b))
        .expect("at least one chunk");

    let n = n_samples as f64;
    let mean = &acc.sum / n;
    let direct = (acc.outer - n * (&mean * mean.transpose())) / (n - 1.0);

    let mut independence_sum = DMatrix::zeros(m, m);
    for mo in models {
        independence_sum +=
            estimate_covariance(mo, w_star, 1, attack, n_samples, seed ^ 0x5eed)?.covariance;
    }
    independence_sum /= (k * k) as f64;

    Ok(NetworkCovariance { direct, independence_sum })
}
