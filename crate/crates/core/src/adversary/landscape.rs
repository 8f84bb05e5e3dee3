//! Risk profiles along norm-matched random directions.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::seeding::{make_rng, stream};

/// Evaluate `J(w + α·v)` over `n_dirs` random directions and an `α` grid.
///
/// Directions are isotropic Gaussian draws rescaled to `‖w‖` (unit norm when
/// `w = 0`), so profiles of models at different scales are comparable. Entry
/// `(i, j)` is the risk along direction `i` at `alpha_grid[j]`; deterministic
/// in `seed`.
pub fn landscape_profile(
    risk: impl Fn(&DVector<f64>) -> f64,
    w: &DVector<f64>,
    n_dirs: usize,
    alpha_grid: &[f64],
    seed: u64,
) -> DMatrix<f64> {
    let mut rng = make_rng(seed, &[stream::LANDSCAPE]);
    let target = if w.norm() > 0.0 { w.norm() } else { 1.0 };
    let mut out = DMatrix::zeros(n_dirs, alpha_grid.len());
    for i in 0..n_dirs {
        let mut v: DVector<f64> =
            DVector::from_fn(w.len(), |_, _| StandardNormal.sample(&mut rng));
        let n = v.norm();
        if n > 0.0 {
            v *= target / n;
        }
        for (j, &alpha) in alpha_grid.iter().enumerate() {
            out[(i, j)] = risk(&(w + alpha * &v));
        }
    }
    out
}
