//! Small dense linear-algebra helpers shared across modules.
//!
//! Everything here works on `nalgebra` dynamic matrices. Network-wide
//! quantities are "stacked": a block vector holds one `M`-dimensional block
//! per agent, in agent order.

use nalgebra::{DMatrix, DVector};

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = DMatrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == 0.0 {
                continue;
            }
            for p in 0..br {
                for q in 0..bc {
                    out[(i * br + p, j * bc + q)] = s * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Kronecker product with an identity block: `m ⊗ I_dim`.
pub fn kron_identity(m: &DMatrix<f64>, dim: usize) -> DMatrix<f64> {
    kron(m, &DMatrix::identity(dim, dim))
}

/// Stack per-agent blocks into one long vector.
pub fn stack(blocks: &[DVector<f64>]) -> DVector<f64> {
    let m = blocks.first().map_or(0, |b| b.len());
    let mut out = DVector::zeros(blocks.len() * m);
    for (k, b) in blocks.iter().enumerate() {
        out.rows_mut(k * m, m).copy_from(b);
    }
    out
}

/// Split a stacked vector back into `count` equal blocks.
pub fn unstack(v: &DVector<f64>, count: usize) -> Vec<DVector<f64>> {
    assert!(count > 0 && v.len() % count == 0, "uneven block split");
    let m = v.len() / count;
    (0..count).map(|k| v.rows(k * m, m).into_owned()).collect()
}

/// Blockwise weighted squared norm `Σ_j x_jᵀ W x_j` where `x` splits into
/// blocks of `W`'s dimension.
pub fn block_weighted_sq_norm(x: &DVector<f64>, weight: &DMatrix<f64>) -> f64 {
    let m = weight.nrows();
    if m == 0 || x.is_empty() {
        return 0.0;
    }
    assert_eq!(x.len() % m, 0, "vector not block-aligned with weight");
    let mut acc = 0.0;
    for k in 0..x.len() / m {
        let b = x.rows(k * m, m);
        acc += (weight * b).dot(&b);
    }
    acc
}

/// Eigendecomposition of a symmetric matrix, eigenvalues descending.
///
/// Returns `(values, vectors)` with `vectors` holding eigenvectors as columns
/// matched to `values`. Each eigenvector is sign-normalized so that its
/// largest-magnitude entry is positive (first such entry on ties), which
/// keeps the output independent of eigensolver internals.
pub fn symmetric_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .expect("non-finite eigenvalue")
    });
    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        values[dst] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).into_owned();
        normalize_sign(&mut col);
        vectors.set_column(dst, &col);
    }
    (values, vectors)
}

/// Flip a vector's sign so its largest-magnitude entry is positive.
pub fn normalize_sign(v: &mut DVector<f64>) {
    let mut best = 0usize;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if !v.is_empty() && v[best] < 0.0 {
        v.neg_mut();
    }
}

/// Symmetric positive-semidefinite square root via eigendecomposition.
///
/// Negative eigenvalues below `-1e-10` are rejected; small negative values
/// from roundoff are clamped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = symmetric_eigen_desc(m);
    assert!(
        values.iter().all(|&l| l > -1e-10),
        "matrix is not positive semidefinite (min eigenvalue {})",
        values.min()
    );
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        vectors[(i, j)] * values[j].max(0.0).sqrt()
    });
    &scaled * vectors.transpose()
}

/// Largest eigenvalue of a symmetric matrix.
pub fn symmetric_max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let (values, _) = symmetric_eigen_desc(m);
    if values.is_empty() {
        0.0
    } else {
        values[0]
    }
}

/// Ordinary least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (&xi, &yi) in x.iter().zip(y) {
        num += (xi - mx) * (yi - my);
        den += (xi - mx) * (xi - mx);
    }
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kron_identity_matches_definition() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let k = kron_identity(&m, 2);
        assert_eq!(k.shape(), (4, 4));
        assert_eq!(k[(0, 0)], 1.0);
        assert_eq!(k[(1, 1)], 1.0);
        assert_eq!(k[(0, 2)], 2.0);
        assert_eq!(k[(2, 1)], 0.0);
        assert_eq!(k[(3, 3)], 4.0);
    }

    #[test]
    fn stack_unstack_roundtrip() {
        let blocks = vec![
            DVector::from_vec(vec![1.0, 2.0]),
            DVector::from_vec(vec![3.0, 4.0]),
        ];
        let s = stack(&blocks);
        assert_eq!(s.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(unstack(&s, 2), blocks);
    }

    #[test]
    fn eigen_reconstructs_symmetric_matrix() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.5, 0.2, 0.1, 0.2, 1.0]);
        let (values, vectors) = symmetric_eigen_desc(&m);
        let rebuilt = &vectors * DMatrix::from_diagonal(&values) * vectors.transpose();
        assert_relative_eq!(rebuilt, m, epsilon = 1e-12);
        assert!(values[0] >= values[1] && values[1] >= values[2]);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let s = psd_sqrt(&a);
        assert_relative_eq!(&s * s.transpose(), a, epsilon = 1e-12);
    }

    #[test]
    fn weighted_norm_sums_blocks() {
        let w = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]);
        let x = DVector::from_vec(vec![1.0, 1.0, 2.0, 0.0]);
        // 1²·2 + 1²·1 + 2²·2 = 11
        assert_relative_eq!(block_weighted_sq_norm(&x, &w), 11.0);
    }
}
