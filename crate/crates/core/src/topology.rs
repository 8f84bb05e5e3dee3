//! Combination matrices over agent graphs and their spectral structure.
//!
//! A network of `K` agents cooperates through a symmetric doubly-stochastic
//! combination matrix `A` built from an undirected graph with the Metropolis
//! rule. `A` has a single eigenvalue at 1 with eigenvector `(1/√K)·1`; the
//! remaining spectrum (`P_α`, eigenvectors `V_α`) governs how fast consensus
//! contracts and enters every closed-form prediction downstream.
//!
//! Convention: agent `k` combines neighbor values with the weights in column
//! `k` of `A` (`Σ_ℓ a_{ℓk} x_ℓ`). All matrices produced here are symmetric,
//! so this coincides with the row convention; [`combine_columns`] spells the
//! column form out explicitly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{kron_identity, symmetric_eigen_desc};

/// Tolerance for stochasticity/symmetry checks.
pub const STOCHASTIC_TOL: f64 = 1e-12;
/// Tolerance for eigendecomposition reconstruction checks.
pub const RECONSTRUCT_TOL: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("graph is not connected")]
    NotConnected,
    #[error("no agent has a self-loop")]
    NoSelfLoop,
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("matrix failed combination-matrix invariants: {0}")]
    InvalidMatrix(String),
}

/// The three distributed training strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Centralized,
    Consensus,
    Diffusion,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Centralized, Strategy::Diffusion, Strategy::Consensus];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Centralized => "centralized",
            Strategy::Consensus => "consensus",
            Strategy::Diffusion => "diffusion",
        }
    }
}

/// Undirected agent graph: symmetric adjacency with optional self-loops.
#[derive(Debug, Clone)]
pub struct Graph {
    k: usize,
    adj: Vec<bool>, // row-major k×k, kept symmetric
}

/// JSON wire form of a graph: `{ "K": 3, "edges": [[0,1],[1,2]], "self_loops": [0] }`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    #[serde(rename = "K")]
    pub k: usize,
    pub edges: Vec<(usize, usize)>,
    pub self_loops: Vec<usize>,
}

impl Graph {
    /// Build a graph from undirected edges and self-loop markers.
    pub fn new(k: usize, edges: &[(usize, usize)], self_loops: &[usize]) -> Result<Self, TopologyError> {
        if k == 0 {
            return Err(TopologyError::InvalidGraph("agent count must be positive".into()));
        }
        let mut adj = vec![false; k * k];
        for &(i, j) in edges {
            if i >= k || j >= k {
                return Err(TopologyError::InvalidGraph(format!(
                    "edge ({i},{j}) out of range for K={k}"
                )));
            }
            adj[i * k + j] = true;
            adj[j * k + i] = true;
        }
        for &i in self_loops {
            if i >= k {
                return Err(TopologyError::InvalidGraph(format!(
                    "self-loop {i} out of range for K={k}"
                )));
            }
            adj[i * k + i] = true;
        }
        Ok(Graph { k, adj })
    }

    pub fn from_spec(spec: &GraphSpec) -> Result<Self, TopologyError> {
        Graph::new(spec.k, &spec.edges, &spec.self_loops)
    }

    /// Complete graph with all self-loops.
    pub fn complete(k: usize) -> Self {
        let adj = vec![true; k * k];
        Graph { k, adj }
    }

    /// Ring with all self-loops (useful as a weakly-mixing fixture).
    pub fn ring(k: usize) -> Self {
        let mut adj = vec![false; k * k];
        for i in 0..k {
            adj[i * k + i] = true;
            let j = (i + 1) % k;
            adj[i * k + j] = true;
            adj[j * k + i] = true;
        }
        Graph { k, adj }
    }

    /// Erdős–Rényi draw with all self-loops, patched to be connected.
    ///
    /// Components left disconnected by the random draw are joined in index
    /// order, so the result is deterministic in `(k, edge_prob, seed)`.
    pub fn random_connected(k: usize, edge_prob: f64, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut adj = vec![false; k * k];
        for i in 0..k {
            adj[i * k + i] = true;
            for j in (i + 1)..k {
                if rng.random::<f64>() < edge_prob {
                    adj[i * k + j] = true;
                    adj[j * k + i] = true;
                }
            }
        }
        let mut g = Graph { k, adj };
        // Join remaining components pairwise through their smallest members.
        loop {
            let comp = g.component_labels();
            let roots: Vec<usize> = {
                let mut seen = std::collections::BTreeSet::new();
                (0..k).filter(|&i| seen.insert(comp[i])).collect()
            };
            if roots.len() <= 1 {
                break;
            }
            let (a, b) = (roots[0], roots[1]);
            g.adj[a * k + b] = true;
            g.adj[b * k + a] = true;
        }
        g
    }

    pub fn agent_count(&self) -> usize {
        self.k
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj[i * self.k + j]
    }

    /// Neighborhood size including the agent itself (whether or not a
    /// self-loop is present), as used by the Metropolis weights.
    pub fn degree_incl_self(&self, i: usize) -> usize {
        let mut n = 1;
        for j in 0..self.k {
            if j != i && self.has_edge(i, j) {
                n += 1;
            }
        }
        n
    }

    fn component_labels(&self) -> Vec<usize> {
        let k = self.k;
        let mut label = vec![usize::MAX; k];
        let mut next = 0;
        for start in 0..k {
            if label[start] != usize::MAX {
                continue;
            }
            let mut stack = vec![start];
            label[start] = next;
            while let Some(i) = stack.pop() {
                for j in 0..k {
                    if j != i && self.has_edge(i, j) && label[j] == usize::MAX {
                        label[j] = next;
                        stack.push(j);
                    }
                }
            }
            next += 1;
        }
        label
    }

    pub fn is_connected(&self) -> bool {
        self.component_labels().iter().all(|&c| c == 0)
    }

    pub fn has_any_self_loop(&self) -> bool {
        (0..self.k).any(|i| self.has_edge(i, i))
    }

    /// Check the invariants required of a cooperation topology.
    pub fn validate(&self) -> Result<(), TopologyError> {
        if !self.is_connected() {
            return Err(TopologyError::NotConnected);
        }
        if !self.has_any_self_loop() {
            return Err(TopologyError::NoSelfLoop);
        }
        Ok(())
    }
}

/// Doubly-stochastic symmetric combination matrix with cached spectral data.
///
/// `a = v · diag(p) · vᵀ` with orthonormal `v`; `p[0] = 1` and the first
/// column of `v` is exactly `(1/√K)·1`. `v_alpha`/`p_alpha` drop that leading
/// pair and order the rest by decreasing magnitude.
#[derive(Debug, Clone)]
pub struct CombinationMatrix {
    a: DMatrix<f64>,
    v: DMatrix<f64>,
    p: DVector<f64>,
    v_alpha: DMatrix<f64>,
    p_alpha: DVector<f64>,
}

impl CombinationMatrix {
    /// Decompose and validate a doubly-stochastic symmetric matrix.
    pub fn from_stochastic(a: DMatrix<f64>) -> Result<Self, TopologyError> {
        let cm = Self::decompose(a)?;
        if cm.spectral_radius_alpha() >= 1.0 {
            return Err(TopologyError::InvalidMatrix(format!(
                "spectral radius of P_alpha is {} (needs < 1)",
                cm.spectral_radius_alpha()
            )));
        }
        Ok(cm)
    }

    /// Same decomposition but without the ρ(P_α) < 1 requirement.
    ///
    /// Only for internal unit fixtures such as `A = I` (no mixing); real
    /// topologies must go through [`CombinationMatrix::from_stochastic`].
    #[doc(hidden)]
    pub fn from_stochastic_unchecked(a: DMatrix<f64>) -> Result<Self, TopologyError> {
        Self::decompose(a)
    }

    fn decompose(a: DMatrix<f64>) -> Result<Self, TopologyError> {
        let k = a.nrows();
        if k == 0 || !a.is_square() {
            return Err(TopologyError::InvalidMatrix("matrix must be square and nonempty".into()));
        }
        for i in 0..k {
            let mut colsum = 0.0;
            for j in 0..k {
                let x = a[(j, i)];
                if !(-STOCHASTIC_TOL..=1.0 + STOCHASTIC_TOL).contains(&x) {
                    return Err(TopologyError::InvalidMatrix(format!(
                        "entry ({j},{i}) = {x} outside [0,1]"
                    )));
                }
                if (a[(j, i)] - a[(i, j)]).abs() > STOCHASTIC_TOL {
                    return Err(TopologyError::InvalidMatrix("matrix not symmetric".into()));
                }
                colsum += x;
            }
            if (colsum - 1.0).abs() > STOCHASTIC_TOL {
                return Err(TopologyError::InvalidMatrix(format!(
                    "column {i} sums to {colsum}"
                )));
            }
        }

        let (values, vectors) = symmetric_eigen_desc(&a);
        // The Perron pair: eigenvalue 1 with eigenvector (1/√K)·1. Pin the
        // eigenvector analytically so downstream output is solver-independent.
        if (values[0] - 1.0).abs() > RECONSTRUCT_TOL {
            return Err(TopologyError::InvalidMatrix(format!(
                "leading eigenvalue {} is not 1",
                values[0]
            )));
        }
        let perron = DVector::from_element(k, 1.0 / (k as f64).sqrt());

        // Remaining pairs ordered by |λ| descending; ties positive-first,
        // then by their position in the value-sorted decomposition.
        let mut rest: Vec<usize> = (1..k).collect();
        rest.sort_by(|&i, &j| {
            values[j]
                .abs()
                .partial_cmp(&values[i].abs())
                .unwrap()
                .then_with(|| values[j].partial_cmp(&values[i]).unwrap())
                .then_with(|| i.cmp(&j))
        });

        let mut v = DMatrix::zeros(k, k);
        let mut p = DVector::zeros(k);
        v.set_column(0, &perron);
        p[0] = 1.0;
        let mut v_alpha = DMatrix::zeros(k, k.saturating_sub(1));
        let mut p_alpha = DVector::zeros(k.saturating_sub(1));
        for (dst, &src) in rest.iter().enumerate() {
            // Re-orthonormalize against the pinned Perron vector and the
            // columns accepted so far. For a simple eigenvalue at 1 this is a
            // roundoff-level correction; it also keeps degenerate fixtures
            // like A = I well-defined.
            let accepted = dst + 1;
            let orthogonalize = |candidate: &DVector<f64>| -> Option<DVector<f64>> {
                let mut col = candidate.clone();
                for prev in 0..accepted {
                    let q = v.column(prev).into_owned();
                    let overlap = q.dot(&col);
                    col.axpy(-overlap, &q, 1.0);
                }
                let norm = col.norm();
                (norm > 1e-8).then(|| col / norm)
            };
            let mut col = orthogonalize(&vectors.column(src).into_owned())
                .or_else(|| {
                    (0..k).find_map(|i| {
                        let mut e = DVector::zeros(k);
                        e[i] = 1.0;
                        orthogonalize(&e)
                    })
                })
                .ok_or_else(|| {
                    TopologyError::InvalidMatrix(
                        "degenerate eigenbasis could not be orthonormalized".into(),
                    )
                })?;
            crate::linalg::normalize_sign(&mut col);
            v.set_column(dst + 1, &col);
            p[dst + 1] = values[src];
            v_alpha.set_column(dst, &col);
            p_alpha[dst] = values[src];
        }

        let cm = CombinationMatrix { a, v, p, v_alpha, p_alpha };
        cm.check_reconstruction()?;
        Ok(cm)
    }

    fn check_reconstruction(&self) -> Result<(), TopologyError> {
        let rebuilt = &self.v * DMatrix::from_diagonal(&self.p) * self.v.transpose();
        let err = (&rebuilt - &self.a).abs().max();
        if err > RECONSTRUCT_TOL {
            return Err(TopologyError::InvalidMatrix(format!(
                "eigendecomposition reconstruction error {err}"
            )));
        }
        let gram = self.v.transpose() * &self.v;
        let ortho_err = (&gram - DMatrix::identity(self.k(), self.k())).abs().max();
        if ortho_err > RECONSTRUCT_TOL {
            return Err(TopologyError::InvalidMatrix(format!(
                "eigenvector basis not orthonormal (error {ortho_err})"
            )));
        }
        Ok(())
    }

    pub fn k(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn v(&self) -> &DMatrix<f64> {
        &self.v
    }

    /// Diagonal of `P` (eigenvalues, 1 first).
    pub fn p(&self) -> &DVector<f64> {
        &self.p
    }

    /// Eigenvectors for the non-Perron spectrum, `K×(K−1)`.
    pub fn v_alpha(&self) -> &DMatrix<f64> {
        &self.v_alpha
    }

    /// Non-Perron eigenvalues by decreasing magnitude, length `K−1`.
    pub fn p_alpha(&self) -> &DVector<f64> {
        &self.p_alpha
    }

    /// ρ(P_α): 0 for a single agent.
    pub fn spectral_radius_alpha(&self) -> f64 {
        self.p_alpha.iter().fold(0.0, |m, &x| m.max(x.abs()))
    }
}

/// Strategy-dependent `(A1, A2)` pair driving the unified recursion.
#[derive(Debug, Clone)]
pub struct StrategyMatrices {
    pub strategy: Strategy,
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
}

/// Build the Metropolis-rule combination matrix for a validated graph.
///
/// Off-diagonal neighbor weights are `1/max(n_k, n_ℓ)` with `n` the
/// neighborhood size including self; the diagonal absorbs the residual.
pub fn metropolis_matrix(g: &Graph) -> Result<CombinationMatrix, TopologyError> {
    g.validate()?;
    let k = g.agent_count();
    let mut a = DMatrix::zeros(k, k);
    for i in 0..k {
        for j in (i + 1)..k {
            if g.has_edge(i, j) {
                let w = 1.0 / g.degree_incl_self(i).max(g.degree_incl_self(j)) as f64;
                a[(i, j)] = w;
                a[(j, i)] = w;
            }
        }
    }
    for i in 0..k {
        let off: f64 = (0..k).filter(|&j| j != i).map(|j| a[(i, j)]).sum();
        a[(i, i)] = 1.0 - off;
    }
    CombinationMatrix::from_stochastic(a)
}

/// The `(A1, A2)` table: consensus mixes first, diffusion mixes last,
/// centralized averages everything regardless of the topology.
pub fn strategy_matrices(cm: &CombinationMatrix, strategy: Strategy) -> StrategyMatrices {
    let k = cm.k();
    let identity = DMatrix::identity(k, k);
    let (a1, a2) = match strategy {
        Strategy::Consensus => (cm.a().clone(), identity),
        Strategy::Diffusion => (identity, cm.a().clone()),
        Strategy::Centralized => (identity, DMatrix::from_element(k, k, 1.0 / k as f64)),
    };
    StrategyMatrices { strategy, a1, a2 }
}

/// Extend a `K×K` matrix to act blockwise on stacked `M`-vectors: `M ⊗ I`.
pub fn block_extend(m: &DMatrix<f64>, model_dim: usize) -> DMatrix<f64> {
    assert!(model_dim >= 1, "model dimension must be positive");
    kron_identity(m, model_dim)
}

/// Column-convention mixing: `out_k = Σ_ℓ m[(ℓ,k)] · blocks[ℓ]`.
pub fn combine_columns(m: &DMatrix<f64>, blocks: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let k = blocks.len();
    assert_eq!(m.nrows(), k);
    assert_eq!(m.ncols(), k);
    (0..k)
        .map(|dst| {
            let mut acc = DVector::zeros(blocks[0].len());
            for (src, block) in blocks.iter().enumerate() {
                let w = m[(src, dst)];
                if w != 0.0 {
                    acc.axpy(w, block, 1.0);
                }
            }
            acc
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    /// Deflated power iteration: dominant |eigenvalue| of `A − (1/K)𝟙𝟙ᵀ`,
    /// i.e. ρ(P_α), computed without any eigensolver.
    fn rho_alpha_power_iteration(a: &DMatrix<f64>) -> f64 {
        let k = a.nrows();
        if k == 1 {
            return 0.0;
        }
        let deflated = a - DMatrix::from_element(k, k, 1.0 / k as f64);
        let mut v = DVector::from_fn(k, |i, _| ((i + 1) as f64).sin());
        let mean = v.mean();
        v.add_scalar_mut(-mean);
        v /= v.norm();
        let mut lambda = 0.0;
        for _ in 0..20_000 {
            let w = &deflated * &v;
            let n = w.norm();
            if n == 0.0 {
                return 0.0;
            }
            let next = w / n;
            lambda = n;
            v = next;
        }
        lambda
    }

    fn assert_combination_invariants(cm: &CombinationMatrix) {
        let k = cm.k();
        let a = cm.a();
        let ones = DVector::from_element(k, 1.0);
        // column sums, symmetry, A·1 = 1
        for i in 0..k {
            assert!((a.column(i).sum() - 1.0).abs() <= STOCHASTIC_TOL);
        }
        assert!((a - a.transpose()).abs().max() <= STOCHASTIC_TOL);
        assert!(((a * &ones) - &ones).abs().max() <= STOCHASTIC_TOL);
        // first column of V is exactly the normalized ones vector
        for i in 0..k {
            assert_eq!(cm.v()[(i, 0)], 1.0 / (k as f64).sqrt());
        }
        // reconstruction
        let rebuilt = cm.v() * DMatrix::from_diagonal(cm.p()) * cm.v().transpose();
        assert!((rebuilt - a).abs().max() <= RECONSTRUCT_TOL);
        assert!(cm.spectral_radius_alpha() < 1.0);
        // P_alpha ordered by decreasing magnitude
        for w in cm.p_alpha().as_slice().windows(2) {
            assert!(w[0].abs() >= w[1].abs() - 1e-14);
        }
    }

    #[test]
    fn complete_two_agent_graph_gives_equal_weights() {
        let cm = metropolis_matrix(&Graph::complete(2)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        assert_relative_eq!(cm.a(), &expected, epsilon = 1e-15);
        assert_combination_invariants(&cm);
        assert_eq!(cm.p_alpha().len(), 1);
        assert_relative_eq!(cm.p_alpha()[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn single_agent_is_degenerate_but_valid() {
        let g = Graph::new(1, &[], &[0]).unwrap();
        let cm = metropolis_matrix(&g).unwrap();
        assert_eq!(cm.a()[(0, 0)], 1.0);
        assert_eq!(cm.v_alpha().ncols(), 0);
        assert_eq!(cm.p_alpha().len(), 0);
        assert_eq!(cm.spectral_radius_alpha(), 0.0);
    }

    #[test]
    fn paper_scale_sixteen_agent_graph() {
        let g = Graph::random_connected(16, 0.4, 7);
        assert!(g.is_connected());
        let cm = metropolis_matrix(&g).unwrap();
        assert_combination_invariants(&cm);
        // Independent oracle for the mixing rate.
        let rho_oracle = rho_alpha_power_iteration(cm.a());
        assert_relative_eq!(cm.spectral_radius_alpha(), rho_oracle, epsilon = 1e-9);
    }

    #[test]
    fn disconnected_graph_rejected() {
        let g = Graph::new(4, &[(0, 1), (2, 3)], &[0, 1, 2, 3]).unwrap();
        assert!(matches!(metropolis_matrix(&g), Err(TopologyError::NotConnected)));
    }

    #[test]
    fn missing_self_loops_rejected() {
        let g = Graph::new(3, &[(0, 1), (1, 2), (0, 2)], &[]).unwrap();
        assert!(matches!(metropolis_matrix(&g), Err(TopologyError::NoSelfLoop)));
    }

    #[test]
    fn strategy_matrix_table() {
        let cm = metropolis_matrix(&Graph::complete(2)).unwrap();
        let con = strategy_matrices(&cm, Strategy::Consensus);
        assert_eq!(&con.a1, cm.a());
        assert_eq!(con.a2, DMatrix::identity(2, 2));

        let dif = strategy_matrices(&cm, Strategy::Diffusion);
        assert_eq!(dif.a1, DMatrix::identity(2, 2));
        assert_eq!(&dif.a2, cm.a());

        let cen = strategy_matrices(&cm, Strategy::Centralized);
        assert_eq!(cen.a1, DMatrix::identity(2, 2));
        for j in 0..2 {
            assert_relative_eq!(cen.a2.column(j).sum(), 1.0);
        }
        // rank one: all columns identical
        assert_eq!(cen.a2.column(0), cen.a2.column(1));
    }

    #[test]
    fn block_extend_identity_and_permutation() {
        let id2 = DMatrix::identity(2, 2);
        assert_eq!(block_extend(&id2, 3), DMatrix::identity(6, 6));

        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let u = DVector::from_vec(vec![1.0, 2.0]);
        let v = DVector::from_vec(vec![3.0, 4.0]);
        let stacked = crate::linalg::stack(&[u.clone(), v.clone()]);
        let mixed = block_extend(&swap, 2) * stacked;
        assert_eq!(crate::linalg::unstack(&mixed, 2), vec![v, u]);
    }

    #[test]
    fn block_extend_matches_per_block_sum_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let g = Graph::random_connected(3, 0.8, 5);
        let m = metropolis_matrix(&g).unwrap().a().clone();
        let blocks: Vec<DVector<f64>> =
            (0..3).map(|_| DVector::from_fn(4, |_, _| rng.random::<f64>() - 0.5)).collect();
        let fast = block_extend(&m, 4) * crate::linalg::stack(&blocks);
        // brute-force column-convention sum
        let mut oracle = vec![DVector::zeros(4); 3];
        for k in 0..3 {
            for l in 0..3 {
                oracle[k] += m[(l, k)] * &blocks[l];
            }
        }
        assert_relative_eq!(crate::linalg::unstack(&fast, 3)[..], oracle[..], epsilon = 1e-12);
        assert_relative_eq!(
            crate::linalg::stack(&combine_columns(&m, &blocks)),
            fast,
            epsilon = 1e-12
        );
    }

    #[test]
    fn eigen_output_is_deterministic() {
        let g = Graph::random_connected(12, 0.3, 42);
        let a = metropolis_matrix(&g).unwrap();
        let b = metropolis_matrix(&g).unwrap();
        assert_eq!(a.v_alpha(), b.v_alpha());
        assert_eq!(a.p_alpha(), b.p_alpha());
    }

    #[test]
    fn graph_spec_roundtrip() {
        let json = r#"{ "K": 3, "edges": [[0,1],[1,2]], "self_loops": [0,1,2] }"#;
        let spec: GraphSpec = serde_json::from_str(json).unwrap();
        let g = Graph::from_spec(&spec).unwrap();
        assert!(g.validate().is_ok());
        let cm = metropolis_matrix(&g).unwrap();
        assert_combination_invariants(&cm);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn random_connected_graphs_satisfy_all_invariants(
            k in 2usize..20,
            seed in 0u64..500,
            prob in 0.05f64..0.9,
        ) {
            let g = Graph::random_connected(k, prob, seed);
            let cm = metropolis_matrix(&g).unwrap();
            assert_combination_invariants(&cm);
        }
    }
}
