//! Mixing matrices, the consensus operator and the network operator Ξ.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::PartitionedDataset;
use crate::error::{Error, Result};
use crate::linalg;

/// Tolerance on row/column sums and symmetry of a mixing matrix.
pub const STOCHASTIC_TOL: f64 = 1e-10;

/// Per-condition results of checking a candidate mixing matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingDiagnostics {
    pub size: (usize, usize),
    pub square: bool,
    /// (i) weights are non-negative (positive exactly on edges).
    pub nonnegative: bool,
    /// (ii) the support graph is undirected.
    pub undirected: bool,
    pub row_stochastic: bool,
    pub column_stochastic: bool,
    /// (iv) the support graph is connected.
    pub connected: bool,
    pub symmetric: bool,
    /// Second-largest eigenvalue modulus.
    pub lambda2: f64,
    /// `lambda2 < 1`.
    pub mixing: bool,
}

impl MixingDiagnostics {
    /// (iii) doubly stochastic.
    pub fn doubly_stochastic(&self) -> bool {
        self.row_stochastic && self.column_stochastic
    }

    pub fn is_valid(&self) -> bool {
        self.failures().is_empty()
    }

    /// Names of the conditions that failed.
    pub fn failures(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.square {
            out.push("square");
            return out;
        }
        let checks = [
            (self.nonnegative, "(i) non-negative weights"),
            (self.undirected, "(ii) undirected support"),
            (self.row_stochastic, "(iii) rows sum to one"),
            (self.column_stochastic, "(iii) columns sum to one"),
            (self.connected, "(iv) connected"),
            (self.symmetric, "symmetric"),
            (self.mixing, "second eigenvalue modulus below one"),
        ];
        out.extend(checks.iter().filter(|(ok, _)| !ok).map(|(_, name)| *name));
        out
    }
}

/// Check a matrix against the mixing-matrix requirements. Never fails; the
/// returned diagnostics carry the verdict.
pub fn validate_mixing_matrix(w: &DMatrix<f64>) -> MixingDiagnostics {
    let (rows, cols) = w.shape();
    let mut diag = MixingDiagnostics {
        size: (rows, cols),
        square: rows == cols && rows > 0,
        nonnegative: false,
        undirected: false,
        row_stochastic: false,
        column_stochastic: false,
        connected: false,
        symmetric: false,
        lambda2: f64::NAN,
        mixing: false,
    };
    if !diag.square || w.iter().any(|v| !v.is_finite()) {
        return diag;
    }
    let m = rows;
    diag.nonnegative = w.iter().all(|&v| v >= 0.0);
    diag.undirected = (0..m).all(|i| (0..m).all(|j| (w[(i, j)] > 0.0) == (w[(j, i)] > 0.0)));
    diag.row_stochastic = w.row_iter().all(|r| (r.sum() - 1.0).abs() <= STOCHASTIC_TOL);
    diag.column_stochastic = w.column_iter().all(|c| (c.sum() - 1.0).abs() <= STOCHASTIC_TOL);
    diag.symmetric = (w - w.transpose()).abs().max() <= STOCHASTIC_TOL;
    diag.connected = support_connected(w);
    diag.lambda2 = second_eigenvalue_modulus(w, diag.symmetric);
    diag.mixing = diag.lambda2 < 1.0 - STOCHASTIC_TOL;
    diag
}

/// Breadth-first search over the (symmetrized) support graph.
fn support_connected(w: &DMatrix<f64>) -> bool {
    let m = w.nrows();
    let mut seen = vec![false; m];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(i) = queue.pop_front() {
        for j in 0..m {
            if !seen[j] && (w[(i, j)] > 0.0 || w[(j, i)] > 0.0) {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen.into_iter().all(|s| s)
}

fn second_eigenvalue_modulus(w: &DMatrix<f64>, symmetric: bool) -> f64 {
    if w.nrows() < 2 {
        return 0.0;
    }
    let mut moduli: Vec<f64> = if symmetric {
        linalg::sym_eigen_desc(w).0.iter().map(|v| v.abs()).collect()
    } else {
        w.complex_eigenvalues().iter().map(|z| z.norm()).collect()
    };
    moduli.sort_by(|a, b| b.total_cmp(a));
    moduli[1]
}

/// A validated mixing matrix together with the consensus depth `c`.
#[derive(Debug, Clone)]
pub struct Topology {
    w: DMatrix<f64>,
    rounds: u32,
    lambda2: f64,
    w_power: DMatrix<f64>,
}

impl Topology {
    /// Validate `w` and fix the number of consensus rounds per iteration.
    pub fn new(w: DMatrix<f64>, rounds: u32) -> Result<Self> {
        if rounds < 1 {
            return Err(Error::Topology("consensus rounds must be at least 1".into()));
        }
        let diag = validate_mixing_matrix(&w);
        if !diag.is_valid() {
            return Err(Error::Topology(diag.failures().join(", ")));
        }
        let w_power = linalg::matrix_power(&w, rounds);
        Ok(Self {
            w,
            rounds,
            lambda2: diag.lambda2,
            w_power,
        })
    }

    pub fn with_rounds(&self, rounds: u32) -> Result<Self> {
        Self::new(self.w.clone(), rounds)
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// `W^c`.
    pub fn w_power(&self) -> &DMatrix<f64> {
        &self.w_power
    }

    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }

    pub fn m(&self) -> usize {
        self.w.nrows()
    }
}

/// Ring with the given self weight; the rest is split between the two neighbours.
pub fn ring(m: usize, self_weight: f64) -> Result<DMatrix<f64>> {
    if m == 0 || !(0.0..=1.0).contains(&self_weight) {
        return Err(Error::Topology(format!(
            "bad ring parameters m={m}, self weight {self_weight}"
        )));
    }
    Ok(match m {
        1 => DMatrix::identity(1, 1),
        2 => DMatrix::from_row_slice(2, 2, &[self_weight, 1.0 - self_weight, 1.0 - self_weight, self_weight]),
        _ => {
            let side = (1.0 - self_weight) / 2.0;
            DMatrix::from_fn(m, m, |i, j| {
                if i == j {
                    self_weight
                } else if (i + 1) % m == j || (j + 1) % m == i {
                    side
                } else {
                    0.0
                }
            })
        }
    })
}

/// Metropolis weights on an undirected adjacency structure.
pub fn metropolis(adjacency: &[Vec<usize>]) -> DMatrix<f64> {
    let m = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(Vec::len).collect();
    let mut w = DMatrix::zeros(m, m);
    for i in 0..m {
        for &j in &adjacency[i] {
            w[(i, j)] = 1.0 / (1 + degree[i].max(degree[j])) as f64;
        }
        let off: f64 = adjacency[i].iter().map(|&j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

/// Complete graph with Metropolis weights (all entries `1/m`).
pub fn complete(m: usize) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(Error::Topology("complete graph needs m >= 1".into()));
    }
    let adjacency = (0..m).map(|i| (0..m).filter(|&j| j != i).collect()).collect::<Vec<_>>();
    Ok(metropolis(&adjacency))
}

/// Path graph with Metropolis weights.
pub fn path(m: usize) -> Result<DMatrix<f64>> {
    if m == 0 {
        return Err(Error::Topology("path graph needs m >= 1".into()));
    }
    let adjacency = (0..m)
        .map(|i| {
            let mut nb = Vec::new();
            if i > 0 {
                nb.push(i - 1);
            }
            if i + 1 < m {
                nb.push(i + 1);
            }
            nb
        })
        .collect::<Vec<_>>();
    Ok(metropolis(&adjacency))
}

/// The 4-agent ring used in the experiments: self weight 0.5, neighbours 0.25.
pub fn benchmark_ring() -> DMatrix<f64> {
    ring(4, 0.5).expect("valid ring")
}

/// One consensus stage: agent `i` ends with `m Σ_j (W^c)_{ij} z_j`.
pub fn consensus_apply(top: &Topology, z: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
    let m = top.m();
    if z.len() != m {
        return Err(Error::Dimension(format!("{} vectors for {m} agents", z.len())));
    }
    let d = z[0].len();
    if z.iter().any(|v| v.len() != d) {
        return Err(Error::Dimension("consensus inputs differ in length".into()));
    }
    let wc = top.w_power();
    Ok((0..m)
        .map(|i| {
            let mut acc = DVector::zeros(d);
            for (j, zj) in z.iter().enumerate() {
                acc.axpy(m as f64 * wc[(i, j)], zj, 1.0);
            }
            acc
        })
        .collect())
}

/// `Ξ = D(X) (m W^c ⊗ I_d) D(X)ᵀ`, assembled entrywise from the Gram matrix.
pub fn network_matrix(data: &PartitionedDataset, top: &Topology) -> Result<DMatrix<f64>> {
    if data.m() != top.m() {
        return Err(Error::Dimension(format!(
            "data has {} agents, topology {}",
            data.m(),
            top.m()
        )));
    }
    let x = data.stack();
    let owner = data.owners();
    let mut xi = &x * x.transpose();
    let scale = top.w_power() * data.m() as f64;
    for b in 0..xi.ncols() {
        for a in 0..xi.nrows() {
            xi[(a, b)] *= scale[(owner[a], owner[b])];
        }
    }
    Ok(xi)
}

/// Ξ with its spectrum and its distance to `X Xᵀ`.
#[derive(Debug, Clone)]
pub struct NetworkOperator {
    pub xi: DMatrix<f64>,
    /// Eigenvalues of Ξ, descending.
    pub mu: Vec<f64>,
    /// Eigenvectors of Ξ, column `k` pairs with `mu[k]`.
    pub eigenvectors: DMatrix<f64>,
    /// `‖Ξ − X Xᵀ‖₂`.
    pub consensus_gap: f64,
    pub min_eigenvalue: f64,
    /// Set when the smallest eigenvalue is below `−10 ε_mach μ₁`.
    pub indefinite: bool,
}

impl NetworkOperator {
    pub fn n(&self) -> usize {
        self.xi.nrows()
    }
}

pub fn build_network_operator(data: &PartitionedDataset, top: &Topology) -> Result<NetworkOperator> {
    let xi = network_matrix(data, top)?;
    let x = data.stack();
    let gram = &x * x.transpose();
    let consensus_gap = linalg::spectral_norm_sym(&(&xi - gram));
    let (mu, eigenvectors) = linalg::sym_eigen_desc(&xi);
    let min_eigenvalue = *mu.last().expect("non-empty spectrum");
    let indefinite = min_eigenvalue < -10.0 * f64::EPSILON * mu[0].abs();
    Ok(NetworkOperator {
        xi,
        mu,
        eigenvectors,
        consensus_gap,
        min_eigenvalue,
        indefinite,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{normalize_unit_ball, partition_rows, RawDataset};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_partitioned(n: usize, d: usize, m: usize, seed: u64) -> PartitionedDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let x = normalize_unit_ball(&RawDataset::new(rows, "r").unwrap()).unwrap();
        partition_rows(&x, m, None).unwrap()
    }

    #[test]
    fn benchmark_ring_is_valid_with_lambda2_half() {
        let diag = validate_mixing_matrix(&benchmark_ring());
        assert!(diag.is_valid(), "{:?}", diag.failures());
        // Circulant eigenvalues 0.5 + 0.5 cos(2πk/4) = {1, 0.5, 0, 0.5}.
        assert!((diag.lambda2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn identity_fails_connectivity() {
        let diag = validate_mixing_matrix(&DMatrix::identity(2, 2));
        assert!(!diag.connected);
        assert!(!diag.is_valid());
        assert!(diag.failures().contains(&"(iv) connected"));
    }

    #[test]
    fn row_but_not_column_stochastic_fails() {
        let w = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.2, 0.8]);
        let diag = validate_mixing_matrix(&w);
        assert!(diag.row_stochastic);
        assert!(!diag.column_stochastic);
        assert!(!diag.doubly_stochastic());
    }

    #[test]
    fn non_square_is_reported() {
        let diag = validate_mixing_matrix(&DMatrix::zeros(2, 3));
        assert!(!diag.square);
        assert_eq!(diag.failures(), vec!["square"]);
    }

    #[test]
    fn periodic_matrix_fails_mixing() {
        // Swap permutation: doubly stochastic and connected, eigenvalue -1.
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let diag = validate_mixing_matrix(&w);
        assert!(diag.connected && diag.doubly_stochastic());
        assert!(!diag.mixing);
    }

    #[test]
    fn generators_are_valid() {
        for m in 1..7 {
            for w in [ring(m, 0.5).unwrap(), complete(m).unwrap(), path(m).unwrap()] {
                let diag = validate_mixing_matrix(&w);
                assert!(diag.is_valid(), "m={m}: {:?}", diag.failures());
            }
        }
    }

    #[test]
    fn perfect_mixing_gives_exact_sum() {
        let m = 3;
        let top = Topology::new(complete(m).unwrap(), 1).unwrap();
        let z: Vec<DVector<f64>> = (0..m)
            .map(|i| DVector::from_vec(vec![i as f64, 1.0 - i as f64]))
            .collect();
        let sum = z.iter().fold(DVector::zeros(2), |acc, v| acc + v);
        for out in consensus_apply(&top, &z).unwrap() {
            assert!((out - &sum).norm() < 1e-14);
        }
    }

    #[test]
    fn single_agent_consensus_is_identity() {
        let top = Topology::new(DMatrix::identity(1, 1), 3).unwrap();
        let z = vec![DVector::from_vec(vec![1.5, -2.0])];
        assert_eq!(consensus_apply(&top, &z).unwrap(), z);
    }

    #[test]
    fn consensus_rejects_mismatched_dimensions() {
        let top = Topology::new(benchmark_ring(), 1).unwrap();
        let mut z = vec![DVector::zeros(2); 4];
        z[3] = DVector::zeros(3);
        assert!(consensus_apply(&top, &z).is_err());
        assert!(consensus_apply(&top, &z[..2]).is_err());
    }

    proptest! {
        #[test]
        fn consensus_error_within_spectral_bound(
            vals in prop::collection::vec(-5.0f64..5.0, 12),
            c in 1u32..6,
        ) {
            let top = Topology::new(benchmark_ring(), c).unwrap();
            let z: Vec<DVector<f64>> = vals.chunks(3).map(DVector::from_column_slice).collect();
            let sum = z.iter().fold(DVector::zeros(3), |acc, v| acc + v);
            let mean = &sum / 4.0;
            let spread = z.iter().map(|v| (v - &mean).norm_squared()).sum::<f64>().sqrt();
            let bound = 4.0 * 0.5f64.powi(c as i32) * spread;
            for out in consensus_apply(&top, &z).unwrap() {
                prop_assert!((out - &sum).norm() <= bound + 1e-12);
            }
        }
    }

    #[test]
    fn single_agent_operator_is_gram() {
        let data = random_partitioned(6, 3, 1, 1);
        let top = Topology::new(DMatrix::identity(1, 1), 1).unwrap();
        let op = build_network_operator(&data, &top).unwrap();
        let x = data.stack();
        assert!((&op.xi - &x * x.transpose()).abs().max() < 1e-15);
        assert!(op.consensus_gap < 1e-14);
    }

    #[test]
    fn operator_matches_blockwise_assembly() {
        let data = random_partitioned(7, 3, 3, 4);
        let top = Topology::new(ring(3, 0.4).unwrap(), 2).unwrap();
        let op = build_network_operator(&data, &top).unwrap();
        let wc = top.w().clone() * top.w();
        let sizes = data.sizes();
        let mut start_i = 0;
        for i in 0..3 {
            let mut start_j = 0;
            for j in 0..3 {
                let block = data.block(i) * data.block(j).transpose() * (3.0 * wc[(i, j)]);
                let view = op.xi.view((start_i, start_j), (sizes[i], sizes[j]));
                assert!((block - view).abs().max() < 1e-14);
                start_j += sizes[j];
            }
            start_i += sizes[i];
        }
        assert!((&op.xi - op.xi.transpose()).abs().max() < 1e-10);
    }

    #[test]
    fn consensus_gap_decays_like_lambda2_power() {
        let data = random_partitioned(12, 3, 4, 9);
        let gaps: Vec<f64> = (1..=6)
            .map(|c| {
                let top = Topology::new(benchmark_ring(), c).unwrap();
                build_network_operator(&data, &top).unwrap().consensus_gap
            })
            .collect();
        for pair in gaps.windows(2) {
            let slope = (pair[1] / pair[0]).ln();
            assert!((slope - 0.5f64.ln()).abs() < 0.05 * 0.5f64.ln().abs(), "slope {slope}");
        }
    }
}
