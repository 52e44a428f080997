//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted
/// descending; column `k` of the returned matrix pairs with value `k`.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Spectral norm of a symmetric matrix (largest eigenvalue modulus).
pub fn spectral_norm_sym(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Integer matrix power by repeated squaring.
pub fn matrix_power(m: &DMatrix<f64>, mut k: u32) -> DMatrix<f64> {
    let mut result = DMatrix::identity(m.nrows(), m.ncols());
    let mut base = m.clone();
    while k > 0 {
        if k & 1 == 1 {
            result = &result * &base;
        }
        k >>= 1;
        if k > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Singular values (descending) and matching left singular vectors.
pub fn left_singular(x: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let svd = x.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let values = order.iter().map(|&k| s[k]).collect();
    let vectors = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    (values, vectors)
}

/// Top right singular vectors of `x` (columns), sorted by singular value.
pub fn right_singular(x: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let svd = x.clone().svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    let count = count.min(order.len());
    DMatrix::from_fn(vt.ncols(), count, |r, c| vt[(order[c], r)])
}

/// Flip the sign of `v` so that its largest-magnitude entry is positive.
pub fn canonical_sign(v: &mut DVector<f64>) {
    let mut best = 0.0_f64;
    let mut sign = 1.0;
    for &x in v.iter() {
        if x.abs() > best {
            best = x.abs();
            sign = x.signum();
        }
    }
    if sign < 0.0 {
        v.neg_mut();
    }
}

pub fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |r, c| m[(rows[r], c)])
}

pub fn select_entries(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

pub(crate) fn to_vec(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_power_matches_repeated_product() {
        let m = DMatrix::from_row_slice(3, 3, &[0.5, 0.25, 0.25, 0.25, 0.5, 0.25, 0.25, 0.25, 0.5]);
        let mut direct = DMatrix::identity(3, 3);
        for _ in 0..7 {
            direct = &direct * &m;
        }
        assert!((matrix_power(&m, 7) - direct).norm() < 1e-14);
        assert_eq!(matrix_power(&m, 0), DMatrix::identity(3, 3));
    }

    #[test]
    fn eigen_sorted_descending() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 3.0]);
        let (vals, vecs) = sym_eigen_desc(&m);
        assert_eq!(vals, vec![3.0, 1.0]);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sign_canonicalization() {
        let mut v = DVector::from_vec(vec![0.1, -0.9, 0.3]);
        canonical_sign(&mut v);
        assert!(v[1] > 0.0);
    }
}
