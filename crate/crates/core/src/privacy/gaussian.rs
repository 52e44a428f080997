use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Eigenvalues at or below this fraction of the largest are treated as zero
/// when reducing rank.
pub const RANK_FLOOR: f64 = 1e-14;

/// Multivariate normal law given by its mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// Retained rank after a reduction, if any.
    pub rank_hint: Option<usize>,
}

impl GaussianDist {
    /// Checks shapes and symmetry (to 1e-10 relative to the largest entry),
    /// then stores the symmetrized covariance.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() || cov.nrows() != mean.len() {
            return Err(Error::Dimension(format!(
                "mean of length {} with covariance {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            )));
        }
        let scale = cov.abs().max().max(1.0);
        if (&cov - cov.transpose()).abs().max() > 1e-10 * scale {
            return Err(Error::Dimension("covariance is not symmetric".into()));
        }
        Ok(Self {
            mean,
            cov: linalg::symmetrize(&cov),
            rank_hint: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Law of `Bᵀ y` for a basis `B` given column-wise.
    pub fn project(&self, basis: &DMatrix<f64>) -> Self {
        let cov = basis.transpose() * &self.cov * basis;
        Self {
            mean: basis.tr_mul(&self.mean),
            cov: linalg::symmetrize(&cov),
            rank_hint: Some(basis.ncols()),
        }
    }
}

/// Orthonormal basis of the leading eigenvectors of `cov` that capture
/// `energy_tol` of its trace, dropping numerically null directions.
pub fn reduction_basis(cov: &DMatrix<f64>, energy_tol: f64) -> Result<DMatrix<f64>> {
    if !(energy_tol > 0.0 && energy_tol <= 1.0) {
        return Err(Error::Config(format!(
            "energy tolerance must lie in (0, 1], got {energy_tol}"
        )));
    }
    let (values, vectors) = linalg::sym_eigen_desc(cov);
    let trace: f64 = values.iter().sum();
    let top = values.first().copied().unwrap_or(0.0);
    if !(trace > 0.0 && top > 0.0) {
        return Err(Error::ZeroCovariance);
    }
    let positive = values.iter().take_while(|&&v| v > RANK_FLOOR * top).count();
    let mut kept = 0;
    let mut energy = 0.0;
    for &v in values.iter().take(positive) {
        kept += 1;
        energy += v;
        if energy >= energy_tol * trace {
            break;
        }
    }
    Ok(vectors.columns(0, kept).into_owned())
}

/// Project onto the smallest leading eigenspace that holds `energy_tol` of
/// the covariance trace. The result has a positive definite covariance.
pub fn reduce_rank(g: &GaussianDist, energy_tol: f64) -> Result<GaussianDist> {
    let basis = reduction_basis(&g.cov, energy_tol)?;
    Ok(g.project(&basis))
}

/// Reduce two laws onto one common basis, taken from the eigenvectors of the
/// summed covariance, so that they stay comparable.
pub fn reduce_rank_joint(
    p: &GaussianDist,
    q: &GaussianDist,
    energy_tol: f64,
) -> Result<(GaussianDist, GaussianDist, DMatrix<f64>)> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension(format!(
            "laws of dimension {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    let basis = reduction_basis(&(&p.cov + &q.cov), energy_tol)?;
    Ok((p.project(&basis), q.project(&basis), basis))
}
