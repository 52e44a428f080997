//! Rényi divergence between Gaussians and its Chernoff conversion to δ.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::gaussian::{GaussianDist, RANK_FLOOR};
use crate::error::{Error, Result};
use crate::linalg;

/// Smallest Chernoff exponent searched.
pub const BETA_FLOOR: f64 = 1e-3;
/// Largest Chernoff exponent searched when the divergence stays finite.
pub const BETA_CAP: f64 = 1e4;
const GRID_POINTS: usize = 32;
const SEARCH_TOL: f64 = 1e-6;

/// Closed-form `D_order(P ‖ Q)` for Gaussians with positive definite
/// covariances. Returns `+∞` when `order·Σ_P⁻¹ − (order−1)·Σ_Q⁻¹` is not
/// positive definite.
pub fn renyi_divergence_gaussian(p: &GaussianDist, q: &GaussianDist, order: f64) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension(format!(
            "laws of dimension {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    if !(order > 1.0 && order.is_finite()) {
        return Err(Error::Config(format!("Rényi order must exceed 1, got {order}")));
    }
    let beta = order - 1.0;
    let chol_p = p
        .cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("first covariance".into()))?;
    let chol_q = q
        .cov
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("second covariance".into()))?;
    let prec_p = chol_p.inverse();
    let prec_q = chol_q.inverse();
    let a = linalg::symmetrize(&(&prec_p * order - &prec_q * beta));
    let Some(chol_a) = a.cholesky() else {
        return Ok(f64::INFINITY);
    };
    let logdet = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let dmu = &p.mean - &q.mean;
    let left = &prec_p * &dmu;
    let right = &prec_q * &dmu;
    let quad = left.dot(&chol_a.solve(&right));
    let logs = logdet(&chol_a.l()) + order * logdet(&chol_p.l()) - beta * logdet(&chol_q.l());
    Ok((0.5 * order * quad - logs / (2.0 * beta)).max(0.0))
}

/// `D_{β+1}` as a sum of independent one-dimensional terms: in coordinates
/// where the first covariance is the identity, the second is
/// `diag(λ_j)` and the mean difference is `w`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DivergenceCurve {
    /// `(λ_j, w_j²)`.
    pub terms: Vec<(f64, f64)>,
}

impl DivergenceCurve {
    /// `D_{β+1}` at Chernoff exponent `β > 0`.
    pub fn divergence(&self, beta: f64) -> f64 {
        let mut total = 0.0;
        for &(lambda, w2) in &self.terms {
            let s = lambda + beta * (lambda - 1.0);
            if !(s > 0.0) {
                return f64::INFINITY;
            }
            let logs = (beta * (1.0 - 1.0 / lambda)).ln_1p() - beta * lambda.ln();
            total += (beta + 1.0) * w2 / (2.0 * s) - logs / (2.0 * beta);
        }
        total.max(0.0)
    }

    /// Supremum of exponents with a finite divergence.
    pub fn beta_sup(&self) -> f64 {
        self.terms
            .iter()
            .filter(|(l, _)| *l < 1.0)
            .map(|(l, _)| l / (1.0 - l))
            .fold(f64::INFINITY, f64::min)
    }

    /// Divergence of independent products: term lists concatenate.
    pub fn extend(&mut self, other: &DivergenceCurve) {
        self.terms.extend_from_slice(&other.terms);
    }
}

/// Simultaneous diagonalization of two covariances, shared by every mean
/// difference and by both orderings of the pair.
#[derive(Debug, Clone)]
pub struct PairGeometry {
    /// Eigenvalues of the first covariance after whitening the sum, in [0, 1].
    pub a: Vec<f64>,
    /// Maps a mean difference to the diagonal coordinates.
    transform: DMatrix<f64>,
    /// Directions with no resolvable variance under either law.
    null_space: DMatrix<f64>,
    floor: f64,
    scale: DVector<f64>,
}

/// Outcome of a Chernoff search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaBound {
    pub delta: f64,
    pub beta_star: Option<f64>,
    /// The divergence is infinite over the whole search range.
    pub infinite: bool,
}

impl DeltaBound {
    pub const INFINITE: DeltaBound = DeltaBound {
        delta: 1.0,
        beta_star: None,
        infinite: true,
    };
}

/// Diagonalize `Σ_P` and `Σ_Q` jointly. Coordinates are first equilibrated
/// (the divergence is invariant under invertible maps), then projected onto
/// the leading eigenspace of the sum holding `energy_tol` of its trace.
pub fn pair_geometry(p_cov: &DMatrix<f64>, q_cov: &DMatrix<f64>, energy_tol: f64) -> Result<PairGeometry> {
    if p_cov.shape() != q_cov.shape() || p_cov.nrows() != p_cov.ncols() {
        return Err(Error::Dimension("covariances must be square and of equal size".into()));
    }
    if !(energy_tol > 0.0 && energy_tol <= 1.0) {
        return Err(Error::Config(format!(
            "energy tolerance must lie in (0, 1], got {energy_tol}"
        )));
    }
    let dim = p_cov.nrows();
    let scale = DVector::from_fn(dim, |k, _| {
        let v = p_cov[(k, k)] + q_cov[(k, k)];
        if v > 0.0 {
            1.0 / v.sqrt()
        } else {
            1.0
        }
    });
    let equilibrate = |c: &DMatrix<f64>| DMatrix::from_fn(dim, dim, |r, k| c[(r, k)] * scale[r] * scale[k]);
    let sp = equilibrate(p_cov);
    let sum = linalg::symmetrize(&(&sp + equilibrate(q_cov)));
    let (values, vectors) = linalg::sym_eigen_desc(&sum);
    let top = values.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(Error::ZeroCovariance);
    }
    let trace: f64 = values.iter().sum();
    let support = values.iter().take_while(|&&v| v > RANK_FLOOR * top).count();
    let mut kept = 0;
    let mut energy = 0.0;
    for &v in values.iter().take(support) {
        kept += 1;
        energy += v;
        if energy >= energy_tol * trace {
            break;
        }
    }
    let whiten = DMatrix::from_fn(kept, dim, |r, c| vectors[(c, r)] / values[r].sqrt());
    let a_mat = linalg::symmetrize(&(&whiten * &sp * whiten.transpose()));
    let (a, v) = linalg::sym_eigen_desc(&a_mat);
    Ok(PairGeometry {
        a: a.into_iter().map(|x| x.clamp(0.0, 1.0)).collect(),
        transform: v.transpose() * whiten,
        null_space: vectors.columns(support, dim - support).into_owned(),
        floor: RANK_FLOOR * top,
        scale,
    })
}

impl PairGeometry {
    pub fn rank(&self) -> usize {
        self.a.len()
    }

    /// Divergence curve of `P ‖ Q` (or `Q ‖ P` when `reverse`) for mean
    /// difference `μ_P − μ_Q`. Directions below the resolution floor are
    /// given variance `RANK_FLOOR·top/2` under both laws, so a mean shift
    /// there costs `‖shift‖² / (RANK_FLOOR·top)` instead of being ignored.
    /// `None` when one law has a direction of zero variance that the other
    /// does not.
    pub fn curve(&self, mean_diff: &DVector<f64>, reverse: bool) -> Option<DivergenceCurve> {
        let scaled = mean_diff.component_mul(&self.scale);
        let mut terms = Vec::with_capacity(self.a.len() + 1);
        let off_support = self.null_space.tr_mul(&scaled).norm_squared();
        if off_support > 0.0 {
            terms.push((1.0, 2.0 * off_support / self.floor));
        }
        let u = &self.transform * scaled;
        for (j, &a) in self.a.iter().enumerate() {
            let (own, other) = if reverse { (1.0 - a, a) } else { (a, 1.0 - a) };
            if !(own > 0.0) {
                return None;
            }
            terms.push((other / own, u[j] * u[j] / own));
        }
        Some(DivergenceCurve { terms })
    }
}

/// Chernoff conversion `δ = inf_β exp(β (D_{β+1} − ε))` over
/// `β ∈ [BETA_FLOOR, min(BETA_CAP, β_sup)]`, clamped to `[0, 1]`.
pub fn delta_from_curve(curve: &DivergenceCurve, epsilon: f64) -> DeltaBound {
    let hi = BETA_CAP.min(curve.beta_sup() * (1.0 - 1e-9));
    if !(hi >= BETA_FLOOR) {
        return DeltaBound::INFINITE;
    }
    let objective = |log_beta: f64| {
        let beta = log_beta.exp();
        let v = beta * (curve.divergence(beta) - epsilon);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };
    let (lo_x, hi_x) = (BETA_FLOOR.ln(), hi.ln());
    let grid: Vec<f64> = (0..GRID_POINTS)
        .map(|k| lo_x + (hi_x - lo_x) * k as f64 / (GRID_POINTS - 1) as f64)
        .collect();
    let values: Vec<f64> = grid.iter().map(|&x| objective(x)).collect();
    let (k, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, &v)| if v < acc.1 { (k, v) } else { acc });
    let mut best = (grid[k], values[k]);
    if values[k].is_finite() {
        let (mut a, mut b) = (grid[k.saturating_sub(1)], grid[(k + 1).min(GRID_POINTS - 1)]);
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        let mut c = b - ratio * (b - a);
        let mut d = a + ratio * (b - a);
        let (mut fc, mut fd) = (objective(c), objective(d));
        while b - a > SEARCH_TOL {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - ratio * (b - a);
                fc = objective(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + ratio * (b - a);
                fd = objective(d);
            }
        }
        for (x, v) in [(c, fc), (d, fd)] {
            if v < best.1 {
                best = (x, v);
            }
        }
    }
    if !best.1.is_finite() {
        return DeltaBound::INFINITE;
    }
    DeltaBound {
        delta: best.1.exp().clamp(0.0, 1.0),
        beta_star: Some(best.0.exp()),
        infinite: false,
    }
}

/// δ bound for a single pair of laws, after a joint rank reduction with
/// `energy_tol`.
pub fn delta_bound_reduced(p: &GaussianDist, q: &GaussianDist, epsilon: f64, energy_tol: f64) -> Result<DeltaBound> {
    if p.dim() != q.dim() {
        return Err(Error::Dimension(format!(
            "laws of dimension {} and {}",
            p.dim(),
            q.dim()
        )));
    }
    if !(epsilon > 0.0) {
        return Err(Error::Config(format!("epsilon must be positive, got {epsilon}")));
    }
    let geometry = match pair_geometry(&p.cov, &q.cov, energy_tol) {
        Ok(g) => g,
        Err(Error::ZeroCovariance) => {
            let same = (&p.mean - &q.mean).iter().all(|v| *v == 0.0);
            return Ok(if same {
                zero_divergence_bound(epsilon)
            } else {
                DeltaBound::INFINITE
            });
        }
        Err(e) => return Err(e),
    };
    Ok(match geometry.curve(&(&p.mean - &q.mean), false) {
        Some(curve) => delta_from_curve(&curve, epsilon),
        None => DeltaBound::INFINITE,
    })
}

/// δ bound for a pair of laws without dimensionality reduction.
pub fn delta_bound(p: &GaussianDist, q: &GaussianDist, epsilon: f64) -> Result<DeltaBound> {
    delta_bound_reduced(p, q, epsilon, 1.0)
}

/// Bound for identical laws: `exp(−BETA_CAP·ε)`.
pub fn zero_divergence_bound(epsilon: f64) -> DeltaBound {
    delta_from_curve(&DivergenceCurve::default(), epsilon)
}
