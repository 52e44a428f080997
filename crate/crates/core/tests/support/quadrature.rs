//! Tensor-product Gauss–Kronrod quadrature for 1–3 dimensional integrals,
//! and a Rényi divergence computed from it.

#![allow(clippy::excessive_precision)]

use nalgebra::{DMatrix, DVector};

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
/// Nodes and weights of the composite 15-point Kronrod rule on `pieces`
/// equal subintervals of `[a, b]`.
fn composite(a: f64, b: f64, pieces: usize) -> Vec<(f64, f64)> {
    let step = (b - a) / pieces as f64;
    let h = 0.5 * step;
    let mut rule = Vec::with_capacity(15 * pieces);
    for k in 0..pieces {
        let c = a + (k as f64 + 0.5) * step;
        rule.push((c, WGK[7] * h));
        for j in 0..7 {
            rule.push((c - h * XGK[j], WGK[j] * h));
            rule.push((c + h * XGK[j], WGK[j] * h));
        }
    }
    rule
}

/// `∫ g` over the cube `[-width, width]^dim` by the tensor product of a
/// composite rule with `pieces` subintervals per axis.
pub fn integrate_cube(g: &dyn Fn(&[f64]) -> f64, dim: usize, width: f64, pieces: usize) -> f64 {
    fn level(g: &dyn Fn(&[f64]) -> f64, rule: &[(f64, f64)], dim: usize, x: &mut Vec<f64>) -> f64 {
        if x.len() == dim {
            return g(x);
        }
        let mut total = 0.0;
        for &(node, weight) in rule {
            x.push(node);
            total += weight * level(g, rule, dim, x);
            x.pop();
        }
        total
    }
    let rule = composite(-width, width, pieces);
    level(g, &rule, dim, &mut Vec::with_capacity(dim))
}

fn log_density(x: &DVector<f64>, mean: &DVector<f64>, precision: &DMatrix<f64>, log_det: f64) -> f64 {
    let d = x - mean;
    let k = x.len() as f64;
    -0.5 * (d.dot(&(precision * &d)) + log_det + k * (2.0 * std::f64::consts::PI).ln())
}

/// `D_order(P‖Q) = ln(∫ p^order q^(1−order)) / (order − 1)` by quadrature.
/// The integrand is an unnormalized Gaussian; its spread only sets the
/// change of variables.
pub fn renyi_by_quadrature(
    p_mean: &DVector<f64>,
    p_cov: &DMatrix<f64>,
    q_mean: &DVector<f64>,
    q_cov: &DMatrix<f64>,
    order: f64,
) -> f64 {
    let dim = p_mean.len();
    let p_prec = p_cov.clone().try_inverse().unwrap();
    let q_prec = q_cov.clone().try_inverse().unwrap();
    let (p_ld, q_ld) = (p_cov.determinant().ln(), q_cov.determinant().ln());
    let prec = &p_prec * order + &q_prec * (1.0 - order);
    let spread = prec.clone().try_inverse().expect("integrand must be integrable");
    let center = &spread * (&p_prec * p_mean * order + &q_prec * q_mean * (1.0 - order));
    let log_f = |x: &DVector<f64>| {
        order * log_density(x, p_mean, &p_prec, p_ld) + (1.0 - order) * log_density(x, q_mean, &q_prec, q_ld)
    };
    let peak = log_f(&center);
    // Integrate in whitened coordinates x = center + L u, where L L^T is the
    // integrand's spread, so every axis has unit scale.
    let chol = spread.clone().cholesky().expect("spread must be positive definite");
    let factor = chol.l();
    let jacobian: f64 = factor.diagonal().iter().product();
    // Pull both log densities back to u; each is -(1/2)|A u - b|^2 + const.
    let pull = |prec: &DMatrix<f64>, mean: &DVector<f64>| {
        let root = prec.clone().cholesky().unwrap().l().transpose();
        (&root * &factor, &root * (mean - &center))
    };
    let (pa, pb) = pull(&p_prec, p_mean);
    let (qa, qb) = pull(&q_prec, q_mean);
    let shift = |u: &[f64], a: &DMatrix<f64>, b: &DVector<f64>| -> f64 {
        (0..dim)
            .map(|i| {
                let r = (0..dim).map(|j| a[(i, j)] * u[j]).sum::<f64>() - b[i];
                r * r
            })
            .sum()
    };
    let g = |u: &[f64]| {
        let log = -0.5 * (order * (p_ld + shift(u, &pa, &pb)) + (1.0 - order) * (q_ld + shift(u, &qa, &qb)))
            - 0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln();
        (log - peak).exp()
    };
    // Two resolutions; their agreement is the accuracy check.
    let coarse = integrate_cube(&g, dim, 10.0, 4);
    let fine = integrate_cube(&g, dim, 10.0, 6);
    assert!(
        (coarse - fine).abs() <= 1e-11 * fine,
        "quadrature unresolved: {coarse} vs {fine}"
    );
    let mass = jacobian * fine;
    (peak + mass.ln()) / (order - 1.0)
}
