#[path = "support/quadrature.rs"]
mod quadrature;

use ddppm::privacy::{pair_geometry, renyi_divergence_gaussian, GaussianDist};
use ddppm::rng::{self, Purpose};
use nalgebra::{DMatrix, DVector};
use quadrature::renyi_by_quadrature;

fn random_law(seed: u64, k: u64, dim: usize) -> GaussianDist {
    let mut g = rng::substream(seed, Purpose::Trial, k, dim as u64, 0);
    let mean = DVector::from_vec(rng::gaussian_vec(&mut g, dim, 1.0));
    let b = DMatrix::from_vec(dim, dim, rng::gaussian_vec(&mut g, dim * dim, 0.7));
    let cov = &b * b.transpose() + DMatrix::identity(dim, dim) * 0.3;
    GaussianDist::new(mean, (&cov + cov.transpose()) * 0.5).unwrap()
}

/// The largest order below `want` for which the integrand stays integrable.
fn feasible_order(p: &GaussianDist, q: &GaussianDist, want: f64) -> f64 {
    let pp = p.cov.clone().try_inverse().unwrap();
    let qp = q.cov.clone().try_inverse().unwrap();
    let mut order = want;
    loop {
        let a = &pp * order + &qp * (1.0 - order);
        if a.symmetric_eigenvalues().min() > 1e-2 * pp.norm() {
            return order;
        }
        order = 1.0 + 0.5 * (order - 1.0);
    }
}

#[test]
fn closed_form_matches_quadrature_in_one_to_three_dimensions() {
    let mut checked = 0;
    for k in 0..24u64 {
        let dim = 1 + (k % 3) as usize;
        let p = random_law(11, 2 * k, dim);
        let q = random_law(11, 2 * k + 1, dim);
        let order = feasible_order(&p, &q, 1.5 + (k % 4) as f64 * 0.75);
        let oracle = renyi_by_quadrature(&p.mean, &p.cov, &q.mean, &q.cov, order);
        let closed = renyi_divergence_gaussian(&p, &q, order).unwrap();
        assert!(
            (closed - oracle).abs() <= 1e-8,
            "dim {dim} order {order}: {closed} vs {oracle}"
        );
        let curve = pair_geometry(&p.cov, &q.cov, 1.0)
            .unwrap()
            .curve(&(&p.mean - &q.mean), false)
            .unwrap();
        let spectral = curve.divergence(order - 1.0);
        assert!(
            (spectral - oracle).abs() <= 1e-8 * oracle.max(1.0),
            "spectral {spectral} vs {oracle}"
        );
        checked += 1;
    }
    assert_eq!(checked, 24);
}

#[test]
fn textbook_one_dimensional_values() {
    let law = |m: f64, v: f64| GaussianDist::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, v)).unwrap();
    let shift = renyi_by_quadrature(
        &law(0.0, 1.0).mean,
        &law(0.0, 1.0).cov,
        &law(1.0, 1.0).mean,
        &law(1.0, 1.0).cov,
        2.0,
    );
    assert!((shift - 1.0).abs() < 1e-9);
    let (p, q) = (law(0.0, 1.0), law(0.0, 2.0));
    let oracle = renyi_by_quadrature(&p.mean, &p.cov, &q.mean, &q.cov, 2.0);
    assert!((renyi_divergence_gaussian(&p, &q, 2.0).unwrap() - oracle).abs() < 1e-8);
}
