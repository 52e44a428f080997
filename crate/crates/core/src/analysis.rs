//! Covariance of the final iterate, the convergence bound and parameter
//! suggestions.

use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::data::PartitionedDataset;
use crate::engine::{NoiseSchedule, RunConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{validate_mixing_matrix, NetworkOperator, Topology};

/// Gaussian law `N(0, Ω)` of the final unnormalized iterate.
#[derive(Debug, Clone)]
pub struct OmegaModel {
    pub omega: DMatrix<f64>,
    /// `Var Γ_k` along Ξ's eigenvectors, matching `mu`.
    pub variances: Vec<f64>,
    pub mu: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
}

/// `Ω = σ_q² (αΞ)^{2T} + Σ_k σ_p(k)² (αΞ)^{2(T−k)}`, assembled in Ξ's
/// eigenbasis.
pub fn build_omega(op: &NetworkOperator, cfg: &RunConfig) -> OmegaModel {
    let sigma_p = cfg.sigma_p_values();
    let t_max = cfg.iterations as i32;
    let variances: Vec<f64> = op
        .mu
        .iter()
        .map(|&mu| {
            let g = (cfg.alpha * mu).powi(2);
            let mut v = g.powi(t_max) * cfg.sigma_q.powi(2);
            for (k, s) in sigma_p.iter().enumerate() {
                v += g.powi(t_max - 1 - k as i32) * s * s;
            }
            v
        })
        .collect();
    let u = &op.eigenvectors;
    let scaled = DMatrix::from_fn(u.nrows(), u.ncols(), |r, c| u[(r, c)] * variances[c]);
    OmegaModel {
        omega: linalg::symmetrize(&(scaled * u.transpose())),
        variances,
        mu: op.mu.clone(),
        eigenvectors: u.clone(),
    }
}

/// Ratio of accumulated noise along the second and first eigen-directions,
/// normalized by `(αμ)^{2k}`.
pub fn rho(cfg: &RunConfig, mu1: f64, mu2: f64) -> Result<f64> {
    if !(mu1 >= mu2 && mu2 > 0.0 && cfg.alpha > 0.0) {
        return Err(Error::Assumption(format!(
            "rho needs μ₁ ≥ μ₂ > 0, got μ₁={mu1}, μ₂={mu2}"
        )));
    }
    let sigma_p = cfg.sigma_p_values();
    let accumulate = |mu: f64| {
        let g = (cfg.alpha * mu).powi(-2);
        cfg.sigma_q.powi(2)
            + sigma_p
                .iter()
                .enumerate()
                .map(|(k, s)| g.powi(k as i32 + 1) * s * s)
                .sum::<f64>()
    };
    let den = accumulate(mu1);
    if !(den > 0.0) {
        return Err(Error::Config("rho is undefined without any noise".into()));
    }
    Ok(accumulate(mu2) / den)
}

/// Right side of the parameter-choice inequality on `ρ`.
pub fn rho_limit(sigma_q: f64, alpha: f64, mu1: f64) -> f64 {
    1.0 + 1.0 / (sigma_q * sigma_q * (1.0 - (alpha * mu1).powi(-2)))
}

/// Solution of the Hanson–Wright coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HansonWright {
    pub delta: f64,
    pub theta: f64,
    pub iterations: usize,
}

const HW_MAX_ITER: usize = 200;
const HW_TOL: f64 = 1e-8;
const HW_DAMPING: f64 = 0.5;

/// Δ solving `Δ = (2‖Q − ΘΩ‖_F √L + 2‖Q − ΘΩ‖₂ L) / Tr Ω` with
/// `Θ = 1 − vᵀΩv / Tr Ω + Δ`, `Q = Ω^{1/2}(I − vvᵀ)Ω^{1/2}` and
/// `L = ln(1/γ)`, by damped fixed-point iteration from zero.
pub fn hanson_wright_delta(omega: &DMatrix<f64>, v: &DVector<f64>, gamma: f64) -> Result<HansonWright> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Config(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if (v.norm() - 1.0).abs() > 1e-10 || v.len() != omega.nrows() {
        return Err(Error::Config("v must be a unit vector of the covariance's size".into()));
    }
    let trace = omega.trace();
    if !(trace > 0.0) {
        return Err(Error::ZeroCovariance);
    }
    let (values, vectors) = linalg::sym_eigen_desc(omega);
    let roots: Vec<f64> = values.iter().map(|x| x.max(0.0).sqrt()).collect();
    let root =
        DMatrix::from_fn(vectors.nrows(), vectors.ncols(), |r, c| vectors[(r, c)] * roots[c]) * vectors.transpose();
    let w = &root * v;
    let q = omega - &w * w.transpose();
    let base = 1.0 - v.dot(&(omega * v)) / trace;
    let log_term = (1.0 / gamma).ln();
    let map = |delta: f64| {
        let a = &q - omega * (base + delta);
        let a = linalg::symmetrize(&a);
        (2.0 * a.norm() * log_term.sqrt() + 2.0 * linalg::spectral_norm_sym(&a) * log_term) / trace
    };
    let mut delta = 0.0;
    for k in 1..=HW_MAX_ITER {
        let next = (1.0 - HW_DAMPING) * delta + HW_DAMPING * map(delta);
        if !next.is_finite() {
            break;
        }
        if (next - delta).abs() <= HW_TOL * next.abs().max(f64::MIN_POSITIVE) {
            let delta = map(next);
            return Ok(HansonWright {
                delta,
                theta: base + delta,
                iterations: k,
            });
        }
        delta = next;
    }
    Err(Error::NoConvergence(HW_MAX_ITER))
}

/// Status of the standing assumptions for the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AssumptionChecks {
    /// Top two eigenvalues of `X Xᵀ` are distinct.
    pub distinct_spectrum: bool,
    pub mixing_matrix: bool,
    /// `‖Ξ − X Xᵀ‖₂ ≤ λ₁ − λ₂`.
    pub consensus_error: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub theta: f64,
    pub delta_hw: f64,
    /// No Hanson–Wright fixed point exists; `delta_hw` is set to 1 so the
    /// bound is trivially true.
    pub hw_vacuous: bool,
    pub rho: f64,
    pub consensus_term: f64,
    pub decay_term: f64,
    pub total: f64,
    pub gamma: f64,
    /// `1 − vᵀΩv / Tr Ω`.
    pub expected_error: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu1: f64,
    pub mu2: f64,
    /// Directly computed `‖Ξ − X Xᵀ‖₂`.
    pub measured_consensus_error: f64,
    pub assumptions: AssumptionChecks,
}

/// Assemble the high-probability bound on `sin²(v, q̃)` for the principal
/// eigenvector.
pub fn convergence_bound(
    data: &PartitionedDataset,
    op: &NetworkOperator,
    top: &Topology,
    cfg: &RunConfig,
    gamma: f64,
) -> Result<BoundReport> {
    cfg.validate()?;
    let x = data.stack();
    let (lambda, vectors) = linalg::sym_eigen_desc(&(&x * x.transpose()));
    let (lambda1, lambda2) = (lambda[0], lambda.get(1).copied().unwrap_or(0.0));
    let distinct_spectrum = lambda1 - lambda2 > 1e-12 * lambda1.abs().max(1.0);
    if !distinct_spectrum {
        return Err(Error::Assumption(format!(
            "top eigenvalues of X Xᵀ coincide: {lambda1} and {lambda2}"
        )));
    }
    let (mu1, mu2) = (op.mu[0], op.mu.get(1).copied().unwrap_or(0.0));
    let assumptions = AssumptionChecks {
        distinct_spectrum,
        mixing_matrix: validate_mixing_matrix(top.w()).is_valid(),
        consensus_error: op.consensus_gap <= lambda1 - lambda2,
    };
    if !assumptions.consensus_error {
        warn!(
            "consensus error {} exceeds the eigengap {}; the bound may not hold",
            op.consensus_gap,
            lambda1 - lambda2
        );
    }
    let omega = build_omega(op, cfg);
    let v = vectors.column(0).into_owned();
    let trace = omega.omega.trace();
    let expected_error = 1.0 - v.dot(&(&omega.omega * &v)) / trace;
    let (delta_hw, theta, hw_vacuous) = match hanson_wright_delta(&omega.omega, &v, gamma) {
        Ok(hw) => (hw.delta, hw.theta, false),
        Err(Error::NoConvergence(_)) => (1.0, 1.0, true),
        Err(e) => return Err(e),
    };
    let rho = if mu2 > 0.0 { rho(cfg, mu1, mu2)? } else { 1.0 };
    let n_i = data.max_block_size() as f64;
    let m = data.m() as f64;
    let consensus_term = n_i * m * top.lambda2().powi(top.rounds() as i32) / (lambda1 - lambda2);
    let decay_term = (data.n() as f64 - 1.0) * rho * (mu2.max(0.0) / mu1).powi(2 * cfg.iterations as i32);
    Ok(BoundReport {
        theta,
        delta_hw,
        hw_vacuous,
        rho,
        consensus_term,
        decay_term,
        total: delta_hw + 2.0 * (consensus_term + decay_term),
        gamma,
        expected_error,
        lambda1,
        lambda2,
        mu1,
        mu2,
        measured_consensus_error: op.consensus_gap,
        assumptions,
    })
}

/// Parameters from the admissible region of the convergence analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuggestedParameters {
    pub alpha: f64,
    pub sigma_q: f64,
    pub sigma_p: NoiseSchedule,
}

/// `α = 2/(μ₁ + μ₂)`, `σ_q = 1/√n`, `σ_p(t) = η (μ₂/μ₁)^t`.
pub fn suggest_parameters(mu1: f64, mu2: f64, n: usize, eta: f64) -> Result<SuggestedParameters> {
    if !(mu1 > 0.0 && mu1 >= mu2) || n == 0 {
        return Err(Error::Assumption(format!(
            "need μ₁ > 0, μ₁ ≥ μ₂ and n ≥ 1, got μ₁={mu1}, μ₂={mu2}, n={n}"
        )));
    }
    let sigma_q = 1.0 / (n as f64).sqrt();
    if mu2 <= 0.0 {
        warn!("μ₂ = {mu2} leaves the step interval unbounded; using α = 1.001/μ₁");
        return Ok(SuggestedParameters {
            alpha: (1.0 + 1e-3) / mu1,
            sigma_q,
            sigma_p: NoiseSchedule::Constant { value: 0.0 },
        });
    }
    Ok(SuggestedParameters {
        alpha: 2.0 / (mu1 + mu2),
        sigma_q,
        sigma_p: NoiseSchedule::Geometric {
            scale: eta,
            ratio: mu2 / mu1,
        },
    })
}
