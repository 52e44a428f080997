//! Observer view in the `md`-dimensional state space.
//!
//! Given its own randomness, agent `i` sees the sequence
//! `X_iᵀ q_i^(t)`, `t = 1..T`; its own `z_i^(1)` is known and the final
//! segment `q̃_i` is an injective function of `X_iᵀ q̃_i` plus its own noise.
//! The stacked projections `Z^(t) = [X_jᵀ q_j^(t-1)]_j` obey
//! `Z^(t+1) = H Z^(t) + [X_jᵀ p_j^(t)]_j` with
//! `H = α · blkdiag(X_jᵀX_j) · (m W^c ⊗ I_d)`, so the observer law has
//! dimension `dT` and depends on the data only through Gram blocks.

use nalgebra::{DMatrix, DVector};

use super::gaussian::GaussianDist;
use super::release::OwnRealization;
use crate::data::PartitionedDataset;
use crate::engine::RunConfig;
use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone)]
pub struct ObserverModel {
    pub agent: usize,
    pub m: usize,
    pub d: usize,
    pub iterations: usize,
    /// State transition, `md × md`.
    pub h: DMatrix<f64>,
    /// `X_jᵀ X_j` per agent.
    pub grams: Vec<DMatrix<f64>>,
    pub sigma_q: f64,
    pub sigma_p: Vec<f64>,
}

/// Agent's own randomness pushed through its block: `X_iᵀ q_i^(0)` and
/// `X_iᵀ p_i^(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedRealization {
    pub e: Vec<DVector<f64>>,
}

impl ProjectedRealization {
    pub fn new(block: &DMatrix<f64>, own: &OwnRealization) -> Self {
        let mut e = vec![block.tr_mul(&own.q0)];
        e.extend(own.p.iter().map(|p| block.tr_mul(p)));
        Self { e }
    }
}

/// Build the state-space view of `agent` with consensus matrix `wc = W^c`.
pub fn observer_model(
    data: &PartitionedDataset,
    wc: &DMatrix<f64>,
    cfg: &RunConfig,
    agent: usize,
) -> Result<ObserverModel> {
    let (m, d) = (data.m(), data.d());
    if wc.nrows() != m || wc.ncols() != m {
        return Err(Error::Dimension(format!(
            "consensus matrix is {}x{}, data has {m} agents",
            wc.nrows(),
            wc.ncols()
        )));
    }
    if agent >= m {
        return Err(Error::Dimension(format!("agent {agent} out of range for {m} agents")));
    }
    let grams: Vec<DMatrix<f64>> = data.blocks().iter().map(|b| b.tr_mul(b)).collect();
    Ok(ObserverModel {
        agent,
        m,
        d,
        iterations: cfg.iterations,
        h: transition(&grams, wc, cfg.alpha),
        grams,
        sigma_q: cfg.sigma_q,
        sigma_p: cfg.sigma_p_values(),
    })
}

fn transition(grams: &[DMatrix<f64>], wc: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    let m = grams.len();
    let d = grams[0].nrows();
    let mut h = DMatrix::zeros(m * d, m * d);
    for a in 0..m {
        for b in 0..m {
            let w = alpha * m as f64 * wc[(a, b)];
            if w != 0.0 {
                h.view_mut((a * d, b * d), (d, d)).copy_from(&(&grams[a] * w));
            }
        }
    }
    h
}

impl ObserverModel {
    pub fn dim(&self) -> usize {
        self.d * self.iterations
    }

    /// Same view with agent `target`'s Gram block replaced.
    pub fn with_gram(&self, target: usize, gram: DMatrix<f64>, wc: &DMatrix<f64>, alpha: f64) -> Self {
        let mut grams = self.grams.clone();
        grams[target] = gram;
        Self {
            h: transition(&grams, wc, alpha),
            grams,
            ..self.clone()
        }
    }

    /// Covariance of the view from everyone else's randomness.
    pub fn covariance(&self) -> DMatrix<f64> {
        let (d, i, t_max) = (self.d, self.agent, self.iterations);
        let md = self.m * d;
        let mut noise = DMatrix::zeros(md, md);
        for j in (0..self.m).filter(|&j| j != i) {
            noise.view_mut((j * d, j * d), (d, d)).copy_from(&self.grams[j]);
        }
        let mut cov = DMatrix::zeros(d * t_max, d * t_max);
        let mut state = &noise * self.sigma_q.powi(2);
        // View block `s` is Z^(s+2), s = 0..T-1.
        for s in 0..t_max {
            state = &self.h * &state * self.h.transpose() + &noise * self.sigma_p[s].powi(2);
            let mut cross = state.columns(i * d, d).into_owned();
            for t in s..t_max {
                let block = cross.rows(i * d, d).into_owned();
                cov.view_mut((t * d, s * d), (d, d)).copy_from(&block);
                if t != s {
                    cov.view_mut((s * d, t * d), (d, d)).copy_from(&block.transpose());
                }
                if t + 1 < t_max {
                    cross = &self.h * cross;
                }
            }
        }
        linalg::symmetrize(&cov)
    }

    /// Mean of the view given the observer's own projected randomness.
    pub fn mean(&self, own: &ProjectedRealization) -> Result<DVector<f64>> {
        let (d, i, t_max) = (self.d, self.agent, self.iterations);
        if own.e.len() != t_max + 1 || own.e.iter().any(|e| e.len() != d) {
            return Err(Error::Dimension("projected realization does not match the view".into()));
        }
        let mut state = DVector::zeros(self.m * d);
        state.rows_mut(i * d, d).copy_from(&own.e[0]);
        let mut mean = DVector::zeros(d * t_max);
        for t in 0..t_max {
            state = &self.h * state;
            let mut own_block = state.rows_mut(i * d, d);
            own_block += &own.e[t + 1];
            mean.rows_mut(t * d, d).copy_from(&state.rows(i * d, d));
        }
        Ok(mean)
    }

    pub fn law(&self, own: &ProjectedRealization) -> Result<GaussianDist> {
        GaussianDist::new(self.mean(own)?, self.covariance())
    }
}
