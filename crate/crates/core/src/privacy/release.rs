//! Exact linear release model: every value shared during one rank round is
//! `y = M q⁽⁰⁾ + L P`, with `P` the stacked per-iteration noise.

use nalgebra::{DMatrix, DVector};

use super::gaussian::GaussianDist;
use crate::data::PartitionedDataset;
use crate::engine::{NoiseDraw, RunConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::NetworkOperator;

/// Randomness held by one agent: its initial segment and per-iteration noise
/// segments, each of length `n_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnRealization {
    pub q0: DVector<f64>,
    /// `p_i^(t)` for `t = 1..T`.
    pub p: Vec<DVector<f64>>,
}

impl OwnRealization {
    /// `q_i = σ_q · 1/√n_i`, `P_i = 0`.
    pub fn canonical(n_i: usize, iterations: usize, sigma_q: f64) -> Self {
        Self {
            q0: DVector::from_element(n_i, sigma_q / (n_i as f64).sqrt()),
            p: vec![DVector::zeros(n_i); iterations],
        }
    }

    /// Agent `agent`'s segments of a global draw.
    pub fn from_draw(data: &PartitionedDataset, draw: &NoiseDraw, agent: usize) -> Self {
        let pick = |v: &DVector<f64>| linalg::select_entries(v, data.offsets(agent));
        Self {
            q0: pick(&draw.q0),
            p: draw.p.iter().map(pick).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReleaseModel {
    pub m: usize,
    pub d: usize,
    pub iterations: usize,
    pub n: usize,
    pub offsets: Vec<Vec<usize>>,
    pub sigma_q: f64,
    pub sigma_p: Vec<f64>,
    /// `(mdT + n) × n`.
    pub m_mat: DMatrix<f64>,
    /// `(mdT + n) × nT`.
    pub l_mat: DMatrix<f64>,
}

/// Assemble `M` and `L` for a rank-1 round from the network operator.
pub fn build_release_model(data: &PartitionedDataset, op: &NetworkOperator, cfg: &RunConfig) -> Result<ReleaseModel> {
    cfg.validate()?;
    let (m, d, n, t_max) = (data.m(), data.d(), data.n(), cfg.iterations);
    if op.n() != n {
        return Err(Error::Dimension(format!("operator has size {}, data {n} rows", op.n())));
    }
    let a = &op.xi * cfg.alpha;
    let mut powers = Vec::with_capacity(t_max + 1);
    powers.push(DMatrix::identity(n, n));
    for k in 1..=t_max {
        let next = &a * &powers[k - 1];
        powers.push(next);
    }
    // Dᵀ: md × n, block row i holds X_iᵀ on agent i's columns.
    let mut dt = DMatrix::zeros(m * d, n);
    for i in 0..m {
        for (r, &g) in data.offsets(i).iter().enumerate() {
            for c in 0..d {
                dt[(i * d + c, g)] = data.block(i)[(r, c)];
            }
        }
    }
    let md = m * d;
    let rows = md * t_max + n;
    let mut m_mat = DMatrix::zeros(rows, n);
    let mut l_mat = DMatrix::zeros(rows, n * t_max);
    let dt_powers: Vec<DMatrix<f64>> = powers.iter().take(t_max).map(|p| &dt * p).collect();
    for t in 1..=t_max {
        let r0 = (t - 1) * md;
        m_mat.view_mut((r0, 0), (md, n)).copy_from(&dt_powers[t - 1]);
        for k in 1..t {
            l_mat
                .view_mut((r0, (k - 1) * n), (md, n))
                .copy_from(&dt_powers[t - 1 - k]);
        }
    }
    let r0 = md * t_max;
    m_mat.view_mut((r0, 0), (n, n)).copy_from(&powers[t_max]);
    for k in 1..=t_max {
        l_mat.view_mut((r0, (k - 1) * n), (n, n)).copy_from(&powers[t_max - k]);
    }
    Ok(ReleaseModel {
        m,
        d,
        iterations: t_max,
        n,
        offsets: data.all_offsets().to_vec(),
        sigma_q: cfg.sigma_q,
        sigma_p: cfg.sigma_p_values(),
        m_mat,
        l_mat,
    })
}

impl ReleaseModel {
    pub fn len(&self) -> usize {
        self.m_mat.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `M q⁽⁰⁾ + L P` for a realized draw.
    pub fn release(&self, draw: &NoiseDraw) -> DVector<f64> {
        let mut p = DVector::zeros(self.n * self.iterations);
        for (k, pk) in draw.p.iter().enumerate() {
            p.rows_mut(k * self.n, self.n).copy_from(pk);
        }
        &self.m_mat * &draw.q0 + &self.l_mat * p
    }

    /// `σ_q² M Mᵀ + Σ_k σ_p(k)² L_k L_kᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mut cov = &self.m_mat * self.m_mat.transpose() * self.sigma_q.powi(2);
        for (k, s) in self.sigma_p.iter().enumerate() {
            if *s > 0.0 {
                let lk = self.l_mat.columns(k * self.n, self.n);
                cov += lk * lk.transpose() * s.powi(2);
            }
        }
        linalg::symmetrize(&cov)
    }

    /// Row indices of `S_i`: agent `i`'s `z` blocks, then its final entries.
    pub fn selection_rows(&self, agent: usize) -> Vec<usize> {
        let md = self.m * self.d;
        let mut rows: Vec<usize> = (0..self.iterations)
            .flat_map(|t| (0..self.d).map(move |c| t * md + agent * self.d + c))
            .collect();
        rows.extend(self.offsets[agent].iter().map(|g| md * self.iterations + g));
        rows
    }

    /// `S_i` as a 0/1 matrix with `dT + n_i` rows.
    pub fn selection_matrix(&self, agent: usize) -> DMatrix<f64> {
        let rows = self.selection_rows(agent);
        let mut s = DMatrix::zeros(rows.len(), self.len());
        for (r, &c) in rows.iter().enumerate() {
            s[(r, c)] = 1.0;
        }
        s
    }

    fn check_agent(&self, agent: usize) -> Result<()> {
        if agent >= self.m {
            return Err(Error::Dimension(format!(
                "agent {agent} out of range for {} agents",
                self.m
            )));
        }
        Ok(())
    }

    /// Column split of the observer's rows of `M` into own (`u`) and other
    /// (`-u`) columns.
    pub fn split_m(&self, agent: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_agent(agent)?;
        let mi = linalg::select_rows(&self.m_mat, &self.selection_rows(agent));
        let (own, other) = self.column_sets(agent, 1);
        Ok((linalg::select_columns(&mi, &own), linalg::select_columns(&mi, &other)))
    }

    /// Column split of the observer's rows of `L`.
    pub fn split_l(&self, agent: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.check_agent(agent)?;
        let li = linalg::select_rows(&self.l_mat, &self.selection_rows(agent));
        let (own, other) = self.column_sets(agent, self.iterations);
        Ok((linalg::select_columns(&li, &own), linalg::select_columns(&li, &other)))
    }

    fn column_sets(&self, agent: usize, blocks: usize) -> (Vec<usize>, Vec<usize>) {
        let mine = &self.offsets[agent];
        let mut own = Vec::new();
        let mut other = Vec::new();
        for k in 0..blocks {
            for g in 0..self.n {
                if mine.contains(&g) {
                    own.push(k * self.n + g);
                } else {
                    other.push(k * self.n + g);
                }
            }
        }
        (own, other)
    }
}

/// Law of agent `agent`'s view given its own randomness `own`.
pub fn observer_conditional(model: &ReleaseModel, agent: usize, own: &OwnRealization) -> Result<GaussianDist> {
    let (mu, m_other) = model.split_m(agent)?;
    let (lu, l_other) = model.split_l(agent)?;
    let n_i = model.offsets[agent].len();
    if own.q0.len() != n_i || own.p.len() != model.iterations || own.p.iter().any(|p| p.len() != n_i) {
        return Err(Error::Dimension(
            "own realization does not match the agent's block".into(),
        ));
    }
    let mut p_own = DVector::zeros(n_i * model.iterations);
    for (k, pk) in own.p.iter().enumerate() {
        p_own.rows_mut(k * n_i, n_i).copy_from(pk);
    }
    let mean = &mu * &own.q0 + &lu * p_own;
    let mut cov = &m_other * m_other.transpose() * model.sigma_q.powi(2);
    let others = model.n - n_i;
    for (k, s) in model.sigma_p.iter().enumerate() {
        if *s > 0.0 && others > 0 {
            let lk = l_other.columns(k * others, others);
            cov += lk * lk.transpose() * s.powi(2);
        }
    }
    GaussianDist::new(mean, linalg::symmetrize(&cov))
}
