//! The multi-agent D-DP-PM simulator, a centralized power-method oracle and
//! the sine error metric.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PartitionedDataset};
use crate::error::{Error, Result};
use crate::network::{consensus_apply, Topology};
use crate::rng::{self, Purpose};

/// Iterates whose norm falls below this cannot be normalized.
pub const MIN_NORM: f64 = 1e-300;

/// Per-iteration noise standard deviation `σ_p(t)`, `t = 1..T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSchedule {
    Constant {
        value: f64,
    },
    /// `σ_p(t) = scale · ratio^t`.
    Geometric {
        scale: f64,
        ratio: f64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

impl NoiseSchedule {
    pub fn zero() -> Self {
        Self::Constant { value: 0.0 }
    }

    /// `σ_p(t)` for `t >= 1`. Explicit schedules repeat their last entry.
    pub fn at(&self, t: usize) -> f64 {
        debug_assert!(t >= 1);
        match self {
            Self::Constant { value } => *value,
            Self::Geometric { scale, ratio } => scale * ratio.powi(t as i32),
            Self::Explicit { values } => values.get(t - 1).or(values.last()).copied().unwrap_or(0.0),
        }
    }

    /// `[σ_p(1), …, σ_p(T)]`.
    pub fn values(&self, iterations: usize) -> Vec<f64> {
        (1..=iterations).map(|t| self.at(t)).collect()
    }

    /// Multiply every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            Self::Constant { value } => Self::Constant { value: value * factor },
            Self::Geometric { scale, ratio } => Self::Geometric {
                scale: scale * factor,
                ratio: *ratio,
            },
            Self::Explicit { values } => Self::Explicit {
                values: values.iter().map(|v| v * factor).collect(),
            },
        }
    }

    fn validate(&self, iterations: usize) -> Result<()> {
        if let Self::Explicit { values } = self {
            if values.len() < iterations {
                return Err(Error::Config(format!(
                    "noise schedule has {} entries for {iterations} iterations",
                    values.len()
                )));
            }
        }
        match self.values(iterations).iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            Some(bad) => Err(Error::Config(format!(
                "noise level {bad} is not a finite non-negative number"
            ))),
            None => Ok(()),
        }
    }
}

/// Algorithm knobs for one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Power iterations per eigenvector (`T`).
    pub iterations: usize,
    /// Number of eigenvectors (`r`).
    pub rank: usize,
    /// Fixed rescaling factor `α` replacing per-step normalization.
    pub alpha: f64,
    /// Standard deviation of the initial iterate.
    pub sigma_q: f64,
    pub sigma_p: NoiseSchedule,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank < 1 {
            return Err(Error::Config("rank must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.sigma_q > 0.0 && self.sigma_q.is_finite()) {
            return Err(Error::Config(format!("sigma_q must be positive, got {}", self.sigma_q)));
        }
        if self.rank > 1 && self.iterations == 0 {
            return Err(Error::Config("deflation needs at least one iteration".into()));
        }
        self.sigma_p.validate(self.iterations)
    }

    pub fn sigma_p_values(&self) -> Vec<f64> {
        self.sigma_p.values(self.iterations)
    }
}

/// Realized randomness of one rank round, in global row order.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub q0: DVector<f64>,
    /// `p^(t)` for `t = 1..T`.
    pub p: Vec<DVector<f64>>,
}

/// Draw `q^(0)` and `p^(1..T)` for rank round `round` (0-based). Every agent
/// samples from its own substreams.
pub fn draw_noise(data: &PartitionedDataset, cfg: &RunConfig, round: usize) -> NoiseDraw {
    let sizes = data.sizes();
    let q0: Vec<DVector<f64>> = sizes
        .iter()
        .enumerate()
        .map(|(i, &ni)| {
            let mut g = rng::substream(cfg.seed, Purpose::InitialIterate, round as u64, i as u64, 0);
            DVector::from_vec(rng::gaussian_vec(&mut g, ni, cfg.sigma_q))
        })
        .collect();
    let p = (1..=cfg.iterations)
        .map(|t| {
            let sigma = cfg.sigma_p.at(t);
            let segments: Vec<DVector<f64>> = sizes
                .iter()
                .enumerate()
                .map(|(i, &ni)| {
                    let mut g = rng::substream(cfg.seed, Purpose::IterationNoise, round as u64, i as u64, t as u64);
                    DVector::from_vec(rng::gaussian_vec(&mut g, ni, sigma))
                })
                .collect();
            data.scatter(&segments)
        })
        .collect();
    NoiseDraw {
        q0: data.scatter(&q0),
        p,
    }
}

/// Private state of one agent.
#[derive(Debug, Clone)]
struct AgentState {
    q: DVector<f64>,
    z: DVector<f64>,
    block: DMatrix<f64>,
}

/// Everything shared on the network during one rank round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    /// `z_i^(t)` indexed `[t-1][i]`.
    pub z: Vec<Vec<DVector<f64>>>,
    /// `z_i^(t+1/2)` indexed `[t-1][i]`.
    pub z_half: Vec<Vec<DVector<f64>>>,
    /// Final unnormalized iterate `q̃^(T)`, global order.
    pub q_tilde: DVector<f64>,
    /// `‖q̃^(T)‖`.
    pub norm: f64,
    /// `‖q^(t)‖` for `t = 0..T`.
    pub iterate_norms: Vec<f64>,
    /// Frobenius distance between the engine's deflated data and the exact
    /// projection `(I − q qᵀ) X` with this round's estimate; `None` for the
    /// last round.
    pub deflation_residual: Option<f64>,
}

impl RoundTrace {
    /// Stacked release `[z_1^(1) … z_m^(1) … z_m^(T) q̃^(T)]`, length `mdT + n`.
    pub fn release_vector(&self) -> DVector<f64> {
        let values: Vec<f64> = self
            .z
            .iter()
            .flatten()
            .flat_map(|v| v.iter().copied())
            .chain(self.q_tilde.iter().copied())
            .collect();
        DVector::from_vec(values)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    /// `n × r`, unit-norm columns.
    pub u_hat: DMatrix<f64>,
    pub rounds: Vec<RoundTrace>,
}

impl RunResult {
    pub fn norms(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.norm).collect()
    }
}

/// Run the decentralized private power method.
pub fn run_ddppm(data: &PartitionedDataset, top: &Topology, cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let m = data.m();
    if top.m() != m {
        return Err(Error::Dimension(format!("data has {m} agents, topology {}", top.m())));
    }
    let n = data.n();
    let mut working = data.clone();
    let mut u_hat = DMatrix::zeros(n, cfg.rank);
    let mut rounds: Vec<RoundTrace> = Vec::with_capacity(cfg.rank);

    for l in 0..cfg.rank {
        if l > 0 {
            let prev = rounds.last_mut().expect("previous round");
            let q_prev = u_hat.column(l - 1).into_owned();
            let before = working.stack();
            working = deflate_after(&working, prev, &q_prev, cfg.iterations)?;
            let exact = &before - &q_prev * (q_prev.transpose() * &before);
            prev.deflation_residual = Some((working.stack() - exact).norm());
        }

        let noise = draw_noise(&working, cfg, l);
        let p_segments: Vec<Vec<DVector<f64>>> = noise.p.iter().map(|p| working.gather(p)).collect();
        let mut agents: Vec<AgentState> = working
            .gather(&noise.q0)
            .into_iter()
            .zip(working.blocks())
            .map(|(q, block)| AgentState {
                q,
                z: DVector::zeros(working.d()),
                block: block.clone(),
            })
            .collect();

        let mut trace_z = Vec::with_capacity(cfg.iterations);
        let mut trace_half = Vec::with_capacity(cfg.iterations);
        let mut iterate_norms = vec![noise.q0.norm()];
        for t in 1..=cfg.iterations {
            for agent in agents.iter_mut() {
                agent.z = agent.block.tr_mul(&agent.q);
            }
            let shared: Vec<DVector<f64>> = agents.iter().map(|a| a.z.clone()).collect();
            let mixed = consensus_apply(top, &shared)?;
            for (i, agent) in agents.iter_mut().enumerate() {
                agent.q = &agent.block * &mixed[i] * cfg.alpha + &p_segments[t - 1][i];
            }
            iterate_norms.push(agents.iter().map(|a| a.q.norm_squared()).sum::<f64>().sqrt());
            trace_z.push(shared);
            trace_half.push(mixed);
        }

        // Every agent floods its final segment, then normalizes.
        let segments: Vec<DVector<f64>> = agents.into_iter().map(|a| a.q).collect();
        let q_tilde = working.scatter(&segments);
        let norm = q_tilde.norm();
        if !(norm >= MIN_NORM) {
            return Err(Error::DegenerateNorm { rank: l + 1, norm });
        }
        u_hat.set_column(l, &(&q_tilde / norm));
        rounds.push(RoundTrace {
            z: trace_z,
            z_half: trace_half,
            q_tilde,
            norm,
            iterate_norms,
            deflation_residual: None,
        });
    }
    Ok(RunResult { u_hat, rounds })
}

fn deflate_after(
    working: &PartitionedDataset,
    prev: &RoundTrace,
    q_prev: &DVector<f64>,
    iterations: usize,
) -> Result<PartitionedDataset> {
    let z_final = prev.z_half.last().expect("at least one iteration");
    // ‖q^(T-1)‖ pairs with z^(T+1/2) = Xᵀ q^(T-1).
    let scale = prev.iterate_norms[iterations - 1];
    deflate(working, q_prev, z_final, scale)
}

/// Data each rank round of `result` operated on: the input for round 0, then
/// the successively deflated blocks.
pub fn round_datasets(
    data: &PartitionedDataset,
    result: &RunResult,
    iterations: usize,
) -> Result<Vec<PartitionedDataset>> {
    let mut out = vec![data.clone()];
    for l in 1..result.rounds.len() {
        let q_prev = result.u_hat.column(l - 1).into_owned();
        let next = deflate_after(&out[l - 1], &result.rounds[l - 1], &q_prev, iterations)?;
        out.push(next);
    }
    Ok(out)
}

/// Remove the previous direction from every agent's block:
/// `X_i ← X_i − q_{i} (z_i / scale)ᵀ`.
pub fn deflate(
    data: &PartitionedDataset,
    q_prev: &DVector<f64>,
    z_final: &[DVector<f64>],
    scale: f64,
) -> Result<PartitionedDataset> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Config(format!("deflation scale must be positive, got {scale}")));
    }
    if q_prev.len() != data.n() || z_final.len() != data.m() {
        return Err(Error::Dimension("deflation inputs do not match the partition".into()));
    }
    if z_final.iter().any(|z| z.len() != data.d()) {
        return Err(Error::Dimension(
            "deflation projections must have the data dimension".into(),
        ));
    }
    let segments = data.gather(q_prev);
    let blocks = data
        .blocks()
        .iter()
        .zip(segments.iter().zip(z_final))
        .map(|(block, (q, z))| block - q * (z / scale).transpose())
        .collect();
    data.with_blocks(blocks)
}

/// Normalized power iteration on a symmetric matrix from a given start.
pub fn power_iterate(c: &DMatrix<f64>, q0: &DVector<f64>, iterations: usize) -> Result<DVector<f64>> {
    let mut q = q0.clone();
    let norm = q.norm();
    if !(norm >= MIN_NORM) {
        return Err(Error::ZeroVector("power iteration start"));
    }
    q /= norm;
    for _ in 0..iterations {
        let next = c * &q;
        let norm = next.norm();
        if !(norm >= MIN_NORM) {
            return Err(Error::ZeroVector("power iteration iterate"));
        }
        q = next / norm;
    }
    Ok(q)
}

/// Centralized power method with Hotelling deflation on `X Xᵀ`.
pub fn centralized_power_method(x: &Dataset, iterations: usize, rank: usize, seed: u64) -> Result<DMatrix<f64>> {
    let starts: Vec<DVector<f64>> = (0..rank)
        .map(|l| {
            let mut g = rng::substream(seed, Purpose::InitialIterate, l as u64, u64::MAX, 0);
            DVector::from_vec(rng::gaussian_vec(&mut g, x.n(), 1.0))
        })
        .collect();
    centralized_from(&x.gram(), &starts, iterations)
}

/// Centralized power method on a Gram matrix from explicit starting vectors,
/// one per eigenvector.
pub fn centralized_from(gram: &DMatrix<f64>, starts: &[DVector<f64>], iterations: usize) -> Result<DMatrix<f64>> {
    if iterations < 1 {
        return Err(Error::Config("centralized power method needs T >= 1".into()));
    }
    let n = gram.nrows();
    let mut c = gram.clone();
    let mut out = DMatrix::zeros(n, starts.len());
    for (l, start) in starts.iter().enumerate() {
        let q = power_iterate(&c, start, iterations)?;
        let lambda = q.dot(&(&c * &q));
        c -= &q * q.transpose() * lambda;
        out.set_column(l, &q);
    }
    Ok(out)
}

/// `sin(v, q) = ‖(I − v vᵀ) q‖ / ‖q‖`.
pub fn error_metric(v: &DVector<f64>, q: &DVector<f64>) -> Result<f64> {
    if v.len() != q.len() {
        return Err(Error::Dimension(format!(
            "reference has {} entries, estimate {}",
            v.len(),
            q.len()
        )));
    }
    if (v.norm() - 1.0).abs() > 1e-10 {
        return Err(Error::Config(format!(
            "reference vector must be unit norm, got {}",
            v.norm()
        )));
    }
    let qn = q.norm();
    if !(qn > 0.0) {
        return Err(Error::ZeroVector("estimate"));
    }
    let residual = q - v * v.dot(q);
    Ok((residual.norm() / qn).clamp(0.0, 1.0))
}
