//! Local-DP comparator: Gaussian noise on the raw data, then an SVD.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::PartitionedDataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdpConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub seed: u64,
}

impl LdpConfig {
    /// `σ² = 2 ln(1.25/δ) / ε²`.
    pub fn variance(&self) -> Result<f64> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Config(format!(
                "LDP epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.25) {
            return Err(Error::Config(format!(
                "LDP delta must lie in (0, 1.25), got {}",
                self.delta
            )));
        }
        Ok(2.0 * (1.25 / self.delta).ln() / (self.epsilon * self.epsilon))
    }
}

/// Pooled noisy data. Rows generally leave the unit ball, so this is not a
/// [`crate::data::Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyData {
    pub x: DMatrix<f64>,
    pub variance: f64,
}

/// `X̃ = X + G` with i.i.d. `N(0, σ²)` entries; each agent draws its own
/// block's noise.
pub fn ldp_perturb(data: &PartitionedDataset, cfg: &LdpConfig) -> Result<NoisyData> {
    let variance = cfg.variance()?;
    ldp_perturb_with_variance(data, variance, cfg.seed)
}

/// As [`ldp_perturb`] with the variance given directly.
pub fn ldp_perturb_with_variance(data: &PartitionedDataset, variance: f64, seed: u64) -> Result<NoisyData> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(Error::Config(format!(
            "noise variance must be finite and non-negative, got {variance}"
        )));
    }
    let std = variance.sqrt();
    let d = data.d();
    let mut x = data.stack();
    for i in 0..data.m() {
        let mut g = rng::substream(seed, Purpose::DataNoise, i as u64, 0, 0);
        for &row in data.offsets(i) {
            let noise = rng::gaussian_vec(&mut g, d, std);
            for (c, e) in noise.into_iter().enumerate() {
                x[(row, c)] += e;
            }
        }
    }
    Ok(NoisyData { x, variance })
}

/// Top-`rank` left singular vectors of `X̃`, sign-canonicalized.
pub fn ldp_estimate(noisy: &DMatrix<f64>, rank: usize) -> Result<DMatrix<f64>> {
    let limit = noisy.nrows().min(noisy.ncols());
    if rank == 0 || rank > limit {
        return Err(Error::Config(format!("rank must lie in 1..={limit}, got {rank}")));
    }
    let (_, u) = linalg::left_singular(noisy);
    let mut out = u.columns(0, rank).into_owned();
    for mut col in out.column_iter_mut() {
        let mut v = col.clone_owned();
        linalg::canonical_sign(&mut v);
        col.copy_from(&v);
    }
    Ok(out)
}
