//! Counter-based RNG substreams.
//!
//! Every random draw in a run is addressed by a tuple of counters (rank round,
//! agent, purpose, iteration). Each tuple maps to its own ChaCha stream under
//! the run's root seed, so adding agents or iterations never shifts the draws
//! of existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// What a substream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    InitialIterate = 1,
    IterationNoise = 2,
    DataNoise = 3,
    Perturbation = 4,
    Realization = 5,
    Trial = 6,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn stream_id(purpose: Purpose, a: u64, b: u64, c: u64) -> u64 {
    let mut h = splitmix(purpose as u64);
    for word in [a, b, c] {
        h = splitmix(h ^ word);
    }
    h
}

/// RNG for the substream `(purpose, a, b, c)` under `seed`.
pub fn substream(seed: u64, purpose: Purpose, a: u64, b: u64, c: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(purpose, a, b, c));
    rng
}

/// Seed for Monte-Carlo trial `k` derived from a root seed.
pub fn trial_seed(root: u64, k: u64) -> u64 {
    splitmix(root ^ splitmix(stream_id(Purpose::Trial, k, 0, 0)))
}

/// `len` i.i.d. N(0, std²) samples.
pub fn gaussian_vec(rng: &mut ChaCha8Rng, len: usize, std: f64) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}
