//! Decentralized differentially private power method.
//!
//! The crate simulates a network of agents that jointly estimate the leading
//! eigenvectors of `X Xᵀ` when the rows of `X` are split among them, audits
//! the privacy of everything they share through the exact Gaussian law of the
//! release, and evaluates the high-probability convergence bound.
//!
//! Modules map onto the pipeline:
//!
//! - [`data`]: CSV ingestion, unit-ball scaling, row partitioning.
//! - [`network`]: mixing matrices, consensus, the network operator Ξ.
//! - [`engine`]: the multi-agent simulator and a centralized oracle.
//! - [`privacy`]: release model, observer conditionals, Rényi divergence and δ.
//! - [`analysis`]: Ω, ρ, the Hanson–Wright term and the full error bound.
//! - [`baseline`]: the naive local-DP comparator.
//! - [`experiment`]: sweeps, audits and figure data used by the CLI.

// `!(x > 0.0)` is how NaN gets rejected here.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod baseline;
pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod network;
pub mod privacy;
pub mod rng;

pub use error::{Error, Result};
