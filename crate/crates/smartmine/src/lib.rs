//! A desk-scale metric-learning workbench.
//!
//! The crate trains small normalised embedding networks with a combined
//! triplet + global loss. Training triplets are mined over the entire
//! training set through an occlusion-pruned proximity graph: each anchor's
//! approximate neighbour list is scanned once, negatives are accepted only
//! outside a hyper-spherical exclusion boundary scaled by a global factor
//! kappa, and kappa itself is steered epoch-to-epoch by a least-squares
//! controller that targets a fixed training error.
//!
//! Modules follow the training pipeline:
//!
//! - [`embedding`] — the normalised MLP, exact backpropagation, SGD.
//! - [`losses`] — ratio triplet loss, Gaussian-statistics global loss,
//!   their gradients and the combined objective.
//! - [`ann`] — proximity-graph index: traverse-add build, backtracking
//!   search, per-vertex neighbour lists, brute-force oracle.
//! - [`mining`] — exclusion-boundary triplet selection plus the random,
//!   naive-hardest and minibatch semi-hard baseline miners.
//! - [`controller`] — the adaptive kappa controller.
//! - [`metrics`] — NMI, Recall@K, training/validation error.
//! - [`dataset`] — synthetic data generation and dataset file I/O.
//! - [`trainer`] — epoch orchestration and the mining cost benchmark.
//! - [`sweep`] — kappa / mined-fraction sweep harnesses.
//!
//! The `examples/` directory contains one runnable example per capability;
//! start with `train_synthetic`. A thin `smartmine` binary exposes the same
//! entry points as subcommands for scripted runs.

pub mod ann;
pub mod config;
pub mod controller;
pub mod dataset;
pub mod embedding;
mod error;
pub mod losses;
pub mod metrics;
pub mod mining;
pub mod sweep;
pub mod trainer;

pub use error::{Error, Result};

/// Flat row-major table of equally sized vectors, the shared currency
/// between the index, miners and metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    data: Vec<f64>,
    dim: usize,
    len: usize,
}

impl EmbeddingTable {
    /// Builds a table from per-point rows. All rows must share one width.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(|r| r.len()).unwrap_or(0);
        if dim == 0 && !rows.is_empty() {
            return Err(Error::config("embedding rows must be non-empty"));
        }
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::config(format!(
                    "row {i} has width {} but row 0 has width {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Ok(Self { data, dim, len: rows.len() })
    }

    pub fn from_flat(data: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::config(format!(
                "flat length {} is not a multiple of dim {dim}",
                data.len()
            )));
        }
        let len = data.len() / dim;
        Ok(Self { data, dim, len })
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }
}

/// Squared Euclidean distance between two equally sized vectors.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc
}

/// Splitmix64-style seed derivation so every pipeline phase gets an
/// independent, reproducible stream from one top-level seed.
pub(crate) fn mix_seed(base: u64, salt: u64) -> u64 {
    let mut z = base ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
