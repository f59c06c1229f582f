//! Recurrent clustering and DeSTIN hierarchies.
//!
//! - [`node`]: the recurrent winner-take-all clustering node
//! - [`hierarchy`]: quad-tree lattices of nodes, scan plans and feature extraction
//! - [`seqbench`]: binary sequence-detection benchmark for a single node
//! - [`classifier`]: feed-forward networks and negative-correlation ensembles
//! - [`mnist`]: IDX loading, feature files and the end-to-end pipeline
//! - [`config`]: declarative run configuration shared by the CLI and bindings

pub mod classifier;
pub mod config;
pub mod error;
pub mod hierarchy;
pub mod mnist;
pub mod node;
pub mod seed;
pub mod seqbench;
pub mod snapshot;

pub use error::{Error, Result};
pub use hierarchy::{FeatureVector, Hierarchy, LayerSpec, ScanOrder, ScanPlan};
pub use node::{BeliefState, Centroid, MeanUpdate, Node, NodeConfig, VarianceUpdate};

/// Index of the largest value, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
