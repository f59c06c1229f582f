//! MNIST ingestion, feature files and the end-to-end pipeline.

pub mod features;
pub mod idx;
pub mod pipeline;

pub use features::FeatureTable;
pub use idx::{load_idx, IdxDataset};
pub use pipeline::{run_pipeline, PipelineConfig, Report, Stage};
