//! File formats, metrics, rendering, training-batch export and job files.

pub mod batch;
pub mod formats;
pub mod job;
pub mod metrics;
pub mod render;

pub use batch::{advance_dataset, export_training_batch, BatchSample, ExportOptions, TrainingBatch};
pub use job::{JobConfig, Method};
pub use metrics::{compute_metrics, trajectory_metrics, Metrics};
pub use render::render;
