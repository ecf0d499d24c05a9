//! Experiment configuration and the end-to-end pipeline.

pub mod config;
pub mod import;
pub mod pipeline;

pub use config::ExperimentConfig;
pub use pipeline::{run_pipeline, Layout, Report};
