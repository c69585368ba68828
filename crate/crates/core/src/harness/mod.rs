//! Ingestion, evaluation and the end-to-end pipeline.

pub mod config;
pub mod io;
pub mod metrics;
pub mod pipeline;
