//! Experiment harness and file formats around `simpost-core`.

pub mod config;
pub mod error;
pub mod formats;
pub mod pipeline;
