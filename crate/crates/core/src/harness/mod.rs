//! Synthetic data, evaluation, baseline, file formats, configuration and CLI.

pub mod cli;
pub mod config;
pub mod io;
pub mod metrics;
pub mod peaks;
pub mod pipeline;
pub mod synthetic;
