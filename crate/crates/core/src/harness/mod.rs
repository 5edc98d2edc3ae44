//! Configs, presets, metrics, file formats and the scenario runner.

pub mod config;
pub mod export;
pub mod metrics;
pub mod presets;
pub mod runner;
