//! Batch runner for the shrinking experiments: one TOML config per invocation.

pub mod commands;
pub mod config;
pub mod report;
