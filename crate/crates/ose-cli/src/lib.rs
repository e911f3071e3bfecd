//! Library half of the `ose` binary: run configurations, dataset files,
//! synthetic data generation, report envelopes, and the subcommand
//! implementations the thin `main` dispatches to.

pub mod commands;
pub mod config;
pub mod data;
pub mod report;
