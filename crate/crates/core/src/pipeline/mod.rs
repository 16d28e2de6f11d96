//! End-to-end runs: synthetic data, pretraining, embedding export,
//! downstream evaluation, t-SNE dumps and reports.

pub mod config;
pub mod manifest;
pub mod report;
pub mod run;
pub mod transfer;

pub use config::RunConfig;
pub use manifest::RunManifest;
pub use run::{run, Command};
