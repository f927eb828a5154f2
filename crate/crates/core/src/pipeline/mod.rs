//! Configuration, staged execution with manifests, and the report.

pub mod config;
pub mod manifest;
pub mod report;
pub mod stages;
pub mod study;

pub use config::RunConfig;
pub use manifest::{Manifest, RunLock};
pub use stages::{run_all, run_stage, Stage, StageOutcome, StageStatus};
