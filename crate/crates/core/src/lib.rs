//! Per-class data-quantity optimization.
//!
//! Each class gets a sampling factor. A run repeatedly samples `f_c * D_c`
//! examples per class, trains, reads back a per-class, per-epoch objective and
//! moves each factor toward the level that brings every class to the
//! cross-class mean. Classes that lag receive more data and classes that lead
//! receive less.

pub mod config;
pub mod manifest;
pub mod optimizer;
pub mod orchestrator;
pub mod report;
pub mod sampler;
pub mod scenarios;
pub mod trainers;

pub use config::RunConfig;
pub use orchestrator::{resume, run, RunHistory, RunStatus};
