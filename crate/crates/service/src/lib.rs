//! Live PMU monitoring service: runs the detection pipeline over a replayed
//! or synthetic stream, persists events to checksummed append-only logs,
//! and serves the operator API.
//!
//! - [`config`]: pipeline configuration from TOML with environment overrides.
//! - [`persist`]: the checksummed newline-delimited log format.
//! - [`store`]: events, operator labels, and the threshold journal.
//! - [`hub`]: broadcast of score and event records to stream subscribers.
//! - [`pipeline`]: the single-writer processing thread and its control channel.
//! - [`api`]: HTTP routes.

pub mod api;
pub mod config;
mod error;
pub mod hub;
pub mod persist;
pub mod pipeline;
pub mod store;

pub use config::PipelineConfig;
pub use error::{Result, ServiceError};
pub use pipeline::{Pipeline, RunState, Status};
