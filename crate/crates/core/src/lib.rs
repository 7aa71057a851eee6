//! Streaming anomaly detection for single-PMU telemetry.
//!
//! The crate models a 4-channel PMU stream (voltage magnitude, current
//! magnitude, sine of the voltage/current angle difference, frequency) with a
//! vector autoregressive model that is refit on a rolling window, scores each
//! new point by the Mahalanobis distance of its one-step residual, and
//! classifies detected events with a CART decision tree over features of the
//! post-detection score window.
//!
//! Module map:
//!
//! - [`ingest`]: CSV parsing, channel derivation, coarse-graining.
//! - [`synth`]: synthetic ambient streams and anomaly injection.
//! - [`preprocess`]: linear de-trending and normalization.
//! - [`var`]: VAR(p) estimation, prediction, simulation.
//! - [`hyperlab`]: retraining-error, drift and lag-depth experiments.
//! - [`detector`]: residual scoring, the detection state machine, the
//!   rolling live detector, the min-max baseline, co-occurrence counts.
//! - [`features`]: the 18-feature vector of an event's score window.
//! - [`tree`]: CART classifier and stratified cross-validation.
//! - [`corpus`]: labeled synthetic event corpora for classifier training.

pub mod corpus;
pub mod detector;
mod error;
pub mod features;
pub mod hyperlab;
pub mod ingest;
mod linalg;
pub mod preprocess;
pub mod synth;
pub mod tree;
pub mod var;

pub use detector::{
    AnomalyEvent, DetectorConfig, DetectorState, LiveConfig, LiveDetector, LiveOutput, Mode,
    ResidualScore, TriggerSet,
};
pub use error::{Error, Result};
pub use features::FeatureVector;
pub use ingest::{ChannelVector, PmuSample, CHANNELS, CHANNEL_COUNT};
pub use preprocess::StandardizationParams;
pub use synth::{AnomalyClass, SyntheticScenario};
pub use tree::{DecisionTree, TrainConfig};
pub use var::VarModel;
