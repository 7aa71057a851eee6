//! Residual scoring and event detection.
//!
//! Scores are in "standard deviations" of the model's noise distribution:
//! the multivariate score is the Mahalanobis distance of the one-step
//! residual, and each channel's conditional score measures the residual of
//! that channel against its Gaussian conditional given the other channels.

mod live;
mod minmax;
mod scoring;
mod state;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::ingest::{ChannelVector, CHANNELS, CHANNEL_COUNT};
use crate::synth::AnomalyClass;

pub use live::{LiveConfig, LiveDetector, LiveOutput, LiveStats};
pub use minmax::{minmax_detect, minmax_scan, DEFAULT_MINMAX_K, DEFAULT_MINMAX_WINDOW_S};
pub use scoring::{conditional_scores, mahalanobis_score, Scorer};
pub use state::{
    BufferUpdate, DetectorConfig, DetectorState, EventSignal, Mode, ReleasedPoint, StepOutcome,
};

/// Scores of one residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualScore {
    pub timestamp: DateTime<Utc>,
    /// `prediction - observed`, standardized units.
    pub residual: [f64; CHANNEL_COUNT],
    pub mahalanobis: f64,
    pub conditional: [f64; CHANNEL_COUNT],
}

impl ResidualScore {
    /// Largest of the multivariate and conditional scores.
    pub fn max_score(&self) -> f64 {
        self.conditional
            .iter()
            .fold(self.mahalanobis, |m, &c| m.max(c))
    }
}

/// Flat score-stream record: `timestamp, mahalanobis, cond_V, cond_I, cond_sin, cond_F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub timestamp: DateTime<Utc>,
    pub mahalanobis: f64,
    #[serde(rename = "cond_V")]
    pub cond_v: f64,
    #[serde(rename = "cond_I")]
    pub cond_i: f64,
    pub cond_sin: f64,
    #[serde(rename = "cond_F")]
    pub cond_f: f64,
}

impl From<&ResidualScore> for ScoreRecord {
    fn from(s: &ResidualScore) -> Self {
        Self {
            timestamp: s.timestamp,
            mahalanobis: s.mahalanobis,
            cond_v: s.conditional[0],
            cond_i: s.conditional[1],
            cond_sin: s.conditional[2],
            cond_f: s.conditional[3],
        }
    }
}

impl ScoreRecord {
    pub const CSV_HEADER: &'static str = "timestamp,mahalanobis,cond_V,cond_I,cond_sin,cond_F";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.timestamp
                .to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
            self.mahalanobis,
            self.cond_v,
            self.cond_i,
            self.cond_sin,
            self.cond_f
        )
    }
}

/// Names of the trigger-set members, multivariate first.
pub const TRIGGER_NAMES: [&str; 1 + CHANNEL_COUNT] =
    ["multivariate", CHANNELS[0], CHANNELS[1], CHANNELS[2], CHANNELS[3]];

/// Subset of `{multivariate, V, I, sin, F}`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TriggerSet(u8);

impl TriggerSet {
    pub const MULTIVARIATE: TriggerSet = TriggerSet(1);

    pub fn channel(k: usize) -> Self {
        assert!(k < CHANNEL_COUNT, "channel index {k} out of range");
        TriggerSet(1 << (k + 1))
    }

    /// Members whose score strictly exceeds `threshold`.
    pub fn from_score(score: &ResidualScore, threshold: f64) -> Self {
        let mut set = TriggerSet::default();
        if score.mahalanobis > threshold {
            set = set.union(Self::MULTIVARIATE);
        }
        for (k, &c) in score.conditional.iter().enumerate() {
            if c > threshold {
                set = set.union(Self::channel(k));
            }
        }
        set
    }

    pub fn union(self, other: Self) -> Self {
        TriggerSet(self.0 | other.0)
    }

    pub fn contains(self, other: Self) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn has_multivariate(self) -> bool {
        self.contains(Self::MULTIVARIATE)
    }

    pub fn channels(self) -> impl Iterator<Item = usize> {
        (0..CHANNEL_COUNT).filter(move |k| self.contains(Self::channel(*k)))
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn names(self) -> Vec<&'static str> {
        (0..TRIGGER_NAMES.len())
            .filter(|i| self.0 & (1 << i) != 0)
            .map(|i| TRIGGER_NAMES[i])
            .collect()
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        names.iter().try_fold(TriggerSet::default(), |set, n| {
            let i = TRIGGER_NAMES
                .iter()
                .position(|t| *t == n.as_ref())
                .ok_or_else(|| Error::Validation(format!("unknown trigger `{}`", n.as_ref())))?;
            Ok(TriggerSet(set.0 | (1 << i)))
        })
    }
}

impl fmt::Display for TriggerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_empty() {
            return f.write_str("{}");
        }
        f.write_str(&self.names().join("+"))
    }
}

impl Serialize for TriggerSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.names().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TriggerSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let names = Vec::<String>::deserialize(d)?;
        TriggerSet::from_names(&names).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Model,
    Operator,
}

/// A detected event with the data needed to featurize and review it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyEvent {
    pub event_id: u64,
    pub start_timestamp: DateTime<Utc>,
    /// Timestamp of the last point scored against the frozen forecast.
    pub end_timestamp: Option<DateTime<Utc>>,
    /// Threshold in force when the event opened.
    pub threshold: f64,
    pub trigger_set: TriggerSet,
    /// Scores over the feature window, starting at the trigger point.
    pub score_window: Vec<ResidualScore>,
    /// Physical-unit samples matching `score_window`.
    pub raw_window: Vec<ChannelVector>,
    /// Standardized samples matching `score_window`.
    pub standardized_window: Vec<[f64; CHANNEL_COUNT]>,
    pub class_label: Option<AnomalyClass>,
    pub label_source: Option<LabelSource>,
}

impl AnomalyEvent {
    /// Score sequence used for features: the multivariate score when it
    /// triggered, otherwise the conditional score of the strongest
    /// triggering channel.
    pub fn feature_scores(&self) -> Vec<f64> {
        if self.trigger_set.has_multivariate() || self.score_window.is_empty() {
            return self.score_window.iter().map(|s| s.mahalanobis).collect();
        }
        let first = &self.score_window[0];
        let k = self
            .trigger_set
            .channels()
            .max_by(|&a, &b| first.conditional[a].total_cmp(&first.conditional[b]))
            .unwrap_or(0);
        self.score_window.iter().map(|s| s.conditional[k]).collect()
    }
}

/// Number of events per distinct trigger set.
pub fn cooccurrence_counts<'a, I>(events: I) -> BTreeMap<TriggerSet, usize>
where
    I: IntoIterator<Item = &'a AnomalyEvent>,
{
    let mut counts = BTreeMap::new();
    for e in events {
        *counts.entry(e.trigger_set).or_insert(0) += 1;
    }
    counts
}
