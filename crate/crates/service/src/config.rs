use std::path::{Path, PathBuf};

use phasorwatch::{LiveConfig, CHANNEL_COUNT};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

/// Prefix of environment overrides: `PHASORWATCH_` followed by the dotted
/// key upper-cased with `.` replaced by `_`, e.g. `PHASORWATCH_INPUT_SPEED`.
pub const ENV_PREFIX: &str = "PHASORWATCH_";

/// Every key that can be set in the config file or the environment.
pub const CONFIG_KEYS: &[&str] = &[
    "resolution_s",
    "tau_minutes",
    "lag_p",
    "threshold_t",
    "q",
    "feature_window_s",
    "listen",
    "data_dir",
    "input.kind",
    "input.path",
    "input.speed",
    "input.rate_hz",
    "classifier.tree",
    "classifier.bootstrap_events",
    "classifier.seed",
    "stream.queue_capacity",
    "stream.history_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    /// PMU CSV file replayed through channel derivation and coarse-graining.
    Csv,
    /// Scenario file rendered by the synthetic generator.
    Synthetic,
    /// No input: the service only answers the API.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub kind: InputKind,
    pub path: Option<PathBuf>,
    /// Replay speed multiplier over data time; 0 runs unpaced.
    pub speed: f64,
    /// Sample rate of CSV input.
    pub rate_hz: f64,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            kind: InputKind::None,
            path: None,
            speed: 1.0,
            rate_hz: 30.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    /// Tree JSON exported by `classify --export-tree`. Without it a tree is
    /// trained at startup on a synthetic corpus.
    pub tree: Option<PathBuf>,
    /// Corpus size for the startup tree; 0 disables classification.
    pub bootstrap_events: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            tree: None,
            bootstrap_events: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    /// Score records buffered per subscriber before drops start.
    pub queue_capacity: usize,
    /// Seconds of score history sent to a joining subscriber.
    pub history_s: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            queue_capacity: 4096,
            history_s: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub resolution_s: f64,
    pub tau_minutes: f64,
    pub lag_p: usize,
    pub threshold_t: f64,
    pub q: usize,
    pub feature_window_s: f64,
    pub listen: String,
    pub data_dir: PathBuf,
    pub input: InputConfig,
    pub classifier: ClassifierConfig,
    pub stream: StreamConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            resolution_s: 0.5,
            tau_minutes: 10.0,
            lag_p: 1,
            threshold_t: 12.0,
            q: 10,
            feature_window_s: 5.0,
            listen: "127.0.0.1:8080".into(),
            data_dir: PathBuf::from("phasorwatch-data"),
            input: InputConfig::default(),
            classifier: ClassifierConfig::default(),
            stream: StreamConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// Parses TOML text, then applies overrides from `env`.
    pub fn from_toml_with_env<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| ServiceError::Config(e.to_string()))?;
        apply_env(&mut table, env)?;
        let cfg: Self = table
            .try_into()
            .map_err(|e: toml::de::Error| ServiceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file with overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn window_len(&self) -> usize {
        self.live().window_len()
    }

    pub fn live(&self) -> LiveConfig {
        LiveConfig {
            resolution_s: self.resolution_s,
            tau_minutes: self.tau_minutes,
            lag_order: self.lag_p,
            threshold: self.threshold_t,
            horizon: self.q,
            feature_window_s: self.feature_window_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ServiceError::Config(m));
        if !(self.resolution_s > 0.0) {
            return bad(format!("resolution_s must be positive, got {}", self.resolution_s));
        }
        let pts = self.tau_minutes * 60.0 / self.resolution_s;
        if (pts - pts.round()).abs() > 1e-9 * pts.abs().max(1.0) {
            return bad(format!("tau_minutes * 60 / resolution_s = {pts} is not an integer"));
        }
        let min = (CHANNEL_COUNT + 1) * self.lag_p + 2;
        if pts.round() < min as f64 {
            return bad(format!("training window of {pts} points is below {min}"));
        }
        if self.q as f64 * self.resolution_s > self.feature_window_s + 1e-9 {
            return bad(format!(
                "q * resolution_s = {} s exceeds feature_window_s = {} s",
                self.q as f64 * self.resolution_s,
                self.feature_window_s
            ));
        }
        if !(self.input.speed >= 0.0 && self.input.speed.is_finite()) {
            return bad(format!("input.speed must be >= 0, got {}", self.input.speed));
        }
        if self.input.kind != InputKind::None && self.input.path.is_none() {
            return bad("input.path is required for csv and synthetic input".into());
        }
        if self.stream.queue_capacity == 0 {
            return bad("stream.queue_capacity must be positive".into());
        }
        self.live().validate()?;
        Ok(())
    }
}

fn apply_env<I>(table: &mut toml::Table, env: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    for (name, raw) in env {
        let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
            continue;
        };
        let Some(key) = CONFIG_KEYS
            .iter()
            .find(|k| k.replace('.', "_").eq_ignore_ascii_case(rest))
        else {
            return Err(ServiceError::Config(format!("unknown override {name}")));
        };
        let value = parse_env_value(&raw);
        let mut parts: Vec<&str> = key.split('.').collect();
        let leaf = parts.pop().expect("keys are non-empty");
        let mut node = &mut *table;
        for p in parts {
            node = node
                .entry(p)
                .or_insert_with(|| toml::Value::Table(Default::default()))
                .as_table_mut()
                .ok_or_else(|| ServiceError::Config(format!("`{p}` is not a table")))?;
        }
        node.insert(leaf.to_string(), value);
    }
    Ok(())
}

/// Numbers and booleans keep their type; everything else is a string.
fn parse_env_value(raw: &str) -> toml::Value {
    if let Ok(i) = raw.parse::<i64>() {
        return toml::Value::Integer(i);
    }
    if let Ok(f) = raw.parse::<f64>() {
        return toml::Value::Float(f);
    }
    if let Ok(b) = raw.parse::<bool>() {
        return toml::Value::Boolean(b);
    }
    toml::Value::String(raw.to_string())
}
