use std::collections::VecDeque;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::state::{BufferUpdate, DetectorConfig, DetectorState, EventSignal, Mode};
use super::{AnomalyEvent, ResidualScore, TriggerSet};
use crate::error::{Error, Result};
use crate::ingest::{ChannelVector, CHANNEL_COUNT};
use crate::preprocess::{fit_standardization, StandardizationParams};
use crate::var::{fit_var_excluding, VarModel};

/// Parameters of the rolling detector, in physical time units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiveConfig {
    pub resolution_s: f64,
    pub tau_minutes: f64,
    pub lag_order: usize,
    pub threshold: f64,
    pub horizon: usize,
    pub feature_window_s: f64,
}

impl Default for LiveConfig {
    fn default() -> Self {
        Self {
            resolution_s: 0.5,
            tau_minutes: 10.0,
            lag_order: 1,
            threshold: 12.0,
            horizon: 10,
            feature_window_s: 5.0,
        }
    }
}

impl LiveConfig {
    /// Training window length in samples.
    pub fn window_len(&self) -> usize {
        (self.tau_minutes * 60.0 / self.resolution_s).round() as usize
    }

    /// Feature window length in samples.
    pub fn feature_points(&self) -> usize {
        ((self.feature_window_s / self.resolution_s).round() as usize).max(1)
    }

    pub fn detector_config(&self) -> DetectorConfig {
        DetectorConfig {
            threshold: self.threshold,
            horizon: self.horizon,
            lag_order: self.lag_order,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution_s.is_finite() && self.resolution_s > 0.0) {
            return Err(Error::Config("resolution must be positive".into()));
        }
        if !(self.tau_minutes.is_finite() && self.tau_minutes > 0.0) {
            return Err(Error::Config("tau must be positive".into()));
        }
        if !(self.feature_window_s.is_finite() && self.feature_window_s > 0.0) {
            return Err(Error::Config("feature window must be positive".into()));
        }
        self.detector_config().validate()?;
        let needed = (CHANNEL_COUNT + 1) * self.lag_order + 2;
        if self.window_len() < needed {
            return Err(Error::Config(format!(
                "training window of {} samples is too short for VAR({}); need {needed}",
                self.window_len(),
                self.lag_order
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LiveOutput {
    Score(ResidualScore),
    EventOpened {
        event_id: u64,
        timestamp: DateTime<Utc>,
        trigger_set: TriggerSet,
    },
    /// The event has closed and its feature window is complete.
    EventClosed(AnomalyEvent),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveStats {
    pub samples: u64,
    pub scored: u64,
    pub refits: u64,
    pub refit_failures: u64,
    pub events: u64,
}

#[derive(Debug, Clone)]
struct Pending {
    event: AnomalyEvent,
    closed: bool,
}

/// Rolling detector over a physical-unit stream.
///
/// Keeps the last `window_len` samples, refits standardization and the VAR
/// model after every sample that enters the window, and feeds standardized
/// observations to a [`DetectorState`]. Scoring starts once the first full
/// window has been collected.
#[derive(Debug, Clone)]
pub struct LiveDetector {
    config: LiveConfig,
    window_len: usize,
    feature_points: usize,
    raw: VecDeque<ChannelVector>,
    excluded: VecDeque<bool>,
    params: Option<StandardizationParams>,
    /// Parameters frozen at the trigger, with the index of the next held point.
    frozen: Option<(StandardizationParams, usize)>,
    held: Vec<ChannelVector>,
    state: DetectorState,
    pending: VecDeque<Pending>,
    next_event_id: u64,
    last_timestamp: Option<DateTime<Utc>>,
    stats: LiveStats,
}

impl LiveDetector {
    pub fn new(config: LiveConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            window_len: config.window_len(),
            feature_points: config.feature_points(),
            raw: VecDeque::with_capacity(config.window_len() + 1),
            excluded: VecDeque::with_capacity(config.window_len() + 1),
            params: None,
            frozen: None,
            held: Vec::new(),
            state: DetectorState::new(config.detector_config())?,
            pending: VecDeque::new(),
            next_event_id: 1,
            last_timestamp: None,
            stats: LiveStats::default(),
            config,
        })
    }

    pub fn config(&self) -> &LiveConfig {
        &self.config
    }

    /// Id given to the next event.
    pub fn set_next_event_id(&mut self, id: u64) {
        self.next_event_id = id;
    }

    pub fn is_warm(&self) -> bool {
        self.state.is_initialized()
    }

    pub fn mode(&self) -> Mode {
        self.state.mode()
    }

    pub fn model(&self) -> Option<&Arc<VarModel>> {
        self.state.model()
    }

    pub fn standardization(&self) -> Option<&StandardizationParams> {
        self.params.as_ref()
    }

    pub fn threshold(&self) -> f64 {
        self.state.threshold()
    }

    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        self.state.set_threshold(threshold)?;
        self.config.threshold = threshold;
        Ok(())
    }

    pub fn stats(&self) -> LiveStats {
        self.stats
    }

    /// Physical-unit training window.
    pub fn raw_window(&self) -> impl ExactSizeIterator<Item = &ChannelVector> {
        self.raw.iter()
    }

    pub fn push(&mut self, sample: ChannelVector) -> Result<Vec<LiveOutput>> {
        if sample.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("sample has non-finite values".into()));
        }
        if let Some(prev) = self.last_timestamp {
            if sample.timestamp <= prev {
                return Err(Error::Validation(format!(
                    "timestamp {} does not follow {}",
                    sample.timestamp, prev
                )));
            }
        }
        self.last_timestamp = Some(sample.timestamp);
        self.stats.samples += 1;

        if !self.state.is_initialized() {
            self.enter_window(sample, false);
            if self.raw.len() == self.window_len {
                self.refit();
            }
            return Ok(Vec::new());
        }

        let n = self.window_len;
        let (params, index) = match (self.state.mode(), &self.frozen) {
            (Mode::Anomaly, Some((p, i))) => (*p, *i),
            _ => (*self.current_params()?, n),
        };
        let z = params.standardize_at(&sample.values, index);
        let outcome = self.state.step(sample.timestamp, z)?;
        self.stats.scored += 1;
        let mut out = vec![LiveOutput::Score(outcome.score)];

        for p in self.pending.iter_mut() {
            if p.event.score_window.len() < self.feature_points {
                p.event.score_window.push(outcome.score);
                p.event.raw_window.push(sample);
                p.event.standardized_window.push(z);
            }
        }

        match outcome.signal {
            Some(EventSignal::Opened(trigger_set)) => {
                let event_id = self.next_event_id;
                self.next_event_id += 1;
                self.stats.events += 1;
                self.frozen = Some((params, n + 1));
                self.pending.push_back(Pending {
                    event: AnomalyEvent {
                        event_id,
                        start_timestamp: sample.timestamp,
                        end_timestamp: None,
                        threshold: self.state.threshold(),
                        trigger_set,
                        score_window: vec![outcome.score],
                        raw_window: vec![sample],
                        standardized_window: vec![z],
                        class_label: None,
                        label_source: None,
                    },
                    closed: false,
                });
                out.push(LiveOutput::EventOpened {
                    event_id,
                    timestamp: sample.timestamp,
                    trigger_set,
                });
            }
            Some(EventSignal::Closed { .. }) => {
                if let Some(p) = self.pending.iter_mut().rev().find(|p| !p.closed) {
                    p.closed = true;
                    p.event.end_timestamp = Some(sample.timestamp);
                }
            }
            None => {
                if let Some((_, i)) = self.frozen.as_mut() {
                    *i += 1;
                }
            }
        }

        match outcome.buffer {
            BufferUpdate::Appended => self.enter_window(sample, false),
            BufferUpdate::Held => self.held.push(sample),
            BufferUpdate::Released(points) => {
                self.held.push(sample);
                let (frozen, _) = self
                    .frozen
                    .take()
                    .ok_or_else(|| Error::State("release without frozen parameters".into()))?;
                let held = std::mem::take(&mut self.held);
                for (i, (pt, obs)) in points.iter().zip(held).enumerate() {
                    let entry = if pt.imputed {
                        ChannelVector::new(obs.timestamp, frozen.de_standardize_at(&pt.value, n + i))
                    } else {
                        obs
                    };
                    self.enter_window(entry, pt.excluded);
                }
            }
        }
        if self.state.needs_retrain() {
            self.refit();
        }

        while self
            .pending
            .front()
            .is_some_and(|p| p.closed && p.event.score_window.len() >= self.feature_points)
        {
            let p = self.pending.pop_front().expect("front checked");
            out.push(LiveOutput::EventClosed(p.event));
        }
        Ok(out)
    }

    /// Flushes events whose feature window is still incomplete, e.g. at the
    /// end of a replay. Open events get the last seen timestamp as their end.
    pub fn finish(&mut self) -> Vec<AnomalyEvent> {
        let last = self.last_timestamp;
        self.pending
            .drain(..)
            .map(|mut p| {
                if p.event.end_timestamp.is_none() {
                    p.event.end_timestamp = last;
                }
                p.event
            })
            .collect()
    }

    fn current_params(&self) -> Result<&StandardizationParams> {
        self.params
            .as_ref()
            .ok_or_else(|| Error::State("no standardization fitted".into()))
    }

    fn enter_window(&mut self, v: ChannelVector, excluded: bool) {
        self.raw.push_back(v);
        self.excluded.push_back(excluded);
        if self.raw.len() > self.window_len {
            self.raw.pop_front();
            self.excluded.pop_front();
        }
    }

    /// Refits on the raw window. On failure the previous fit stays in use.
    fn refit(&mut self) {
        let raw: Vec<ChannelVector> = self.raw.iter().copied().collect();
        let exclude: Vec<bool> = self.excluded.iter().copied().collect();
        let fitted = fit_standardization(&raw).and_then(|params| {
            let z: Vec<[f64; CHANNEL_COUNT]> = raw
                .iter()
                .enumerate()
                .map(|(i, c)| params.standardize_at(&c.values, i))
                .collect();
            let model = fit_var_excluding(&z, self.config.lag_order, &exclude)?;
            self.state.install(&z, &exclude, Arc::new(model))?;
            Ok(params)
        });
        match fitted {
            Ok(params) => {
                self.params = Some(params);
                self.stats.refits += 1;
            }
            Err(e) => {
                self.stats.refit_failures += 1;
                log::debug!("refit failed: {e}");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{inject_anomaly, AnomalyClass, InjectedEvent, ShapeParams, SyntheticScenario};

    fn config() -> LiveConfig {
        LiveConfig {
            tau_minutes: 1.0,
            ..LiveConfig::default()
        }
    }

    #[test]
    fn window_sizes() {
        let c = LiveConfig::default();
        assert_eq!(c.window_len(), 1200);
        assert_eq!(c.feature_points(), 10);
        let bad = LiveConfig {
            tau_minutes: 0.01,
            ..c
        };
        assert!(LiveDetector::new(bad).is_err());
    }

    #[test]
    fn warm_up_then_spike_event() {
        let scenario = SyntheticScenario::new(180.0, 2.0, 5);
        let mut series = scenario.generate().unwrap();
        let sigma = crate::synth::channel_sigma(&scenario.ambient_model).unwrap();
        inject_anomaly(
            &mut series,
            &InjectedEvent {
                class: AnomalyClass::Spike,
                start: 200,
                magnitude_sigma: 40.0,
                duration: 1,
                shape: ShapeParams::default(),
            },
            &sigma,
        )
        .unwrap();

        let mut live = LiveDetector::new(config()).unwrap();
        let mut scores = 0;
        let mut closed = Vec::new();
        for (i, s) in series.iter().enumerate() {
            let out = live.push(*s).unwrap();
            if i < 119 {
                assert!(out.is_empty());
            }
            for o in out {
                match o {
                    LiveOutput::Score(_) => scores += 1,
                    LiveOutput::EventClosed(e) => closed.push(e),
                    LiveOutput::EventOpened { .. } => {}
                }
            }
        }
        assert_eq!(scores, series.len() - 120);
        assert!(live.is_warm());
        assert_eq!(closed.len(), 1, "{closed:?}");
        let e = &closed[0];
        assert_eq!(e.event_id, 1);
        assert_eq!(e.start_timestamp, series[200].timestamp);
        assert_eq!(e.score_window.len(), 10);
        assert_eq!(e.raw_window[0], series[200]);
        assert!(e.end_timestamp.unwrap() == series[210].timestamp);
        assert!(live.raw_window().all(|c| (c.values[0] - 132_790.0).abs() < 20.0 * 60.0));
    }

    #[test]
    fn rejects_out_of_order() {
        let scenario = SyntheticScenario::new(10.0, 2.0, 5);
        let series = scenario.generate().unwrap();
        let mut live = LiveDetector::new(config()).unwrap();
        live.push(series[1]).unwrap();
        assert!(live.push(series[0]).is_err());
    }
}
