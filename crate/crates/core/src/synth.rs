//! Synthetic ambient PMU streams and anomaly injection.
//!
//! Ambient data is a VAR process in physical channel units. Injected anomaly
//! magnitudes are expressed in units of the ambient model's stationary
//! per-channel standard deviation.
//!
//! Scenario files are `key = value` lines; `#` starts a comment:
//!
//! ```text
//! duration_s = 1800
//! rate_hz = 30
//! seed = 7
//! event = spike,900,15,0.5
//! event = step,1200,-12,0
//! ```
//!
//! `event` lines are `class,start_s,magnitude_sigma,duration_s` and may repeat.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Duration, TimeZone, Utc};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ChannelVector, PmuSample, CHANNEL_COUNT};
use crate::var::VarModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnomalyClass {
    Spike,
    Drop,
    Step,
    Oscillatory,
}

impl AnomalyClass {
    pub const ALL: [AnomalyClass; 4] = [Self::Spike, Self::Drop, Self::Step, Self::Oscillatory];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Result<Self> {
        Self::ALL
            .get(id)
            .copied()
            .ok_or_else(|| Error::Validation(format!("unknown anomaly class id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Spike => "spike",
            Self::Drop => "drop",
            Self::Step => "step",
            Self::Oscillatory => "oscillatory",
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|c| c.name().to_string()).collect()
    }
}

impl fmt::Display for AnomalyClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnomalyClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "spike" | "0" => Ok(Self::Spike),
            "drop" | "1" => Ok(Self::Drop),
            "step" | "2" => Ok(Self::Step),
            "oscillatory" | "3" => Ok(Self::Oscillatory),
            other => Err(Error::Validation(format!("unknown anomaly class `{other}`"))),
        }
    }
}

/// Shape parameters shared by the anomaly classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    /// Channel receiving the anomaly (0 = voltage magnitude).
    pub channel: usize,
    /// Oscillation period, in samples.
    pub period: f64,
    /// E-folding time of the oscillation envelope, in samples.
    pub decay: f64,
}

impl Default for ShapeParams {
    fn default() -> Self {
        Self {
            channel: 0,
            period: 5.0,
            decay: 6.0,
        }
    }
}

/// One anomaly to inject, positioned in samples of the target series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InjectedEvent {
    pub class: AnomalyClass,
    pub start: usize,
    pub magnitude_sigma: f64,
    /// Length in samples. Spikes use at least one sample; steps ignore it.
    pub duration: usize,
    pub shape: ShapeParams,
}

/// Adds an anomaly to `series` in place.
///
/// - spike: `+m` over `max(duration, 1)` samples
/// - drop: `-|m|` held for `duration` samples, then restored
/// - step: `+m` from `start` to the end of the series
/// - oscillatory: `m * exp(-t / decay) * cos(2 pi t / period)` over `duration` samples
///
/// where `m = magnitude_sigma * channel_sigma[channel]`.
pub fn inject_anomaly(
    series: &mut [ChannelVector],
    event: &InjectedEvent,
    channel_sigma: &[f64; CHANNEL_COUNT],
) -> Result<()> {
    let ch = event.shape.channel;
    if ch >= CHANNEL_COUNT {
        return Err(Error::Validation(format!("channel index {ch} out of range")));
    }
    let n = series.len();
    let width = match event.class {
        AnomalyClass::Spike => event.duration.max(1),
        AnomalyClass::Step => n.saturating_sub(event.start),
        _ => event.duration,
    };
    if event.start >= n || event.start + width > n {
        return Err(Error::Validation(format!(
            "anomaly [{}, {}) does not fit a series of {n} samples",
            event.start,
            event.start + width
        )));
    }
    let m = event.magnitude_sigma * channel_sigma[ch];
    if m == 0.0 {
        return Ok(());
    }
    let target = &mut series[event.start..event.start + width];
    match event.class {
        AnomalyClass::Spike | AnomalyClass::Step => {
            target.iter_mut().for_each(|v| v.values[ch] += m);
        }
        AnomalyClass::Drop => {
            target.iter_mut().for_each(|v| v.values[ch] -= m.abs());
        }
        AnomalyClass::Oscillatory => {
            if !(event.shape.period > 0.0 && event.shape.decay > 0.0) {
                return Err(Error::Validation(
                    "oscillation period and decay must be positive".into(),
                ));
            }
            for (t, v) in target.iter_mut().enumerate() {
                let t = t as f64;
                let phase = 2.0 * std::f64::consts::PI * t / event.shape.period;
                v.values[ch] += m * (-t / event.shape.decay).exp() * phase.cos();
            }
        }
    }
    Ok(())
}

/// Nominal operating point of the built-in ambient model.
pub const AMBIENT_MEAN: [f64; CHANNEL_COUNT] = [132_790.0, 350.0, 0.15, 60.0];
/// Stationary standard deviations of the built-in ambient model.
pub const AMBIENT_SIGMA: [f64; CHANNEL_COUNT] = [60.0, 6.0, 0.004, 0.004];

/// A stable, persistent VAR(1) in physical units with voltage/frequency and
/// current/angle coupling, scaled so the stationary mean and standard
/// deviations are [`AMBIENT_MEAN`] and [`AMBIENT_SIGMA`].
pub fn default_ambient_model() -> VarModel {
    #[rustfmt::skip]
    let a_std = DMatrix::from_row_slice(4, 4, &[
        0.95, 0.00, 0.00, 0.03,
        0.00, 0.93, 0.04, 0.00,
        0.00, 0.05, 0.92, 0.00,
        0.04, 0.00, 0.00, 0.94,
    ]);
    #[rustfmt::skip]
    let corr = DMatrix::from_row_slice(4, 4, &[
        1.0, 0.2, 0.0, 0.6,
        0.2, 1.0, 0.7, 0.1,
        0.0, 0.7, 1.0, 0.0,
        0.6, 0.1, 0.0, 1.0,
    ]);
    let unit = VarModel::new(DVector::zeros(4), vec![a_std.clone()], corr.clone())
        .expect("valid ambient template");
    let gamma = unit
        .stationary_covariance()
        .expect("ambient template is stable");
    // D maps the unit-stationary process onto physical scales.
    let d = DVector::from_iterator(
        4,
        (0..4).map(|k| AMBIENT_SIGMA[k] / gamma[(k, k)].sqrt()),
    );
    let d_mat = DMatrix::from_diagonal(&d);
    let d_inv = DMatrix::from_diagonal(&d.map(|v| 1.0 / v));
    let a = &d_mat * &a_std * &d_inv;
    let mut sigma = &d_mat * &corr * &d_mat;
    sigma = (&sigma + sigma.transpose()) * 0.5;
    let mu = DVector::from_column_slice(&AMBIENT_MEAN);
    let c = (DMatrix::<f64>::identity(4, 4) - &a) * &mu;
    VarModel::new(c, vec![a], sigma).expect("valid ambient model")
}

/// Stationary per-channel standard deviations of a 4-channel model.
pub fn channel_sigma(model: &VarModel) -> Result<[f64; CHANNEL_COUNT]> {
    if model.dim() != CHANNEL_COUNT {
        return Err(Error::Arity {
            expected: CHANNEL_COUNT,
            got: model.dim(),
        });
    }
    let g = model.stationary_covariance()?;
    Ok(std::array::from_fn(|k| g[(k, k)].sqrt()))
}

/// A scenario event as written in scenario files (times in seconds).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub class: AnomalyClass,
    pub start_s: f64,
    pub magnitude_sigma: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScenario {
    pub ambient_model: VarModel,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub seed: u64,
    pub start: DateTime<Utc>,
    pub events: Vec<ScenarioEvent>,
}

/// Default first timestamp of synthetic streams.
pub fn default_start() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
}

impl SyntheticScenario {
    pub fn new(duration_s: f64, sample_rate_hz: f64, seed: u64) -> Self {
        Self {
            ambient_model: default_ambient_model(),
            duration_s,
            sample_rate_hz,
            seed,
            start: default_start(),
            events: Vec::new(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut duration = None;
        let mut rate = None;
        let mut seed = 0u64;
        let mut events = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| Error::Config(format!("scenario line {}: {m}", lineno + 1));
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`"))?;
            let value = value.trim();
            let num = |v: &str| v.trim().parse::<f64>().map_err(|_| err("bad number"));
            match key.trim() {
                "duration_s" => duration = Some(num(value)?),
                "rate_hz" => rate = Some(num(value)?),
                "seed" => seed = value.parse().map_err(|_| err("bad seed"))?,
                "event" => {
                    let parts: Vec<&str> = value.split(',').collect();
                    if parts.len() != 4 {
                        return Err(err(
                            "event needs `class,start_s,magnitude_sigma,duration_s`",
                        ));
                    }
                    events.push(ScenarioEvent {
                        class: parts[0].parse()?,
                        start_s: num(parts[1])?,
                        magnitude_sigma: num(parts[2])?,
                        duration_s: num(parts[3])?,
                    });
                }
                other => return Err(err(&format!("unknown key `{other}`"))),
            }
        }
        let mut s = Self::new(
            duration.ok_or_else(|| Error::Config("scenario needs duration_s".into()))?,
            rate.ok_or_else(|| Error::Config("scenario needs rate_hz".into()))?,
            seed,
        );
        s.events = events;
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration_s > 0.0 && self.sample_rate_hz > 0.0) {
            return Err(Error::Config("duration_s and rate_hz must be positive".into()));
        }
        if !self.ambient_model.is_stable() {
            return Err(Error::Validation("ambient model is not stable".into()));
        }
        for e in &self.events {
            if e.start_s < 0.0 || e.start_s + e.duration_s > self.duration_s || e.duration_s < 0.0
            {
                return Err(Error::Config(format!(
                    "event at {} s does not fit the scenario",
                    e.start_s
                )));
            }
        }
        Ok(())
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + Duration::nanoseconds((index as f64 * 1e9 / self.sample_rate_hz).round() as i64)
    }

    /// Ambient stream only.
    pub fn synthesize_ambient(&self, seed: u64) -> Result<Vec<ChannelVector>> {
        synthesize_ambient(self, seed)
    }

    /// Ambient stream with every scenario event injected, seeded by `self.seed`.
    pub fn generate(&self) -> Result<Vec<ChannelVector>> {
        let mut series = self.synthesize_ambient(self.seed)?;
        let sigma = channel_sigma(&self.ambient_model)?;
        for e in self.injected_events() {
            inject_anomaly(&mut series, &e, &sigma)?;
        }
        Ok(series)
    }

    /// Scenario events converted to sample positions.
    pub fn injected_events(&self) -> Vec<InjectedEvent> {
        let rate = self.sample_rate_hz;
        self.events
            .iter()
            .map(|e| InjectedEvent {
                class: e.class,
                start: (e.start_s * rate).round() as usize,
                magnitude_sigma: e.magnitude_sigma,
                duration: (e.duration_s * rate).round() as usize,
                shape: ShapeParams {
                    channel: 0,
                    period: 2.0 * rate,
                    decay: 3.0 * rate,
                },
            })
            .collect()
    }
}

/// Simulates the scenario's ambient model at its sample rate.
pub fn synthesize_ambient(scenario: &SyntheticScenario, seed: u64) -> Result<Vec<ChannelVector>> {
    if scenario.ambient_model.dim() != CHANNEL_COUNT {
        return Err(Error::Arity {
            expected: CHANNEL_COUNT,
            got: scenario.ambient_model.dim(),
        });
    }
    let n = scenario.sample_count();
    let raw = scenario.ambient_model.simulate(n, seed)?;
    Ok(raw
        .into_iter()
        .enumerate()
        .map(|(i, v)| ChannelVector::new(scenario.timestamp(i), [v[0], v[1], v[2], v[3]]))
        .collect())
}

/// Expands modeling vectors back into raw samples (current angle fixed at 0).
pub fn to_samples(series: &[ChannelVector]) -> Vec<PmuSample> {
    series
        .iter()
        .map(|v| PmuSample {
            timestamp: v.timestamp,
            voltage_mag: v.values[0].max(0.0),
            voltage_angle: v.values[2].clamp(-1.0, 1.0).asin().to_degrees(),
            current_mag: v.values[1].max(0.0),
            current_angle: 0.0,
            frequency: v.values[3],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(n: usize) -> Vec<ChannelVector> {
        (0..n)
            .map(|i| ChannelVector::new(default_start() + Duration::seconds(i as i64), [1.0, 2.0, 0.1, 60.0]))
            .collect()
    }

    fn event(class: AnomalyClass, start: usize, m: f64, duration: usize) -> InjectedEvent {
        InjectedEvent {
            class,
            start,
            magnitude_sigma: m,
            duration,
            shape: ShapeParams::default(),
        }
    }

    const SIG: [f64; 4] = [2.0, 1.0, 1.0, 1.0];

    #[test]
    fn zero_magnitude_is_identity() {
        let base = flat(40);
        for class in AnomalyClass::ALL {
            let mut s = base.clone();
            inject_anomaly(&mut s, &event(class, 10, 0.0, 5), &SIG).unwrap();
            assert_eq!(s, base);
        }
    }

    #[test]
    fn spike_touches_one_index() {
        let base = flat(40);
        let mut s = base.clone();
        inject_anomaly(&mut s, &event(AnomalyClass::Spike, 7, 10.0, 1), &SIG).unwrap();
        for (i, (a, b)) in s.iter().zip(&base).enumerate() {
            if i == 7 {
                assert_eq!(a.values[0] - b.values[0], 20.0);
                assert_eq!(&a.values[1..], &b.values[1..]);
            } else {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn drop_restores_and_step_persists() {
        let base = flat(30);
        let mut s = base.clone();
        inject_anomaly(&mut s, &event(AnomalyClass::Drop, 5, 3.0, 4), &SIG).unwrap();
        assert!(s[5..9].iter().all(|v| v.values[0] == -5.0));
        assert_eq!(s[9], base[9]);
        let mut s = base.clone();
        inject_anomaly(&mut s, &event(AnomalyClass::Step, 5, -3.0, 0), &SIG).unwrap();
        assert!(s[5..].iter().all(|v| v.values[0] == -5.0));
        assert_eq!(s[4], base[4]);
    }

    #[test]
    fn oscillation_starts_at_full_magnitude_and_decays() {
        let mut s = flat(60);
        inject_anomaly(&mut s, &event(AnomalyClass::Oscillatory, 10, 5.0, 40), &SIG).unwrap();
        assert!((s[10].values[0] - 11.0).abs() < 1e-12);
        let late = s[40..50].iter().map(|v| (v.values[0] - 1.0).abs()).fold(0.0, f64::max);
        assert!(late < 1.0);
        assert_eq!(s[50].values[0], 1.0);
    }

    #[test]
    fn out_of_range_and_unknown_class() {
        let mut s = flat(10);
        assert!(inject_anomaly(&mut s, &event(AnomalyClass::Drop, 8, 1.0, 5), &SIG).is_err());
        assert!(AnomalyClass::from_id(4).is_err());
        assert!("blip".parse::<AnomalyClass>().is_err());
        assert_eq!("Step".parse::<AnomalyClass>().unwrap(), AnomalyClass::Step);
    }

    #[test]
    fn ambient_model_hits_its_targets() {
        let m = default_ambient_model();
        assert!(m.is_stable());
        let mean = m.stationary_mean().unwrap();
        let sig = channel_sigma(&m).unwrap();
        for k in 0..4 {
            assert!((mean[k] - AMBIENT_MEAN[k]).abs() < 1e-9 * AMBIENT_MEAN[k].abs());
            assert!((sig[k] - AMBIENT_SIGMA[k]).abs() < 1e-9 * AMBIENT_SIGMA[k]);
        }
    }

    #[test]
    fn scenario_file_parses() {
        let s = SyntheticScenario::parse(
            "# demo\nduration_s = 120\nrate_hz = 30\nseed = 5\nevent = spike,30,15,0.5\nevent = oscillatory, 60, 12, 8 # ringing\n",
        )
        .unwrap();
        assert_eq!(s.sample_count(), 3600);
        assert_eq!(s.seed, 5);
        assert_eq!(s.events.len(), 2);
        assert_eq!(s.events[1].class, AnomalyClass::Oscillatory);
        let inj = s.injected_events();
        assert_eq!(inj[0].start, 900);
        assert_eq!(inj[0].duration, 15);
        assert!(SyntheticScenario::parse("duration_s = 10\nrate_hz = 1\nevent = bump,1,1,1\n").is_err());
        assert!(SyntheticScenario::parse("duration_s = 10\nrate_hz = 1\nevent = step,20,1,0\n").is_err());
        assert!(SyntheticScenario::parse("rate_hz = 1\n").is_err());
    }

    #[test]
    fn samples_round_trip_through_channels() {
        let s = SyntheticScenario::new(5.0, 30.0, 1);
        let series = s.synthesize_ambient(1).unwrap();
        for (v, raw) in series.iter().zip(to_samples(&series)) {
            let back = crate::ingest::derive_channels(&raw);
            for k in 0..4 {
                assert!((back.values[k] - v.values[k]).abs() <= 1e-12 * v.values[k].abs().max(1.0));
            }
        }
    }
}
