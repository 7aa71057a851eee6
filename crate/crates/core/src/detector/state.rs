use std::collections::VecDeque;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{ResidualScore, Scorer, TriggerSet};
use crate::error::{Error, Result};
use crate::ingest::CHANNEL_COUNT;
use crate::var::{fit_var_excluding, VarModel};

type Point = [f64; CHANNEL_COUNT];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Score threshold, in standard deviations.
    pub threshold: f64,
    /// Points scored against the frozen forecast after the trigger point.
    pub horizon: usize,
    /// VAR order.
    pub lag_order: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            threshold: 12.0,
            horizon: 10,
            lag_order: 1,
        }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        validate_threshold(self.threshold)?;
        if self.horizon == 0 {
            return Err(Error::Config("horizon q must be >= 1".into()));
        }
        if self.lag_order == 0 {
            return Err(Error::Config("lag order p must be >= 1".into()));
        }
        Ok(())
    }
}

fn validate_threshold(t: f64) -> Result<()> {
    if t.is_finite() && t > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("threshold must be positive and finite, got {t}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    Normal,
    Anomaly,
}

/// A point leaving the anomaly hold and entering the training window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReleasedPoint {
    pub observed: Point,
    /// Value written to the window: the forecast if imputed, else `observed`.
    pub value: Point,
    pub imputed: bool,
    /// Left out of the regression, as target and as lag.
    pub excluded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BufferUpdate {
    /// The observation entered the window.
    Appended,
    /// The observation is held until the anomaly closes.
    Held,
    /// The anomaly closed; held points entered the window in order.
    Released(Vec<ReleasedPoint>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventSignal {
    Opened(TriggerSet),
    /// `persisted` is set when the last scored point still exceeded the
    /// threshold; the shift is then taken as the new operating level and no
    /// point is imputed.
    Closed { imputed: usize, persisted: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub score: ResidualScore,
    pub signal: Option<EventSignal>,
    pub buffer: BufferUpdate,
}

#[derive(Debug, Clone)]
struct Episode {
    forecasts: Vec<Vec<f64>>,
    observed: Vec<Point>,
    flagged: Vec<bool>,
}

/// Detection state machine over standardized observations.
///
/// In `Normal` mode each observation is scored against the one-step
/// prediction from the window. A score above the threshold opens an event:
/// the model is frozen, a forecast of `horizon + 1` steps is taken from the
/// pre-trigger lags, and the trigger point plus the next `horizon` points
/// are scored against it. When the countdown ends, the anomalous span (the
/// trigger through the last point above the threshold) is replaced by its
/// forecast and all held points enter the window. Held points never serve as
/// regression rows: retraining stays stopped for them.
#[derive(Debug, Clone)]
pub struct DetectorState {
    config: DetectorConfig,
    mode: Mode,
    countdown: usize,
    window: VecDeque<Point>,
    excluded: VecDeque<bool>,
    model: Option<Arc<VarModel>>,
    scorer: Option<Scorer>,
    episode: Option<Episode>,
    stale: bool,
}

impl DetectorState {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            mode: Mode::Normal,
            countdown: 0,
            window: VecDeque::new(),
            excluded: VecDeque::new(),
            model: None,
            scorer: None,
            episode: None,
            stale: false,
        })
    }

    /// Fits the model on `window` and makes it the training window.
    pub fn initialize(&mut self, window: &[Point]) -> Result<()> {
        self.initialize_excluding(window, &vec![false; window.len()])
    }

    /// As [`initialize`](Self::initialize), leaving out the regression rows
    /// whose target has `exclude` set.
    pub fn initialize_excluding(&mut self, window: &[Point], exclude: &[bool]) -> Result<()> {
        let model = fit_var_excluding(window, self.config.lag_order, exclude)?;
        self.install(window, exclude, Arc::new(model))
    }

    /// Replaces window and model; fails without side effects.
    pub fn install(&mut self, window: &[Point], exclude: &[bool], model: Arc<VarModel>) -> Result<()> {
        if exclude.len() != window.len() {
            return Err(Error::Arity {
                expected: window.len(),
                got: exclude.len(),
            });
        }
        if model.dim() != CHANNEL_COUNT {
            return Err(Error::Arity {
                expected: CHANNEL_COUNT,
                got: model.dim(),
            });
        }
        if window.len() < model.order() {
            return Err(Error::Length {
                needed: model.order(),
                got: window.len(),
            });
        }
        if self.mode == Mode::Anomaly {
            return Err(Error::State("cannot replace the model during an anomaly".into()));
        }
        let scorer = Scorer::for_model(&model)?;
        self.window = window.iter().copied().collect();
        self.excluded = exclude.iter().copied().collect();
        self.model = Some(model);
        self.scorer = Some(scorer);
        self.stale = false;
        Ok(())
    }

    pub fn is_initialized(&self) -> bool {
        self.model.is_some()
    }

    /// Refits the model on the current window.
    pub fn retrain(&mut self) -> Result<()> {
        let window: Vec<Point> = self.window.iter().copied().collect();
        let exclude: Vec<bool> = self.excluded.iter().copied().collect();
        self.initialize_excluding(&window, &exclude)
    }

    /// True when the window changed since the last fit and no event is open.
    pub fn needs_retrain(&self) -> bool {
        self.stale && self.mode == Mode::Normal
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn threshold(&self) -> f64 {
        self.config.threshold
    }

    /// Takes effect from the next step, including within an open event.
    pub fn set_threshold(&mut self, threshold: f64) -> Result<()> {
        validate_threshold(threshold)?;
        self.config.threshold = threshold;
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn countdown(&self) -> usize {
        self.countdown
    }

    pub fn model(&self) -> Option<&Arc<VarModel>> {
        self.model.as_ref()
    }

    pub fn window(&self) -> impl ExactSizeIterator<Item = &Point> {
        self.window.iter()
    }

    /// Regression exclusion flags matching [`window`](Self::window).
    pub fn exclusions(&self) -> impl ExactSizeIterator<Item = &bool> {
        self.excluded.iter()
    }

    pub fn step(&mut self, timestamp: DateTime<Utc>, observed: Point) -> Result<StepOutcome> {
        let (Some(model), Some(scorer)) = (self.model.as_ref(), self.scorer.as_ref()) else {
            return Err(Error::State("detector is not initialized".into()));
        };
        if observed.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("observation has non-finite values".into()));
        }
        let threshold = self.config.threshold;

        if self.mode == Mode::Normal {
            let p = model.order();
            let lags: Vec<Point> = self.window.iter().skip(self.window.len() - p).copied().collect();
            let pred = model.predict_one(&lags)?;
            let score = scorer.score(timestamp, residual(&pred, &observed));
            let triggers = TriggerSet::from_score(&score, threshold);
            if triggers.is_empty() {
                self.push_window(observed, false);
                return Ok(StepOutcome {
                    score,
                    signal: None,
                    buffer: BufferUpdate::Appended,
                });
            }
            let forecasts = model.forecast(&lags, self.config.horizon + 1)?;
            self.episode = Some(Episode {
                forecasts,
                observed: vec![observed],
                flagged: vec![true],
            });
            self.mode = Mode::Anomaly;
            self.countdown = self.config.horizon;
            return Ok(StepOutcome {
                score,
                signal: Some(EventSignal::Opened(triggers)),
                buffer: BufferUpdate::Held,
            });
        }

        let ep = self
            .episode
            .as_mut()
            .ok_or_else(|| Error::State("anomaly mode without an open event".into()))?;
        let j = ep.observed.len();
        let score = scorer.score(timestamp, residual(&ep.forecasts[j], &observed));
        ep.observed.push(observed);
        ep.flagged.push(score.max_score() > threshold);
        self.countdown -= 1;
        if self.countdown > 0 {
            return Ok(StepOutcome {
                score,
                signal: None,
                buffer: BufferUpdate::Held,
            });
        }

        let ep = self.episode.take().expect("episode checked above");
        let persisted = *ep.flagged.last().expect("episode has points");
        let last_flagged = ep.flagged.iter().rposition(|&f| f).unwrap_or(0);
        let released: Vec<ReleasedPoint> = ep
            .observed
            .iter()
            .zip(&ep.forecasts)
            .enumerate()
            .map(|(i, (obs, f))| {
                let imputed = !persisted && i <= last_flagged;
                ReleasedPoint {
                    observed: *obs,
                    value: if imputed { [f[0], f[1], f[2], f[3]] } else { *obs },
                    imputed,
                    excluded: true,
                }
            })
            .collect();
        for pt in &released {
            self.push_window(pt.value, pt.excluded);
        }
        self.mode = Mode::Normal;
        let imputed = released.iter().filter(|r| r.imputed).count();
        Ok(StepOutcome {
            score,
            signal: Some(EventSignal::Closed { imputed, persisted }),
            buffer: BufferUpdate::Released(released),
        })
    }

    fn push_window(&mut self, v: Point, excluded: bool) {
        self.window.push_back(v);
        self.window.pop_front();
        self.excluded.push_back(excluded);
        self.excluded.pop_front();
        self.stale = true;
    }
}

fn residual(pred: &[f64], observed: &Point) -> Point {
    let mut r = [0.0; CHANNEL_COUNT];
    for k in 0..CHANNEL_COUNT {
        r[k] = pred[k] - observed[k];
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::default_start;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise_window(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| std::array::from_fn(|_| StandardNormal.sample(&mut rng)))
            .collect()
    }

    fn ready(q: usize) -> DetectorState {
        let mut d = DetectorState::new(DetectorConfig {
            threshold: 12.0,
            horizon: q,
            lag_order: 1,
        })
        .unwrap();
        d.initialize(&noise_window(400, 1)).unwrap();
        d
    }

    #[test]
    fn step_before_initialize_is_state_error() {
        let mut d = DetectorState::new(DetectorConfig::default()).unwrap();
        assert!(matches!(d.step(default_start(), [0.0; 4]), Err(Error::State(_))));
    }

    #[test]
    fn config_validation() {
        let bad = DetectorConfig {
            horizon: 0,
            ..DetectorConfig::default()
        };
        assert!(DetectorState::new(bad).is_err());
        let mut d = ready(3);
        assert!(d.set_threshold(-1.0).is_err());
        assert!(d.set_threshold(f64::NAN).is_err());
        d.set_threshold(3.0).unwrap();
        assert_eq!(d.threshold(), 3.0);
    }

    #[test]
    fn spike_opens_counts_down_and_imputes() {
        let q = 3;
        let mut d = ready(q);
        let t = default_start();
        let before: Vec<Point> = d.window().copied().collect();
        let out = d.step(t, [200.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(matches!(out.signal, Some(EventSignal::Opened(s)) if s.contains(TriggerSet::channel(0))));
        assert_eq!(out.buffer, BufferUpdate::Held);
        assert_eq!(d.mode(), Mode::Anomaly);
        assert_eq!(d.countdown(), q);
        for i in 0..q {
            let out = d.step(t, [0.0; 4]).unwrap();
            if i + 1 < q {
                assert_eq!(out.buffer, BufferUpdate::Held);
                assert_eq!(d.countdown(), q - 1 - i);
            } else {
                let BufferUpdate::Released(pts) = out.buffer else {
                    panic!("expected release")
                };
                assert_eq!(pts.len(), q + 1);
                assert!(pts[0].imputed);
                assert!(pts[1..].iter().all(|p| !p.imputed));
                assert_eq!(
                    out.signal,
                    Some(EventSignal::Closed {
                        imputed: 1,
                        persisted: false
                    })
                );
            }
        }
        assert_eq!(d.mode(), Mode::Normal);
        let after: Vec<Point> = d.window().copied().collect();
        assert_eq!(after.len(), before.len());
        assert!(after.iter().all(|p| p[0].abs() < 50.0));
        assert!(d.needs_retrain());
    }

    #[test]
    fn persistent_shift_is_kept() {
        let q = 4;
        let mut d = ready(q);
        let t = default_start();
        let mut last = None;
        for _ in 0..=q {
            last = Some(d.step(t, [100.0, 0.0, 0.0, 0.0]).unwrap());
        }
        let out = last.unwrap();
        assert_eq!(
            out.signal,
            Some(EventSignal::Closed {
                imputed: 0,
                persisted: true
            })
        );
        assert_eq!(d.window().last().unwrap()[0], 100.0);
        assert_eq!(d.exclusions().filter(|&&e| e).count(), q + 1);
        d.retrain().unwrap();
    }

    #[test]
    fn quiet_points_append() {
        let mut d = ready(3);
        let out = d.step(default_start(), [0.1; 4]).unwrap();
        assert_eq!(out.buffer, BufferUpdate::Appended);
        assert!(out.signal.is_none());
        assert_eq!(d.window().last().unwrap(), &[0.1; 4]);
        assert!(d.needs_retrain());
        d.retrain().unwrap();
        assert!(!d.needs_retrain());
    }

    #[test]
    fn non_finite_observation_rejected() {
        let mut d = ready(3);
        assert!(d.step(default_start(), [f64::NAN, 0.0, 0.0, 0.0]).is_err());
    }
}
