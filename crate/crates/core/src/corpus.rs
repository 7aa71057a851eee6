//! Labeled synthetic event corpora.
//!
//! Anomalies of the four classes are injected into ambient streams, the
//! streams are run through [`LiveDetector`], and each detected event that
//! starts at an injection is labeled with the injected class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::{AnomalyEvent, LiveConfig, LiveDetector, LiveOutput};
use crate::error::{Error, Result};
use crate::features::{extract_features, FeatureRow, FeatureVector, FEATURE_COUNT};
use crate::hyperlab::derive_seed;
use crate::synth::{channel_sigma, inject_anomaly, AnomalyClass, InjectedEvent, ShapeParams, SyntheticScenario};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    /// Labeled events to collect, balanced over the classes.
    pub events: usize,
    pub min_magnitude_sigma: f64,
    pub max_magnitude_sigma: f64,
    /// Time between injections.
    pub spacing_s: f64,
    /// Injections per independent stream.
    pub events_per_stream: usize,
    pub live: LiveConfig,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            events: 750,
            min_magnitude_sigma: 5.0,
            max_magnitude_sigma: 50.0,
            spacing_s: 40.0,
            events_per_stream: 50,
            live: LiveConfig::default(),
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        self.live.validate()?;
        if self.events == 0 || self.events_per_stream == 0 {
            return Err(Error::Config("corpus needs at least one event".into()));
        }
        if !(self.min_magnitude_sigma > 0.0 && self.max_magnitude_sigma >= self.min_magnitude_sigma) {
            return Err(Error::Config("magnitude range must be positive and ordered".into()));
        }
        if self.spacing_s < 25.0 {
            return Err(Error::Config("injections must be at least 25 s apart".into()));
        }
        Ok(())
    }

    fn rate(&self) -> f64 {
        1.0 / self.live.resolution_s
    }
}

/// Draws the magnitude and class-specific shape of one injection.
pub fn random_injection<R: Rng>(
    class: AnomalyClass,
    start: usize,
    rate_hz: f64,
    magnitudes: (f64, f64),
    rng: &mut R,
) -> InjectedEvent {
    let secs = |rng: &mut R, lo: f64, hi: f64| (rng.random_range(lo..=hi) * rate_hz).round().max(1.0);
    let mut magnitude = rng.random_range(magnitudes.0..=magnitudes.1);
    let mut shape = ShapeParams::default();
    let duration = match class {
        AnomalyClass::Spike => 1,
        AnomalyClass::Drop => secs(rng, 1.5, 4.0) as usize,
        AnomalyClass::Step => {
            if rng.random_bool(0.5) {
                magnitude = -magnitude;
            }
            0
        }
        AnomalyClass::Oscillatory => {
            shape.period = secs(rng, 1.5, 4.0);
            shape.decay = secs(rng, 1.0, 3.0);
            secs(rng, 4.0, 5.5) as usize
        }
    };
    InjectedEvent {
        class,
        start,
        magnitude_sigma: magnitude,
        duration,
        shape,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEvent {
    pub injected: InjectedEvent,
    pub event: AnomalyEvent,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub events: Vec<CorpusEvent>,
    pub injected: usize,
    /// Injections with no event starting within two samples.
    pub missed: Vec<InjectedEvent>,
    /// Detected events not starting at an injection (aftershocks and
    /// false alarms).
    pub unmatched: usize,
}

impl Corpus {
    pub fn rows(&self) -> Vec<[f64; FEATURE_COUNT]> {
        self.events.iter().map(|e| e.features.to_array()).collect()
    }

    pub fn labels(&self) -> Vec<AnomalyClass> {
        self.events.iter().map(|e| e.injected.class).collect()
    }

    /// Export rows numbered from 1 in corpus order.
    pub fn feature_rows(&self) -> Vec<FeatureRow> {
        self.events
            .iter()
            .enumerate()
            .map(|(i, e)| FeatureRow {
                event_id: i as u64 + 1,
                label: Some(e.injected.class),
                features: e.features,
            })
            .collect()
    }
}

/// Maximum lag between an injection and the start of its event, in samples.
const MATCH_SLACK: usize = 2;

struct StreamResult {
    matched: Vec<CorpusEvent>,
    missed: Vec<InjectedEvent>,
    unmatched: usize,
    injected: usize,
}

fn run_stream(cfg: &CorpusConfig, stream: u64) -> Result<StreamResult> {
    let rate = cfg.rate();
    let spacing = (cfg.spacing_s * rate).round() as usize;
    let warm = cfg.live.window_len();
    let n = warm + (cfg.events_per_stream + 1) * spacing;
    let mut scenario = SyntheticScenario::new(n as f64 / rate, rate, derive_seed(cfg.seed, stream, 0));
    scenario.start += chrono::Duration::days(stream as i64);
    let mut series = scenario.generate()?;
    let sigma = channel_sigma(&scenario.ambient_model)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream, 1));
    let first_class = (stream as usize * cfg.events_per_stream) % AnomalyClass::ALL.len();
    let injections: Vec<InjectedEvent> = (0..cfg.events_per_stream)
        .map(|i| {
            let class = AnomalyClass::ALL[(first_class + i) % AnomalyClass::ALL.len()];
            let start = warm + spacing / 2 + i * spacing;
            random_injection(
                class,
                start,
                rate,
                (cfg.min_magnitude_sigma, cfg.max_magnitude_sigma),
                &mut rng,
            )
        })
        .collect();
    for inj in &injections {
        inject_anomaly(&mut series, inj, &sigma)?;
    }

    let mut live = LiveDetector::new(cfg.live)?;
    let mut events = Vec::new();
    for s in &series {
        for out in live.push(*s)? {
            if let LiveOutput::EventClosed(e) = out {
                events.push(e);
            }
        }
    }
    events.extend(live.finish());

    let index_of = |e: &AnomalyEvent| series.partition_point(|s| s.timestamp < e.start_timestamp);
    let mut used = vec![false; events.len()];
    let mut matched = Vec::new();
    let mut missed = Vec::new();
    for inj in &injections {
        let hit = events.iter().enumerate().find(|(i, e)| {
            let idx = index_of(e);
            !used[*i] && idx >= inj.start && idx <= inj.start + MATCH_SLACK
        });
        match hit {
            Some((i, e)) => {
                used[i] = true;
                let features = extract_features(&e.feature_scores(), e.threshold)?;
                matched.push(CorpusEvent {
                    injected: *inj,
                    event: e.clone(),
                    features,
                });
            }
            None => missed.push(*inj),
        }
    }
    Ok(StreamResult {
        unmatched: used.iter().filter(|u| !**u).count(),
        matched,
        missed,
        injected: injections.len(),
    })
}

/// Builds a class-balanced corpus of `cfg.events` detected events.
///
/// Streams are simulated in parallel, in rounds, until every class has its
/// share; events are then taken in stream order, so the result depends only
/// on the configuration.
pub fn build_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let classes = AnomalyClass::ALL.len();
    let need: Vec<usize> = (0..classes)
        .map(|c| cfg.events / classes + usize::from(c < cfg.events % classes))
        .collect();
    let per_round = cfg.events.div_ceil(cfg.events_per_stream).max(1) as u64;
    let max_rounds = 20;

    let mut corpus = Corpus::default();
    let mut have = vec![0usize; classes];
    let mut next_stream = 0u64;
    for _ in 0..max_rounds {
        let results: Vec<Result<StreamResult>> = (next_stream..next_stream + per_round)
            .into_par_iter()
            .map(|s| run_stream(cfg, s))
            .collect();
        next_stream += per_round;
        for r in results {
            let r = r?;
            corpus.injected += r.injected;
            corpus.unmatched += r.unmatched;
            corpus.missed.extend(r.missed);
            for e in r.matched {
                let c = e.injected.class.id();
                if have[c] < need[c] {
                    have[c] += 1;
                    corpus.events.push(e);
                }
            }
        }
        if have == need {
            return Ok(corpus);
        }
    }
    Err(Error::Validation(format!(
        "collected {have:?} of {need:?} events per class after {next_stream} streams"
    )))
}
