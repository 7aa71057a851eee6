use std::fs::File;
use std::io::BufReader;
use std::path::Path;
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use parking_lot::{Condvar, Mutex, RwLock};
use phasorwatch::corpus::{build_corpus, CorpusConfig};
use phasorwatch::detector::{LabelSource, LiveStats, ScoreRecord};
use phasorwatch::features::extract_features;
use phasorwatch::ingest::{derive_channels, BlockAverager, CsvReader};
use phasorwatch::tree::train_tree;
use phasorwatch::{
    AnomalyClass, AnomalyEvent, ChannelVector, DecisionTree, LiveDetector, LiveOutput,
    SyntheticScenario, TrainConfig,
};
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::config::{InputKind, PipelineConfig};
use crate::error::{Result, ServiceError};
use crate::hub::{Hub, ModelSnapshot, StreamRecord};
use crate::store::{EventRecord, EventStore, EventView, LabelRecord, StoreRecovery, ThresholdChange};

pub type SampleSource = Box<dyn Iterator<Item = Result<ChannelVector>> + Send>;

/// Model-resolution samples for the configured input.
pub fn open_source(config: &PipelineConfig) -> Result<SampleSource> {
    let path = config.input.path.as_deref();
    match config.input.kind {
        InputKind::None => Ok(Box::new(std::iter::empty())),
        InputKind::Csv => {
            let path = path.ok_or_else(|| ServiceError::Config("input.path is not set".into()))?;
            csv_source(path, config.input.rate_hz, config.resolution_s)
        }
        InputKind::Synthetic => {
            let path = path.ok_or_else(|| ServiceError::Config("input.path is not set".into()))?;
            let text = std::fs::read_to_string(path)?;
            let scenario = SyntheticScenario::parse(&text)?;
            scenario_source(&scenario, config.resolution_s)
        }
    }
}

pub fn csv_source(path: &Path, rate_hz: f64, resolution_s: f64) -> Result<SampleSource> {
    let reader = CsvReader::new(BufReader::new(File::open(path)?));
    let averager = BlockAverager::new(rate_hz, resolution_s)?;
    Ok(coarse(reader.map(|r| r.map(|s| derive_channels(&s))), averager))
}

pub fn scenario_source(scenario: &SyntheticScenario, resolution_s: f64) -> Result<SampleSource> {
    let series = scenario.generate()?;
    let averager = BlockAverager::new(scenario.sample_rate_hz, resolution_s)?;
    Ok(coarse(series.into_iter().map(Ok), averager))
}

fn coarse<I>(input: I, mut averager: BlockAverager) -> SampleSource
where
    I: Iterator<Item = phasorwatch::Result<ChannelVector>> + Send + 'static,
{
    if averager.block() == 1 {
        return Box::new(input.map(|r| r.map_err(ServiceError::from)));
    }
    Box::new(input.filter_map(move |r| match r {
        Ok(v) => averager.push(v).map(Ok),
        Err(e) => Some(Err(e.into())),
    }))
}

/// Loads the configured tree, or trains one on a synthetic corpus.
pub fn load_classifier(config: &PipelineConfig) -> Result<Option<DecisionTree>> {
    let c = &config.classifier;
    if let Some(path) = &c.tree {
        let text = std::fs::read_to_string(path)?;
        return Ok(Some(serde_json::from_str(&text)?));
    }
    if c.bootstrap_events == 0 {
        return Ok(None);
    }
    let corpus = build_corpus(&CorpusConfig {
        events: c.bootstrap_events,
        live: config.live(),
        seed: c.seed,
        ..CorpusConfig::default()
    })?;
    let tree = train_tree(
        &corpus.rows(),
        &corpus.labels(),
        &TrainConfig {
            seed: c.seed,
            ..TrainConfig::default()
        },
    )?;
    Ok(Some(tree))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Warming,
    Running,
    /// Input exhausted; the API stays available.
    Finished,
    Failed,
    Stopped,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Lateness {
    pub ticks: u64,
    /// Ticks whose processing exceeded the resolution.
    pub overruns: u64,
    pub max_tick_ms: f64,
    pub mean_tick_ms: f64,
    /// Largest delay behind the paced schedule.
    pub max_behind_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub state: RunState,
    pub detector: LiveStats,
    pub lateness: Lateness,
    pub events_stored: usize,
    pub recovery: StoreRecovery,
    pub error: Option<String>,
}

pub enum Control {
    SetThreshold {
        value: f64,
        author: String,
        reply: oneshot::Sender<Result<ThresholdChange>>,
    },
    Label {
        event_id: u64,
        class: AnomalyClass,
        operator: String,
        reply: oneshot::Sender<Result<LabelRecord>>,
    },
    Shutdown,
}

/// State visible to API handlers.
#[derive(Debug)]
pub struct Shared {
    pub config: PipelineConfig,
    pub store: RwLock<EventStore>,
    pub hub: Hub,
    status: Mutex<Status>,
    status_changed: Condvar,
}

impl Shared {
    pub fn status(&self) -> Status {
        self.status.lock().clone()
    }

    pub fn model(&self) -> ModelSnapshot {
        self.hub.model()
    }

    fn update_status(&self, f: impl FnOnce(&mut Status)) {
        f(&mut self.status.lock());
        self.status_changed.notify_all();
    }
}

/// Handle to a running pipeline thread.
pub struct Pipeline {
    shared: Arc<Shared>,
    control: Sender<Control>,
    thread: Option<JoinHandle<()>>,
}

impl Pipeline {
    /// Opens the store and the input and starts processing.
    pub fn start(config: PipelineConfig, classifier: Option<DecisionTree>) -> Result<Self> {
        config.validate()?;
        let source = open_source(&config)?;
        Self::start_with_source(config, classifier, source)
    }

    pub fn start_with_source(
        config: PipelineConfig,
        classifier: Option<DecisionTree>,
        source: SampleSource,
    ) -> Result<Self> {
        config.validate()?;
        let store = EventStore::open(&config.data_dir)?;
        let mut live = LiveDetector::new(config.live())?;
        live.set_next_event_id(store.next_event_id());
        let history = (config.stream.history_s / config.resolution_s).round() as usize;
        let initial = snapshot(&live, None);
        let status = Status {
            state: RunState::Warming,
            detector: LiveStats::default(),
            lateness: Lateness::default(),
            events_stored: store.len(),
            recovery: store.recovery(),
            error: None,
        };
        let shared = Arc::new(Shared {
            hub: Hub::new(config.stream.queue_capacity, history, initial),
            store: RwLock::new(store),
            status: Mutex::new(status),
            status_changed: Condvar::new(),
            config,
        });
        let (tx, rx) = mpsc::channel();
        let worker = Worker {
            shared: Arc::clone(&shared),
            live,
            classifier,
            lateness: Lateness::default(),
            total_tick: Duration::ZERO,
        };
        let thread = std::thread::Builder::new()
            .name("phasorwatch-pipeline".into())
            .spawn(move || worker.run(source, rx))?;
        Ok(Self {
            shared,
            control: tx,
            thread: Some(thread),
        })
    }

    pub fn shared(&self) -> Arc<Shared> {
        Arc::clone(&self.shared)
    }

    pub fn control(&self) -> Sender<Control> {
        self.control.clone()
    }

    /// Blocks until the input is exhausted or the pipeline stops.
    pub fn wait_finished(&self) -> Status {
        let mut st = self.shared.status.lock();
        while matches!(st.state, RunState::Warming | RunState::Running) {
            self.shared.status_changed.wait(&mut st);
        }
        st.clone()
    }

    /// Stops the thread and closes all subscriptions.
    pub fn shutdown(mut self) -> Status {
        self.stop();
        self.shared.status()
    }

    fn stop(&mut self) {
        let _ = self.control.send(Control::Shutdown);
        if let Some(t) = self.thread.take() {
            if t.join().is_err() {
                log::error!("pipeline thread panicked");
            }
        }
    }
}

impl Drop for Pipeline {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Runs `config` to the end of its input and shuts down.
pub fn run_to_completion(config: PipelineConfig, classifier: Option<DecisionTree>) -> Result<Status> {
    let p = Pipeline::start(config, classifier)?;
    p.wait_finished();
    let status = p.shutdown();
    match &status.error {
        Some(e) if status.state == RunState::Failed => Err(ServiceError::Validation(e.clone())),
        _ => Ok(status),
    }
}

fn snapshot(live: &LiveDetector, as_of: Option<DateTime<Utc>>) -> ModelSnapshot {
    ModelSnapshot {
        warm: live.is_warm(),
        mode: live.mode(),
        threshold: live.threshold(),
        as_of,
        model: live.model().map(|m| (**m).clone()),
        standardization: live.standardization().copied(),
    }
}

struct Worker {
    shared: Arc<Shared>,
    live: LiveDetector,
    classifier: Option<DecisionTree>,
    lateness: Lateness,
    total_tick: Duration,
}

enum Flow {
    Continue,
    Stop,
}

impl Worker {
    fn run(mut self, source: SampleSource, rx: Receiver<Control>) {
        let speed = self.shared.config.input.speed;
        let budget = Duration::from_secs_f64(self.shared.config.resolution_s);
        let mut clock: Option<(Instant, DateTime<Utc>)> = None;
        let mut failure = None;

        for item in source {
            if let Flow::Stop = self.drain_controls(&rx) {
                return self.stopped();
            }
            let sample = match item {
                Ok(s) => s,
                Err(e) => {
                    failure = Some(e.to_string());
                    break;
                }
            };
            if speed > 0.0 {
                let (wall0, data0) = *clock.get_or_insert((Instant::now(), sample.timestamp));
                let offset = (sample.timestamp - data0).to_std().unwrap_or_default();
                let due = wall0 + offset.div_f64(speed);
                let now = Instant::now();
                if due > now {
                    std::thread::sleep(due - now);
                } else {
                    let behind = (now - due).as_secs_f64() * 1e3;
                    self.lateness.max_behind_ms = self.lateness.max_behind_ms.max(behind);
                }
            }
            let started = Instant::now();
            let result = self.tick(sample);
            self.account(started.elapsed(), budget);
            if let Err(e) = result {
                failure = Some(e.to_string());
                break;
            }
        }

        self.flush();
        self.shared.hub.publish(StreamRecord::End);
        let stats = self.live.stats();
        let lateness = self.lateness;
        self.shared.update_status(|s| {
            s.detector = stats;
            s.lateness = lateness;
            if let Some(e) = failure {
                log::error!("pipeline stopped: {e}");
                s.state = RunState::Failed;
                s.error = Some(e);
            } else {
                s.state = RunState::Finished;
            }
        });

        loop {
            match rx.recv() {
                Ok(Control::Shutdown) | Err(_) => return self.stopped(),
                Ok(c) => self.apply(c),
            }
        }
    }

    fn stopped(&self) {
        self.shared.hub.close();
        self.shared.update_status(|s| {
            if s.state != RunState::Failed {
                s.state = RunState::Stopped;
            }
        });
    }

    fn drain_controls(&mut self, rx: &Receiver<Control>) -> Flow {
        loop {
            match rx.try_recv() {
                Ok(Control::Shutdown) => return Flow::Stop,
                Ok(c) => self.apply(c),
                Err(TryRecvError::Empty) => return Flow::Continue,
                Err(TryRecvError::Disconnected) => return Flow::Continue,
            }
        }
    }

    fn apply(&mut self, control: Control) {
        match control {
            Control::SetThreshold { value, author, reply } => {
                let _ = reply.send(self.set_threshold(value, author));
            }
            Control::Label {
                event_id,
                class,
                operator,
                reply,
            } => {
                let _ = reply.send(self.label(event_id, class, operator));
            }
            Control::Shutdown => {}
        }
    }

    fn set_threshold(&mut self, value: f64, author: String) -> Result<ThresholdChange> {
        if !(value > 0.0 && value.is_finite()) {
            return Err(ServiceError::Validation(format!("threshold must be positive, got {value}")));
        }
        let previous = self.live.threshold();
        self.live.set_threshold(value)?;
        let change = ThresholdChange {
            at: Utc::now(),
            author,
            previous,
            value,
        };
        self.shared.store.write().append_threshold(change.clone())?;
        let mut model = self.shared.hub.model();
        model.threshold = value;
        self.shared.hub.set_model(model);
        self.shared.hub.publish(StreamRecord::Threshold(change.clone()));
        Ok(change)
    }

    fn label(&mut self, event_id: u64, class: AnomalyClass, operator: String) -> Result<LabelRecord> {
        if operator.trim().is_empty() {
            return Err(ServiceError::Validation("operator must be given".into()));
        }
        let record = LabelRecord {
            event_id,
            class_label: class,
            label_source: operator,
            labeled_at: Utc::now(),
        };
        self.shared.store.write().append_label(record.clone())?;
        self.shared.hub.publish(StreamRecord::Label(record.clone()));
        Ok(record)
    }

    fn account(&mut self, took: Duration, budget: Duration) {
        let l = &mut self.lateness;
        l.ticks += 1;
        self.total_tick += took;
        let ms = took.as_secs_f64() * 1e3;
        l.max_tick_ms = l.max_tick_ms.max(ms);
        l.mean_tick_ms = self.total_tick.as_secs_f64() * 1e3 / l.ticks as f64;
        if took > budget {
            l.overruns += 1;
            log::warn!("tick took {ms:.1} ms, over the {:?} budget", budget);
        }
    }

    fn tick(&mut self, sample: ChannelVector) -> Result<()> {
        let ts = sample.timestamp;
        let outputs = self.live.push(sample)?;
        for out in outputs {
            match out {
                LiveOutput::Score(s) => self.shared.hub.publish(StreamRecord::Score(ScoreRecord::from(&s))),
                LiveOutput::EventOpened {
                    event_id,
                    timestamp,
                    trigger_set,
                } => self.shared.hub.publish(StreamRecord::EventOpened {
                    event_id,
                    timestamp,
                    trigger_set,
                }),
                LiveOutput::EventClosed(event) => self.close_event(event)?,
            }
        }
        self.shared.hub.set_model(snapshot(&self.live, Some(ts)));
        let stats = self.live.stats();
        let lateness = self.lateness;
        let warm = self.live.is_warm();
        self.shared.update_status(|s| {
            s.detector = stats;
            s.lateness = lateness;
            s.state = if warm { RunState::Running } else { RunState::Warming };
        });
        Ok(())
    }

    fn close_event(&mut self, mut event: AnomalyEvent) -> Result<()> {
        let scores = event.feature_scores();
        let features = extract_features(&scores, event.threshold).ok();
        let prediction = match (&self.classifier, &features) {
            (Some(tree), Some(f)) => Some(tree.predict(&f.to_array())),
            _ => None,
        };
        if let Some(p) = &prediction {
            event.class_label = Some(p.class);
            event.label_source = Some(LabelSource::Model);
        }
        let record = EventRecord {
            event,
            features,
            prediction,
        };
        let view = EventView {
            model_label: record.event.class_label,
            operator: None,
            labels: Vec::new(),
            record: record.clone(),
        };
        let stored = {
            let mut store = self.shared.store.write();
            store.append_event(record)?;
            store.len()
        };
        self.shared.update_status(|s| s.events_stored = stored);
        self.shared.hub.publish(StreamRecord::EventClosed(Box::new(view)));
        Ok(())
    }

    fn flush(&mut self) {
        for event in self.live.finish() {
            if let Err(e) = self.close_event(event) {
                log::error!("could not store event at shutdown: {e}");
            }
        }
    }
}

/// Sends a control message and waits for its reply.
pub async fn request<T>(
    control: &Sender<Control>,
    make: impl FnOnce(oneshot::Sender<Result<T>>) -> Control,
) -> Result<T> {
    let (tx, rx) = oneshot::channel();
    control.send(make(tx)).map_err(|_| ServiceError::Stopped)?;
    rx.await.map_err(|_| ServiceError::Stopped)?
}

/// Blocking form of [`request`] for callers outside an async runtime.
pub fn request_blocking<T>(
    control: &Sender<Control>,
    make: impl FnOnce(oneshot::Sender<Result<T>>) -> Control,
) -> Result<T> {
    let (tx, rx) = oneshot::channel();
    control.send(make(tx)).map_err(|_| ServiceError::Stopped)?;
    rx.blocking_recv().map_err(|_| ServiceError::Stopped)?
}
