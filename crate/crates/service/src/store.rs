use std::collections::BTreeMap;
use std::path::Path;

use chrono::{DateTime, Utc};
use phasorwatch::detector::LabelSource;
use phasorwatch::features::{write_feature_csv, FeatureRow};
use phasorwatch::tree::Prediction;
use phasorwatch::{AnomalyClass, AnomalyEvent, FeatureVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::persist::{LogWriter, Recovery};

pub const EVENTS_FILE: &str = "events.ndjson";
pub const LABELS_FILE: &str = "labels.ndjson";
pub const JOURNAL_FILE: &str = "journal.ndjson";

/// A closed event as persisted: the detector's event with its features and
/// the model's prediction. `event.class_label` holds the model label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub event: AnomalyEvent,
    pub features: Option<FeatureVector>,
    pub prediction: Option<Prediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub event_id: u64,
    pub class_label: AnomalyClass,
    /// Operator identity.
    pub label_source: String,
    pub labeled_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChange {
    pub at: DateTime<Utc>,
    pub author: String,
    pub previous: f64,
    pub value: f64,
}

/// Event as served by the API: the stored record with the effective label
/// applied and the label history attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventView {
    #[serde(flatten)]
    pub record: EventRecord,
    pub model_label: Option<AnomalyClass>,
    pub operator: Option<String>,
    pub labels: Vec<LabelRecord>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreRecovery {
    pub events: usize,
    pub labels: usize,
    pub journal: usize,
    pub truncated_bytes: u64,
}

/// Event, label and journal logs of one persistence directory.
///
/// All mutation goes through one owner; readers get copies.
#[derive(Debug)]
pub struct EventStore {
    events_log: LogWriter<EventRecord>,
    labels_log: LogWriter<LabelRecord>,
    journal_log: LogWriter<ThresholdChange>,
    events: Vec<EventRecord>,
    index: BTreeMap<u64, usize>,
    labels: BTreeMap<u64, Vec<LabelRecord>>,
    journal: Vec<ThresholdChange>,
    recovery: StoreRecovery,
}

impl EventStore {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let (events_log, events, r1) = LogWriter::<EventRecord>::open(&dir.join(EVENTS_FILE))?;
        let (labels_log, label_list, r2) = LogWriter::<LabelRecord>::open(&dir.join(LABELS_FILE))?;
        let (journal_log, journal, r3) = LogWriter::<ThresholdChange>::open(&dir.join(JOURNAL_FILE))?;
        let total = |r: &[Recovery]| r.iter().map(|x| x.truncated_bytes).sum();
        let mut store = Self {
            events_log,
            labels_log,
            journal_log,
            index: BTreeMap::new(),
            labels: BTreeMap::new(),
            recovery: StoreRecovery {
                events: events.len(),
                labels: label_list.len(),
                journal: journal.len(),
                truncated_bytes: total(&[r1, r2, r3]),
            },
            events: Vec::new(),
            journal,
        };
        for e in events {
            store.index.insert(e.event.event_id, store.events.len());
            store.events.push(e);
        }
        for l in label_list {
            store.labels.entry(l.event_id).or_default().push(l);
        }
        Ok(store)
    }

    pub fn recovery(&self) -> StoreRecovery {
        self.recovery
    }

    /// Id after the largest persisted one.
    pub fn next_event_id(&self) -> u64 {
        self.index.keys().next_back().map_or(1, |id| id + 1)
    }

    pub fn append_event(&mut self, record: EventRecord) -> Result<()> {
        let id = record.event.event_id;
        if self.index.contains_key(&id) {
            return Err(ServiceError::Validation(format!("event {id} already stored")));
        }
        self.events_log.append(&record)?;
        self.index.insert(id, self.events.len());
        self.events.push(record);
        Ok(())
    }

    pub fn append_label(&mut self, label: LabelRecord) -> Result<()> {
        if !self.index.contains_key(&label.event_id) {
            return Err(ServiceError::NotFound(format!("event {}", label.event_id)));
        }
        self.labels_log.append(&label)?;
        self.labels.entry(label.event_id).or_default().push(label);
        Ok(())
    }

    pub fn append_threshold(&mut self, change: ThresholdChange) -> Result<()> {
        self.journal_log.append(&change)?;
        self.journal.push(change);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn journal(&self) -> &[ThresholdChange] {
        &self.journal
    }

    pub fn view(&self, id: u64) -> Option<EventView> {
        self.index.get(&id).map(|&i| self.make_view(&self.events[i]))
    }

    /// Events with id greater than `since`, in id order.
    pub fn views_since(&self, since: u64) -> Vec<EventView> {
        self.index
            .range(since.saturating_add(1)..)
            .map(|(_, &i)| self.make_view(&self.events[i]))
            .collect()
    }

    fn make_view(&self, r: &EventRecord) -> EventView {
        let history = self.labels.get(&r.event.event_id).cloned().unwrap_or_default();
        let model_label = r.event.class_label;
        let mut record = r.clone();
        let mut operator = None;
        if let Some(last) = history.last() {
            record.event.class_label = Some(last.class_label);
            record.event.label_source = Some(LabelSource::Operator);
            operator = Some(last.label_source.clone());
        }
        EventView {
            record,
            model_label,
            operator,
            labels: history,
        }
    }

    /// Training rows for every event with features; the latest operator
    /// label supersedes the model label.
    pub fn feature_rows(&self, operator_only: bool) -> Vec<FeatureRow> {
        self.events
            .iter()
            .filter_map(|r| {
                let features = r.features?;
                let op = self.labels.get(&r.event.event_id).and_then(|h| h.last());
                if operator_only && op.is_none() {
                    return None;
                }
                Some(FeatureRow {
                    event_id: r.event.event_id,
                    label: op.map(|l| l.class_label).or(r.event.class_label),
                    features,
                })
            })
            .collect()
    }

    pub fn export_features_csv(&self, operator_only: bool) -> String {
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &self.feature_rows(operator_only)).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}
