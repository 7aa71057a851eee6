//! Fan-out of stream records to subscribers.
//!
//! Each subscriber owns a queue. Score records beyond the queue capacity are
//! dropped and counted; every other record is always enqueued. A subscriber
//! starts with a snapshot of the current model and the recent score history,
//! taken under the same lock as publishing so nothing is missed or repeated
//! between the snapshot and the live records.

use std::collections::VecDeque;
use std::sync::{Arc, Weak};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use phasorwatch::detector::ScoreRecord;
use phasorwatch::{Mode, StandardizationParams, TriggerSet, VarModel};
use serde::{Deserialize, Serialize};
use tokio::sync::Notify;

use crate::store::{EventView, LabelRecord, ThresholdChange};

/// Current model state as served by `GET /model` and in snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSnapshot {
    pub warm: bool,
    pub mode: Mode,
    pub threshold: f64,
    /// Timestamp of the last processed sample.
    pub as_of: Option<DateTime<Utc>>,
    pub model: Option<VarModel>,
    pub standardization: Option<StandardizationParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamRecord {
    Snapshot {
        model: ModelSnapshot,
        scores: Vec<ScoreRecord>,
    },
    Score(ScoreRecord),
    EventOpened {
        event_id: u64,
        timestamp: DateTime<Utc>,
        trigger_set: TriggerSet,
    },
    EventClosed(Box<EventView>),
    Threshold(ThresholdChange),
    Label(LabelRecord),
    /// Total score records dropped for this subscriber so far.
    Dropped { scores: u64 },
    /// The input is exhausted; no further ticks follow.
    End,
}

#[derive(Debug, Default)]
struct QueueState {
    items: VecDeque<StreamRecord>,
    scores_queued: usize,
    dropped: u64,
    reported: u64,
    closed: bool,
}

#[derive(Debug)]
struct Queue {
    state: Mutex<QueueState>,
    notify: Notify,
    capacity: usize,
}

impl Queue {
    fn push(&self, record: StreamRecord) {
        let mut st = self.state.lock();
        if matches!(record, StreamRecord::Score(_)) {
            if st.scores_queued >= self.capacity {
                st.dropped += 1;
                return;
            }
            st.scores_queued += 1;
        }
        st.items.push_back(record);
        drop(st);
        self.notify.notify_one();
    }

    fn close(&self) {
        self.state.lock().closed = true;
        self.notify.notify_one();
    }

    fn pop(&self) -> Option<Option<StreamRecord>> {
        let mut st = self.state.lock();
        let snapshot_first = matches!(st.items.front(), Some(StreamRecord::Snapshot { .. }));
        if st.dropped > st.reported && !snapshot_first {
            st.reported = st.dropped;
            return Some(Some(StreamRecord::Dropped { scores: st.dropped }));
        }
        match st.items.pop_front() {
            Some(r) => {
                if matches!(r, StreamRecord::Score(_)) {
                    st.scores_queued -= 1;
                }
                Some(Some(r))
            }
            None if st.closed => Some(None),
            None => None,
        }
    }
}

/// Receiving end of one subscription. Dropping it unsubscribes.
#[derive(Debug)]
pub struct Subscription {
    queue: Arc<Queue>,
}

impl Subscription {
    /// Next record, waiting if none is queued; `None` once the hub is closed
    /// and the queue is drained.
    pub async fn recv(&self) -> Option<StreamRecord> {
        loop {
            let notified = self.queue.notify.notified();
            if let Some(r) = self.queue.pop() {
                return r;
            }
            notified.await;
        }
    }

    /// Next queued record without waiting.
    pub fn try_recv(&self) -> Option<StreamRecord> {
        self.queue.pop().flatten()
    }

    pub fn dropped(&self) -> u64 {
        self.queue.state.lock().dropped
    }
}

#[derive(Debug)]
struct HubState {
    subscribers: Vec<Weak<Queue>>,
    history: VecDeque<ScoreRecord>,
    model: ModelSnapshot,
    closed: bool,
}

#[derive(Debug)]
pub struct Hub {
    state: Mutex<HubState>,
    capacity: usize,
    history_len: usize,
}

impl Hub {
    /// `history_len` scores are kept for snapshots.
    pub fn new(capacity: usize, history_len: usize, model: ModelSnapshot) -> Self {
        Self {
            state: Mutex::new(HubState {
                subscribers: Vec::new(),
                history: VecDeque::with_capacity(history_len + 1),
                model,
                closed: false,
            }),
            capacity,
            history_len,
        }
    }

    pub fn subscribe(&self) -> Subscription {
        let queue = Arc::new(Queue {
            state: Mutex::new(QueueState::default()),
            notify: Notify::new(),
            capacity: self.capacity,
        });
        let mut st = self.state.lock();
        queue.state.lock().items.push_back(StreamRecord::Snapshot {
            model: st.model.clone(),
            scores: st.history.iter().cloned().collect(),
        });
        if st.closed {
            queue.close();
        } else {
            st.subscribers.push(Arc::downgrade(&queue));
        }
        Subscription { queue }
    }

    pub fn subscriber_count(&self) -> usize {
        let mut st = self.state.lock();
        st.subscribers.retain(|w| w.strong_count() > 0);
        st.subscribers.len()
    }

    pub fn set_model(&self, model: ModelSnapshot) {
        self.state.lock().model = model;
    }

    pub fn model(&self) -> ModelSnapshot {
        self.state.lock().model.clone()
    }

    pub fn publish(&self, record: StreamRecord) {
        let mut st = self.state.lock();
        if let StreamRecord::Score(s) = &record {
            st.history.push_back(s.clone());
            while st.history.len() > self.history_len {
                st.history.pop_front();
            }
        }
        st.subscribers.retain(|w| match w.upgrade() {
            Some(q) => {
                q.push(record.clone());
                true
            }
            None => false,
        });
    }

    /// Ends every subscription after its queue drains.
    pub fn close(&self) {
        let mut st = self.state.lock();
        st.closed = true;
        for q in st.subscribers.drain(..).filter_map(|w| w.upgrade()) {
            q.close();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use phasorwatch::synth::default_start;

    fn empty_model() -> ModelSnapshot {
        ModelSnapshot {
            warm: false,
            mode: Mode::Normal,
            threshold: 12.0,
            as_of: None,
            model: None,
            standardization: None,
        }
    }

    fn score(i: i64) -> StreamRecord {
        StreamRecord::Score(ScoreRecord {
            timestamp: default_start() + chrono::Duration::milliseconds(500 * i),
            mahalanobis: i as f64,
            cond_v: 0.0,
            cond_i: 0.0,
            cond_sin: 0.0,
            cond_f: 0.0,
        })
    }

    fn drain(s: &Subscription) -> Vec<StreamRecord> {
        std::iter::from_fn(|| s.try_recv()).collect()
    }

    #[test]
    fn ordered_delivery_after_snapshot() {
        let hub = Hub::new(1000, 10, empty_model());
        let sub = hub.subscribe();
        for i in 0..100 {
            hub.publish(score(i));
        }
        let got = drain(&sub);
        assert!(matches!(&got[0], StreamRecord::Snapshot { scores, .. } if scores.is_empty()));
        assert_eq!(&got[1..], &(0..100).map(score).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn late_join_gets_history() {
        let hub = Hub::new(1000, 10, empty_model());
        for i in 0..25 {
            hub.publish(score(i));
        }
        let sub = hub.subscribe();
        hub.publish(score(25));
        let got = drain(&sub);
        let StreamRecord::Snapshot { scores, .. } = &got[0] else {
            panic!("no snapshot")
        };
        assert_eq!(scores.len(), 10);
        assert_eq!(scores[0].mahalanobis, 15.0);
        assert_eq!(got[1], score(25));
    }

    #[test]
    fn slow_subscriber_drops_only_scores() {
        let hub = Hub::new(5, 10, empty_model());
        let sub = hub.subscribe();
        for i in 0..20 {
            hub.publish(score(i));
            if i % 4 == 0 {
                hub.publish(StreamRecord::End);
            }
        }
        let got = drain(&sub);
        assert_eq!(sub.dropped(), 15);
        assert_eq!(got[1], StreamRecord::Dropped { scores: 15 });
        let ends = got.iter().filter(|r| **r == StreamRecord::End).count();
        assert_eq!(ends, 5);
        let scores = got.iter().filter(|r| matches!(r, StreamRecord::Score(_))).count();
        assert_eq!(scores, 5);
    }

    #[test]
    fn dropped_subscription_is_released() {
        let hub = Hub::new(5, 10, empty_model());
        let a = hub.subscribe();
        let b = hub.subscribe();
        assert_eq!(hub.subscriber_count(), 2);
        drop(a);
        hub.publish(score(0));
        assert_eq!(hub.subscriber_count(), 1);
        drop(b);
        assert_eq!(hub.subscriber_count(), 0);
    }

    #[test]
    fn close_ends_stream() {
        let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
        let hub = Hub::new(5, 10, empty_model());
        let sub = hub.subscribe();
        hub.publish(score(1));
        hub.close();
        rt.block_on(async {
            assert!(matches!(sub.recv().await, Some(StreamRecord::Snapshot { .. })));
            assert_eq!(sub.recv().await, Some(score(1)));
            assert_eq!(sub.recv().await, None);
        });
    }
}
