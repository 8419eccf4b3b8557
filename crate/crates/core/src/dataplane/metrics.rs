//! Per-unit timing records, collected off the forwarding path.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketRecord {
    /// Time spent in parsing, extraction and lookup.
    pub processing_ns: u64,
    /// Time between the verdict and the start of the forward write.
    pub dequeue_ns: Option<u64>,
    pub tagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    pub mean_processing_ns: f64,
    pub max_processing_ns: u64,
    pub dequeue_count: usize,
    pub mean_dequeue_ns: f64,
    pub max_dequeue_ns: u64,
}

impl ClassStats {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a PacketRecord>) -> Self {
        let mut s = ClassStats::default();
        let (mut psum, mut dsum) = (0u128, 0u128);
        for r in records {
            s.count += 1;
            psum += u128::from(r.processing_ns);
            s.max_processing_ns = s.max_processing_ns.max(r.processing_ns);
            if let Some(d) = r.dequeue_ns {
                s.dequeue_count += 1;
                dsum += u128::from(d);
                s.max_dequeue_ns = s.max_dequeue_ns.max(d);
            }
        }
        if s.count > 0 {
            s.mean_processing_ns = psum as f64 / s.count as f64;
        }
        if s.dequeue_count > 0 {
            s.mean_dequeue_ns = dsum as f64 / s.dequeue_count as f64;
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub tagged: ClassStats,
    pub untagged: ClassStats,
}

impl MetricsSummary {
    pub fn from_records(records: &[PacketRecord]) -> Self {
        MetricsSummary {
            tagged: ClassStats::from_records(records.iter().filter(|r| r.tagged)),
            untagged: ClassStats::from_records(records.iter().filter(|r| !r.tagged)),
        }
    }
}

/// Cloneable handle used by forwarding tasks. Sending never blocks.
#[derive(Debug)]
pub struct EventSink<T> {
    tx: Sender<T>,
}

impl<T> Clone for EventSink<T> {
    fn clone(&self) -> Self {
        EventSink { tx: self.tx.clone() }
    }
}

impl<T> EventSink<T> {
    pub fn record(&self, event: T) {
        // a dropped collector only means nobody is listening any more
        let _ = self.tx.send(event);
    }
}

/// Receiving side of an [`EventSink`], drained on demand.
#[derive(Debug)]
pub struct EventLog<T> {
    rx: Mutex<Receiver<T>>,
    events: Mutex<Vec<T>>,
}

pub fn event_channel<T>() -> (EventSink<T>, EventLog<T>) {
    let (tx, rx) = channel();
    (
        EventSink { tx },
        EventLog {
            rx: Mutex::new(rx),
            events: Mutex::new(Vec::new()),
        },
    )
}

impl<T: Clone> EventLog<T> {
    fn drain(&self) -> std::sync::MutexGuard<'_, Vec<T>> {
        let rx = self.rx.lock().unwrap_or_else(|e| e.into_inner());
        let mut events = self.events.lock().unwrap_or_else(|e| e.into_inner());
        events.extend(rx.try_iter());
        events
    }

    pub fn events(&self) -> Vec<T> {
        self.drain().clone()
    }

    pub fn len(&self) -> usize {
        self.drain().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns and clears everything recorded so far.
    pub fn take(&self) -> Vec<T> {
        std::mem::take(&mut *self.drain())
    }
}

pub type MetricsSink = EventSink<PacketRecord>;
pub type MetricsCollector = EventLog<PacketRecord>;

pub fn metrics_channel() -> (MetricsSink, MetricsCollector) {
    event_channel()
}

impl EventLog<PacketRecord> {
    pub fn summary(&self) -> MetricsSummary {
        MetricsSummary::from_records(&self.drain())
    }
}
