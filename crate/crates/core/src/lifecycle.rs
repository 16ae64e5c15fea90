//! Split capture/compute buffering with data shelf life.
//!
//! Producers [`Buffer::ingest`] records as they are captured; consumers
//! [`Buffer::drain`] them when compute is available. A record is valid while
//! `t_now − t_collect ≤ TTL(λ)`; expired records are purged by
//! [`Buffer::sweep`] or on contact during a drain, and never handed out.

use std::collections::VecDeque;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rgid::VarietyId;

/// Milliseconds on the (possibly virtual) clock.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub fn from_secs(s: u64) -> Self {
        Timestamp(s * 1000)
    }

    pub fn from_hours(h: u64) -> Self {
        Timestamp(h * 3_600_000)
    }

    pub fn millis(self) -> u64 {
        self.0
    }

    /// Elapsed time since `earlier`, zero if `earlier` is in the future.
    pub fn since(self, earlier: Timestamp) -> Duration {
        Duration::from_millis(self.0.saturating_sub(earlier.0))
    }
}

impl std::ops::Add<Duration> for Timestamp {
    type Output = Timestamp;

    fn add(self, d: Duration) -> Timestamp {
        Timestamp(self.0 + d.as_millis() as u64)
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

/// Manually advanced clock for deterministic runs.
#[derive(Debug, Default)]
pub struct VirtualClock {
    ms: AtomicU64,
}

impl VirtualClock {
    pub fn new(start: Timestamp) -> Self {
        Self {
            ms: AtomicU64::new(start.0),
        }
    }

    pub fn advance(&self, d: Duration) -> Timestamp {
        let add = d.as_millis() as u64;
        Timestamp(self.ms.fetch_add(add, Ordering::SeqCst) + add)
    }

    /// Move forward to `t`; never moves backwards.
    pub fn advance_to(&self, t: Timestamp) -> Timestamp {
        Timestamp(self.ms.fetch_max(t.0, Ordering::SeqCst).max(t.0))
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.ms.load(Ordering::SeqCst))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRecord<T> {
    pub id: String,
    pub payload: T,
    pub lambda: VarietyId,
    pub t_collect: Timestamp,
    /// Shelf life of this variety's data, copied from the dictionary at capture.
    pub ttl: Duration,
}

impl<T> DataRecord<T> {
    pub fn is_valid(&self, t_now: Timestamp) -> bool {
        t_now.since(self.t_collect) <= self.ttl
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub ingested: u64,
    pub drained: u64,
    pub purged: u64,
}

#[derive(Debug)]
pub enum Receipt<T> {
    Accepted,
    /// Buffer full; the record is handed back untouched.
    Backpressure(DataRecord<T>),
}

impl<T> Receipt<T> {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Receipt::Accepted)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurgeReport {
    pub t_now: Timestamp,
    pub purged_ids: Vec<String>,
    pub remaining: usize,
    pub fraction_invalid: f64,
}

#[derive(Debug)]
pub struct Drain<T> {
    pub records: Vec<DataRecord<T>>,
    pub purged_ids: Vec<String>,
}

#[derive(Debug)]
struct Inner<T> {
    queue: VecDeque<DataRecord<T>>,
    counters: Counters,
    last_now: Option<Timestamp>,
}

/// Bounded FIFO shared by producers and consumers. Each operation holds the
/// lock for its whole duration, so operations are linearizable and
/// `ingested = drained + purged + len` holds between operations.
#[derive(Debug)]
pub struct Buffer<T> {
    capacity: usize,
    inner: Mutex<Inner<T>>,
}

impl<T> Buffer<T> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::domain("buffer capacity must be positive"));
        }
        Ok(Self {
            capacity,
            inner: Mutex::new(Inner {
                queue: VecDeque::with_capacity(capacity.min(1 << 16)),
                counters: Counters::default(),
                last_now: None,
            }),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner<T>> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.lock().queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn counters(&self) -> Counters {
        self.lock().counters
    }

    pub fn ingest(&self, record: DataRecord<T>) -> Receipt<T> {
        let mut g = self.lock();
        if g.queue.len() >= self.capacity {
            return Receipt::Backpressure(record);
        }
        g.queue.push_back(record);
        g.counters.ingested += 1;
        Receipt::Accepted
    }

    /// Remove every record older than its TTL at `t_now`.
    pub fn sweep(&self, t_now: Timestamp) -> Result<PurgeReport> {
        let mut g = self.lock();
        if let Some(last) = g.last_now {
            if t_now < last {
                return Err(Error::Clock {
                    now_ms: t_now.0,
                    latest_ms: last.0,
                });
            }
        }
        if let Some(latest) = g.queue.iter().map(|r| r.t_collect).max() {
            if t_now < latest {
                return Err(Error::Clock {
                    now_ms: t_now.0,
                    latest_ms: latest.0,
                });
            }
        }
        g.last_now = Some(t_now);
        let considered = g.queue.len();
        let mut purged_ids = Vec::new();
        g.queue.retain(|r| {
            let keep = r.is_valid(t_now);
            if !keep {
                purged_ids.push(r.id.clone());
            }
            keep
        });
        g.counters.purged += purged_ids.len() as u64;
        let fraction_invalid = if considered == 0 {
            0.0
        } else {
            purged_ids.len() as f64 / considered as f64
        };
        Ok(PurgeReport {
            t_now,
            remaining: g.queue.len(),
            purged_ids,
            fraction_invalid,
        })
    }

    /// Take up to `max_batch` valid records, oldest first. Expired records met
    /// on the way are purged.
    pub fn drain(&self, max_batch: usize, t_now: Timestamp) -> Drain<T> {
        let mut g = self.lock();
        let mut records = Vec::with_capacity(max_batch.min(g.queue.len()));
        let mut purged_ids = Vec::new();
        while records.len() < max_batch {
            let Some(r) = g.queue.pop_front() else { break };
            if r.is_valid(t_now) {
                records.push(r);
            } else {
                purged_ids.push(r.id);
            }
        }
        g.counters.drained += records.len() as u64;
        g.counters.purged += purged_ids.len() as u64;
        Drain { records, purged_ids }
    }
}

/// Cost change from expired data: `−η · invalid / N`.
pub fn cost_delta(invalid_count: u64, n: u64, eta_cost: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::domain("N must be positive"));
    }
    if invalid_count > n {
        return Err(Error::domain("invalid count exceeds N"));
    }
    if !(eta_cost >= 0.0) {
        return Err(Error::domain("eta_cost must be nonnegative"));
    }
    if invalid_count == 0 {
        return Ok(0.0);
    }
    Ok(-eta_cost * invalid_count as f64 / n as f64)
}

/// Appends purge reports as JSON lines.
pub struct AuditLog<W: Write> {
    out: W,
}

impl<W: Write> AuditLog<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn append(&mut self, report: &PurgeReport) -> Result<()> {
        serde_json::to_writer(&mut self.out, report)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
