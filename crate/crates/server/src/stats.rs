use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

/// Bound on retained latency samples; older samples are overwritten.
const MAX_SAMPLES: usize = 1 << 16;

/// Counters the load tests and the acceptance suite read back.
#[derive(Debug, Default)]
pub struct Stats {
    frames_ingested: AtomicU64,
    frames_stale: AtomicU64,
    previews_broadcast: AtomicU64,
    previews_dropped: AtomicU64,
    stitches: AtomicU64,
    ingest_us: Mutex<Samples>,
}

#[derive(Debug, Default)]
struct Samples {
    values: Vec<u32>,
    next: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StatsSnapshot {
    pub frames_ingested: u64,
    pub frames_stale: u64,
    pub previews_broadcast: u64,
    pub previews_dropped: u64,
    pub stitches: u64,
    /// 99th percentile of the time from a frame message being read off the
    /// socket to it being stored, in milliseconds.
    pub ingest_p99_ms: f64,
    pub ingest_max_ms: f64,
}

impl Stats {
    pub(crate) fn frame(&self, stored: bool, latency: Duration) {
        if stored {
            self.frames_ingested.fetch_add(1, Ordering::Relaxed);
        } else {
            self.frames_stale.fetch_add(1, Ordering::Relaxed);
        }
        let us = latency.as_micros().min(u32::MAX as u128) as u32;
        let mut s = self.ingest_us.lock().expect("stats lock");
        if s.values.len() < MAX_SAMPLES {
            s.values.push(us);
        } else {
            let i = s.next;
            s.values[i] = us;
            s.next = (i + 1) % MAX_SAMPLES;
        }
    }

    pub(crate) fn preview(&self, delivered: bool) {
        if delivered {
            self.previews_broadcast.fetch_add(1, Ordering::Relaxed);
        } else {
            self.previews_dropped.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub(crate) fn stitch(&self) {
        self.stitches.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> StatsSnapshot {
        let mut samples = self.ingest_us.lock().expect("stats lock").values.clone();
        samples.sort_unstable();
        let pick = |q: f64| {
            if samples.is_empty() {
                0.0
            } else {
                let i = ((samples.len() as f64 * q).ceil() as usize).clamp(1, samples.len()) - 1;
                samples[i] as f64 / 1e3
            }
        };
        StatsSnapshot {
            frames_ingested: self.frames_ingested.load(Ordering::Relaxed),
            frames_stale: self.frames_stale.load(Ordering::Relaxed),
            previews_broadcast: self.previews_broadcast.load(Ordering::Relaxed),
            previews_dropped: self.previews_dropped.load(Ordering::Relaxed),
            stitches: self.stitches.load(Ordering::Relaxed),
            ingest_p99_ms: pick(0.99),
            ingest_max_ms: pick(1.0),
        }
    }
}
