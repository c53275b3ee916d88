use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::Serialize;

const LATENCY_SAMPLES: usize = 1 << 16;
const IOPS_WINDOW: Duration = Duration::from_secs(1);

/// Snapshot of device counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IoStats {
    pub submitted: u64,
    pub completed: u64,
    /// Submissions refused with backpressure.
    pub rejected: u64,
    /// Completions per second over the trailing one-second window.
    pub iops: f64,
    #[serde(with = "crate::engine::duration_ns")]
    pub mean_latency: Duration,
    #[serde(with = "crate::engine::duration_ns")]
    pub p95_latency: Duration,
    pub in_flight: usize,
    pub peak_in_flight: usize,
    pub capacity: usize,
}

#[derive(Debug)]
struct Inner {
    submitted: u64,
    completed: u64,
    rejected: u64,
    latency_sum_ns: u128,
    latencies: VecDeque<u64>,
    window: VecDeque<u64>,
    in_flight: usize,
    peak_in_flight: usize,
}

/// Device-wide in-flight accounting and latency/throughput statistics.
#[derive(Debug)]
pub struct StatsRecorder {
    origin: Instant,
    capacity: usize,
    inner: Mutex<Inner>,
}

impl StatsRecorder {
    pub fn new(capacity: usize) -> Self {
        Self {
            origin: Instant::now(),
            capacity,
            inner: Mutex::new(Inner {
                submitted: 0,
                completed: 0,
                rejected: 0,
                latency_sum_ns: 0,
                latencies: VecDeque::with_capacity(LATENCY_SAMPLES),
                window: VecDeque::new(),
                in_flight: 0,
                peak_in_flight: 0,
            }),
        }
    }

    pub fn origin(&self) -> Instant {
        self.origin
    }

    /// Nanoseconds since the recorder was created.
    pub fn now_ns(&self) -> u64 {
        super::duration_ns(self.origin.elapsed())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Reserves an in-flight slot; false means backpressure.
    pub fn try_acquire(&self) -> bool {
        let mut g = self.inner.lock().unwrap();
        if g.in_flight >= self.capacity {
            g.rejected += 1;
            return false;
        }
        g.in_flight += 1;
        g.submitted += 1;
        g.peak_in_flight = g.peak_in_flight.max(g.in_flight);
        true
    }

    /// Releases a slot for a read submitted at `submit_ns` that finished at `done_ns`.
    pub fn complete(&self, submit_ns: u64, done_ns: u64) {
        let mut g = self.inner.lock().unwrap();
        debug_assert!(g.in_flight > 0);
        g.in_flight -= 1;
        g.completed += 1;
        let latency = done_ns.saturating_sub(submit_ns);
        g.latency_sum_ns += u128::from(latency);
        if g.latencies.len() == LATENCY_SAMPLES {
            g.latencies.pop_front();
        }
        g.latencies.push_back(latency);
        let horizon = done_ns.saturating_sub(super::duration_ns(IOPS_WINDOW));
        while g.window.front().is_some_and(|&t| t < horizon) {
            g.window.pop_front();
        }
        g.window.push_back(done_ns);
    }

    pub fn snapshot(&self) -> IoStats {
        let g = self.inner.lock().unwrap();
        let mean_latency = if g.completed == 0 {
            Duration::ZERO
        } else {
            Duration::from_nanos((g.latency_sum_ns / u128::from(g.completed)) as u64)
        };
        let p95_latency = {
            let mut v: Vec<u64> = g.latencies.iter().copied().collect();
            if v.is_empty() {
                Duration::ZERO
            } else {
                let rank = ((v.len() as f64 * 0.95).ceil() as usize).clamp(1, v.len()) - 1;
                let (_, p, _) = v.select_nth_unstable(rank);
                Duration::from_nanos(*p)
            }
        };
        let iops = match (g.window.iter().min(), g.window.iter().max()) {
            (Some(&lo), Some(&hi)) if hi > lo => (g.window.len() - 1) as f64 * 1e9 / (hi - lo) as f64,
            _ => 0.0,
        };
        IoStats {
            submitted: g.submitted,
            completed: g.completed,
            rejected: g.rejected,
            iops,
            mean_latency,
            p95_latency,
            in_flight: g.in_flight,
            peak_in_flight: g.peak_in_flight,
            capacity: self.capacity,
        }
    }
}
