use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use super::{
    check_capacity, duration_ns, Completion, IoStats, ReadRequest, StatsRecorder, StorageBackend, StorageError,
    Submit,
};

/// Simulated device: `max_parallel` independent servers, each taking
/// `read_latency` per read, fed by a submitter that spends `request_overhead`
/// of its own CPU time on every submission.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub read_latency: Duration,
    pub max_parallel: usize,
    pub request_overhead: Duration,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { read_latency: Duration::from_micros(100), max_parallel: 32, request_overhead: Duration::from_micros(1) }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), StorageError> {
        if self.read_latency.is_zero() || self.max_parallel == 0 || self.request_overhead.is_zero() {
            return Err(StorageError::Config(format!("sim parameters must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Saturated throughput of the modelled device.
    pub fn peak_iops(&self) -> f64 {
        self.max_parallel as f64 / self.read_latency.as_secs_f64()
    }
}

struct Device {
    image: Box<[u8]>,
    config: SimConfig,
    stats: StatsRecorder,
    /// Time at which each server becomes idle.
    servers: Mutex<BinaryHeap<Reverse<u64>>>,
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Pending {
    done_ns: u64,
    seq: u64,
    submit_ns: u64,
    address: u64,
    length: u32,
    ticket: u64,
}

pub struct SimBackend {
    device: Arc<Device>,
    pending: Mutex<(BinaryHeap<Reverse<Pending>>, u64)>,
}

impl SimBackend {
    pub fn new(image: Vec<u8>, config: SimConfig, queue_capacity: usize) -> Result<Self, StorageError> {
        config.validate()?;
        check_capacity(queue_capacity)?;
        let servers = (0..config.max_parallel).map(|_| Reverse(0)).collect();
        Ok(Self {
            device: Arc::new(Device {
                image: image.into_boxed_slice(),
                config,
                stats: StatsRecorder::new(queue_capacity),
                servers: Mutex::new(servers),
            }),
            pending: Mutex::new((BinaryHeap::new(), 0)),
        })
    }

    pub fn config(&self) -> SimConfig {
        self.device.config
    }
}

fn spin_for(d: Duration) {
    let until = Instant::now() + d;
    while Instant::now() < until {
        std::hint::spin_loop();
    }
}

impl StorageBackend for SimBackend {
    fn submit_read(&self, req: ReadRequest) -> Result<Submit, StorageError> {
        req.validate(self.extent())?;
        let dev = &*self.device;
        if !dev.stats.try_acquire() {
            return Ok(Submit::Backpressure);
        }
        spin_for(dev.config.request_overhead);
        let submit_ns = dev.stats.now_ns();
        let done_ns = {
            let mut servers = dev.servers.lock().unwrap();
            let Reverse(free) = servers.pop().unwrap();
            let done = submit_ns.max(free) + duration_ns(dev.config.read_latency);
            servers.push(Reverse(done));
            done
        };
        let mut pending = self.pending.lock().unwrap();
        let seq = pending.1;
        pending.1 += 1;
        pending.0.push(Reverse(Pending {
            done_ns,
            seq,
            submit_ns,
            address: req.address,
            length: req.length,
            ticket: req.ticket,
        }));
        Ok(Submit::Accepted)
    }

    fn poll_completions(&self, max: usize, out: &mut Vec<Completion>) -> usize {
        let dev = &*self.device;
        let now = dev.stats.now_ns();
        let mut pending = self.pending.lock().unwrap();
        let mut n = 0;
        while n < max {
            match pending.0.peek() {
                Some(Reverse(p)) if p.done_ns <= now => {}
                _ => break,
            }
            let Reverse(p) = pending.0.pop().unwrap();
            let start = p.address as usize;
            let data = dev.image[start..start + p.length as usize].to_vec();
            dev.stats.complete(p.submit_ns, p.done_ns);
            out.push(Completion { ticket: p.ticket, data: Ok(data) });
            n += 1;
        }
        n
    }

    fn stats(&self) -> IoStats {
        self.device.stats.snapshot()
    }

    fn extent(&self) -> u64 {
        self.device.image.len() as u64
    }

    fn fork(&self) -> Box<dyn StorageBackend> {
        Box::new(Self { device: Arc::clone(&self.device), pending: Mutex::new((BinaryHeap::new(), 0)) })
    }

    fn name(&self) -> &'static str {
        "sim"
    }
}
