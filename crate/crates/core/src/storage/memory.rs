use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use super::{check_capacity, Completion, IoStats, ReadRequest, StatsRecorder, StorageBackend, StorageError, Submit};

/// Reads served straight from a byte image; completions are ready on the next poll.
pub struct MemoryBackend {
    image: Arc<[u8]>,
    stats: Arc<StatsRecorder>,
    ready: Mutex<VecDeque<(ReadRequest, u64)>>,
}

impl MemoryBackend {
    pub fn new(image: Vec<u8>, queue_capacity: usize) -> Result<Self, StorageError> {
        check_capacity(queue_capacity)?;
        Ok(Self {
            image: image.into(),
            stats: Arc::new(StatsRecorder::new(queue_capacity)),
            ready: Mutex::new(VecDeque::new()),
        })
    }
}

impl StorageBackend for MemoryBackend {
    fn submit_read(&self, req: ReadRequest) -> Result<Submit, StorageError> {
        req.validate(self.extent())?;
        if !self.stats.try_acquire() {
            return Ok(Submit::Backpressure);
        }
        self.ready.lock().unwrap().push_back((req, self.stats.now_ns()));
        Ok(Submit::Accepted)
    }

    fn poll_completions(&self, max: usize, out: &mut Vec<Completion>) -> usize {
        let mut ready = self.ready.lock().unwrap();
        let take = max.min(ready.len());
        for (req, submitted) in ready.drain(..take) {
            let start = req.address as usize;
            let data = self.image[start..start + req.length as usize].to_vec();
            self.stats.complete(submitted, self.stats.now_ns());
            out.push(Completion { ticket: req.ticket, data: Ok(data) });
        }
        take
    }

    fn stats(&self) -> IoStats {
        self.stats.snapshot()
    }

    fn extent(&self) -> u64 {
        self.image.len() as u64
    }

    fn fork(&self) -> Box<dyn StorageBackend> {
        Box::new(Self { image: Arc::clone(&self.image), stats: Arc::clone(&self.stats), ready: Mutex::new(VecDeque::new()) })
    }

    fn name(&self) -> &'static str {
        "memory"
    }
}
