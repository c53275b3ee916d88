use std::fs::{File, OpenOptions};
use std::os::unix::fs::{FileExt, OpenOptionsExt};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;

use crossbeam::channel::{self, Receiver, Sender};

use super::{
    check_capacity, io_error, Completion, IoStats, ReadRequest, StatsRecorder, StorageBackend, StorageError, Submit,
};

const DIRECT_ALIGN: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FileOptions {
    pub io_threads: usize,
    /// Try to bypass the page cache; falls back to buffered reads when refused.
    pub direct: bool,
}

impl Default for FileOptions {
    fn default() -> Self {
        Self { io_threads: 8, direct: true }
    }
}

struct Segment {
    path: PathBuf,
    file: File,
    start: u64,
    len: u64,
    direct: bool,
}

struct Job {
    segment: usize,
    offset: u64,
    length: u32,
    ticket: u64,
    submit_ns: u64,
    reply: Sender<Done>,
}

struct Done {
    completion: Completion,
    submit_ns: u64,
    done_ns: u64,
}

struct Device {
    segments: Arc<Vec<Segment>>,
    stats: Arc<StatsRecorder>,
    jobs: Option<Sender<Job>>,
    workers: Vec<JoinHandle<()>>,
    extent: u64,
}

impl Drop for Device {
    fn drop(&mut self) {
        self.jobs.take();
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Reads from files placed back to back in the address space, served by a pool
/// of threads issuing positional reads.
pub struct FileBackend {
    device: Arc<Device>,
    reply: Sender<Done>,
    completions: Receiver<Done>,
}

fn open_segment(path: &PathBuf, start: u64, want_direct: bool) -> Result<Segment, StorageError> {
    let len = std::fs::metadata(path).map_err(|e| io_error(path, e))?.len();
    if want_direct {
        if let Ok(file) = OpenOptions::new().read(true).custom_flags(libc::O_DIRECT).open(path) {
            let mut buf = AlignedBuf::default();
            let probe = (len.min(512)) as usize;
            if probe == 0 || file.read_exact_at(buf.slice(probe), 0).is_ok() {
                return Ok(Segment { path: path.clone(), file, start, len, direct: true });
            }
        }
    }
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    Ok(Segment { path: path.clone(), file, start, len, direct: false })
}

#[derive(Default)]
struct AlignedBuf {
    raw: Vec<u8>,
}

impl AlignedBuf {
    fn slice(&mut self, len: usize) -> &mut [u8] {
        if self.raw.len() < len + DIRECT_ALIGN {
            self.raw.resize(len + DIRECT_ALIGN, 0);
        }
        let pad = self.raw.as_ptr().align_offset(DIRECT_ALIGN);
        &mut self.raw[pad..pad + len]
    }
}

fn worker(segments: Arc<Vec<Segment>>, stats: Arc<StatsRecorder>, jobs: Receiver<Job>) {
    let mut buf = AlignedBuf::default();
    for job in jobs {
        let seg = &segments[job.segment];
        let data = if seg.direct {
            let slice = buf.slice(job.length as usize);
            seg.file.read_exact_at(slice, job.offset).map(|_| slice.to_vec())
        } else {
            let mut v = vec![0u8; job.length as usize];
            seg.file.read_exact_at(&mut v, job.offset).map(|_| v)
        };
        let completion = Completion { ticket: job.ticket, data: data.map_err(|e| io_error(&seg.path, e)) };
        let _ = job.reply.send(Done { completion, submit_ns: job.submit_ns, done_ns: stats.now_ns() });
    }
}

impl FileBackend {
    pub fn open(paths: &[PathBuf], options: FileOptions, queue_capacity: usize) -> Result<Self, StorageError> {
        check_capacity(queue_capacity)?;
        if options.io_threads == 0 {
            return Err(StorageError::Config("io_threads must be positive".into()));
        }
        let mut segments = Vec::with_capacity(paths.len());
        let mut start = 0;
        for path in paths {
            let seg = open_segment(path, start, options.direct)?;
            if seg.len % super::SECTOR != 0 {
                return Err(StorageError::Config(format!("{} is not a multiple of 512 bytes", path.display())));
            }
            start += seg.len;
            segments.push(seg);
        }
        let segments = Arc::new(segments);
        let stats = Arc::new(StatsRecorder::new(queue_capacity));
        let (jobs_tx, jobs_rx) = channel::unbounded::<Job>();
        let workers = (0..options.io_threads)
            .map(|_| {
                let (s, st, rx) = (Arc::clone(&segments), Arc::clone(&stats), jobs_rx.clone());
                std::thread::spawn(move || worker(s, st, rx))
            })
            .collect();
        let (reply, completions) = channel::unbounded();
        Ok(Self {
            device: Arc::new(Device { segments, stats, jobs: Some(jobs_tx), workers, extent: start }),
            reply,
            completions,
        })
    }

    /// Whether every segment was opened for direct I/O.
    pub fn is_direct(&self) -> bool {
        self.device.segments.iter().all(|s| s.direct)
    }
}

impl StorageBackend for FileBackend {
    fn submit_read(&self, req: ReadRequest) -> Result<Submit, StorageError> {
        req.validate(self.extent())?;
        let dev = &*self.device;
        let segment = dev.segments.partition_point(|s| s.start + s.len <= req.address);
        let seg = &dev.segments[segment];
        if req.address + u64::from(req.length) > seg.start + seg.len {
            return Err(StorageError::SpansSegments { address: req.address, length: req.length });
        }
        if !dev.stats.try_acquire() {
            return Ok(Submit::Backpressure);
        }
        let job = Job {
            segment,
            offset: req.address - seg.start,
            length: req.length,
            ticket: req.ticket,
            submit_ns: dev.stats.now_ns(),
            reply: self.reply.clone(),
        };
        dev.jobs.as_ref().unwrap().send(job).expect("I/O pool alive while device is open");
        Ok(Submit::Accepted)
    }

    fn poll_completions(&self, max: usize, out: &mut Vec<Completion>) -> usize {
        let mut n = 0;
        while n < max {
            let Ok(done) = self.completions.try_recv() else { break };
            self.device.stats.complete(done.submit_ns, done.done_ns);
            out.push(done.completion);
            n += 1;
        }
        n
    }

    fn stats(&self) -> IoStats {
        self.device.stats.snapshot()
    }

    fn extent(&self) -> u64 {
        self.device.extent
    }

    fn fork(&self) -> Box<dyn StorageBackend> {
        let (reply, completions) = channel::unbounded();
        Box::new(Self { device: Arc::clone(&self.device), reply, completions })
    }

    fn name(&self) -> &'static str {
        "file"
    }
}
