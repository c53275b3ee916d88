//! Asynchronous random-read devices.
//!
//! Every backend exposes the same submit/poll interface over a flat byte address
//! space. Requests are 512-byte aligned. Submission never blocks: when the
//! device-wide in-flight set is full the caller gets [`Submit::Backpressure`] and
//! retries after draining completions.
//!
//! A backend handle owns a private completion queue. [`StorageBackend::fork`]
//! creates another handle on the same device (shared capacity and statistics)
//! so that concurrent workers never see each other's completions.

mod file;
mod memory;
mod sim;
mod stats;

use std::path::{Path, PathBuf};
use std::time::Duration;

use thiserror::Error;

pub use file::{FileBackend, FileOptions};
pub use memory::MemoryBackend;
pub use sim::{SimBackend, SimConfig};
pub use stats::{IoStats, StatsRecorder};

pub const SECTOR: u64 = 512;
pub const DEFAULT_QUEUE_CAPACITY: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadRequest {
    pub address: u64,
    pub length: u32,
    pub ticket: u64,
}

impl ReadRequest {
    pub fn new(address: u64, length: u32, ticket: u64) -> Self {
        Self { address, length, ticket }
    }

    pub fn validate(&self, extent: u64) -> Result<(), StorageError> {
        if self.length == 0 || u64::from(self.length) % SECTOR != 0 || self.address % SECTOR != 0 {
            return Err(StorageError::Misaligned { address: self.address, length: self.length });
        }
        if self.address.checked_add(u64::from(self.length)).is_none_or(|end| end > extent) {
            return Err(StorageError::OutOfRange { address: self.address, length: self.length, extent });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Submit {
    Accepted,
    Backpressure,
}

#[derive(Debug)]
pub struct Completion {
    pub ticket: u64,
    pub data: Result<Vec<u8>, StorageError>,
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("read at {address} of {length} bytes is not 512-byte aligned")]
    Misaligned { address: u64, length: u32 },
    #[error("read at {address} of {length} bytes exceeds device extent {extent}")]
    OutOfRange { address: u64, length: u32, extent: u64 },
    #[error("read at {address} of {length} bytes spans two segments")]
    SpansSegments { address: u64, length: u32 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

pub trait StorageBackend: Send + Sync {
    fn submit_read(&self, req: ReadRequest) -> Result<Submit, StorageError>;

    /// Moves up to `max` finished reads into `out`; returns how many were added.
    fn poll_completions(&self, max: usize, out: &mut Vec<Completion>) -> usize;

    fn stats(&self) -> IoStats;

    /// Size of the addressable space in bytes.
    fn extent(&self) -> u64;

    /// New handle on the same device with its own completion queue.
    fn fork(&self) -> Box<dyn StorageBackend>;

    fn name(&self) -> &'static str;
}

/// Blocking convenience read through the asynchronous interface.
pub fn read_blocking(backend: &dyn StorageBackend, address: u64, length: u32) -> Result<Vec<u8>, StorageError> {
    let ticket = u64::MAX;
    while backend.submit_read(ReadRequest::new(address, length, ticket))? == Submit::Backpressure {
        std::thread::yield_now();
    }
    let mut out = Vec::with_capacity(1);
    loop {
        out.clear();
        if backend.poll_completions(1, &mut out) == 1 {
            let c = out.pop().unwrap();
            debug_assert_eq!(c.ticket, ticket);
            return c.data;
        }
        std::hint::spin_loop();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BackendKind {
    #[default]
    Memory,
    File,
    Sim,
}

impl std::str::FromStr for BackendKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "memory" => Ok(Self::Memory),
            "file" => Ok(Self::File),
            "sim" => Ok(Self::Sim),
            other => Err(format!("unknown backend {other:?} (memory|file|sim)")),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub queue_capacity: usize,
    pub sim: SimConfig,
    pub file: FileOptions,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            kind: BackendKind::Memory,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            sim: SimConfig::default(),
            file: FileOptions::default(),
        }
    }
}

/// Opens a backend over files laid out back to back in the address space.
pub fn open_segments(config: &BackendConfig, segments: &[PathBuf]) -> Result<Box<dyn StorageBackend>, StorageError> {
    Ok(match config.kind {
        BackendKind::Memory => Box::new(MemoryBackend::new(load_segments(segments)?, config.queue_capacity)?),
        BackendKind::Sim => Box::new(SimBackend::new(load_segments(segments)?, config.sim, config.queue_capacity)?),
        BackendKind::File => Box::new(FileBackend::open(segments, config.file, config.queue_capacity)?),
    })
}

fn load_segments(segments: &[PathBuf]) -> Result<Vec<u8>, StorageError> {
    let mut image = Vec::new();
    for path in segments {
        let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
        image.extend_from_slice(&bytes);
    }
    Ok(image)
}

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> StorageError {
    StorageError::Io { context: path.display().to_string(), source }
}

pub(crate) fn check_capacity(capacity: usize) -> Result<(), StorageError> {
    if capacity == 0 {
        return Err(StorageError::Config("queue capacity must be positive".into()));
    }
    Ok(())
}

pub(crate) fn duration_ns(d: Duration) -> u64 {
    d.as_nanos().min(u128::from(u64::MAX)) as u64
}
