//! Query execution over a built index.
//!
//! [`run_batch`] drives the storage path: each worker interleaves up to `Q`
//! queries, issuing table and block reads asynchronously and examining
//! candidates as data arrives. [`MemoryIndex`] is an independent in-memory
//! implementation of the same search used as a correctness oracle.

mod query;
mod reference;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use thiserror::Error;

use crate::builder::index_paths;
use crate::dataset::Dataset;
use crate::format::{self, EntryLayout, FormatError, IndexManifest};
use crate::lsh::{euclidean, HashFamily, ParamSet, MIX_RULE, SAMPLER};
use crate::storage::{open_segments, BackendConfig, IoStats, StorageBackend, StorageError};

pub use query::{ann_query, rcnn_search, run_batch};
pub use reference::MemoryIndex;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("index: {0}")]
    Format(#[from] FormatError),
    #[error("index does not match dataset: {0}")]
    Mismatch(String),
    #[error("query {query}: {source}")]
    Storage {
        query: usize,
        #[source]
        source: StorageError,
    },
    #[error("storage: {0}")]
    Backend(#[from] StorageError),
    #[error("query {query}: corrupt index: {detail}")]
    Corrupt { query: usize, detail: String },
    #[error("invalid request: {0}")]
    Invalid(String),
}

/// An opened index: manifest, regenerated hash family and the resident dataset.
pub struct Index {
    dir: PathBuf,
    manifest: IndexManifest,
    dataset: Arc<Dataset>,
    family: HashFamily,
    layout: EntryLayout,
}

impl Index {
    pub fn open(dir: &Path, dataset: Arc<Dataset>) -> Result<Self, EngineError> {
        let (manifest_path, _, _) = index_paths(dir);
        let manifest = format::read_manifest(&manifest_path)?;
        if manifest.mix_rule != MIX_RULE || manifest.sampler != SAMPLER {
            return Err(EngineError::Mismatch(format!(
                "index hashed with {}/{}, this build implements {MIX_RULE}/{SAMPLER}",
                manifest.mix_rule, manifest.sampler
            )));
        }
        if dataset.checksum() != manifest.dataset_checksum {
            return Err(EngineError::Mismatch("dataset checksum differs from build".into()));
        }
        let layout = manifest.layout()?;
        let family = HashFamily::new(&manifest.params);
        Ok(Self { dir: dir.to_path_buf(), manifest, dataset, family, layout })
    }

    pub fn params(&self) -> &ParamSet {
        &self.manifest.params
    }

    pub fn manifest(&self) -> &IndexManifest {
        &self.manifest
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn family(&self) -> &HashFamily {
        &self.family
    }

    pub fn segments(&self) -> Vec<PathBuf> {
        let (_, tables, buckets) = index_paths(&self.dir);
        vec![tables, buckets]
    }

    pub fn open_backend(&self, config: &BackendConfig) -> Result<Box<dyn StorageBackend>, EngineError> {
        let backend = open_segments(config, &self.segments())?;
        if backend.extent() != self.manifest.device_len() {
            return Err(EngineError::Mismatch(format!(
                "device holds {} bytes, manifest describes {}",
                backend.extent(),
                self.manifest.device_len()
            )));
        }
        Ok(backend)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    pub id: u32,
    pub distance: f32,
}

impl Neighbor {
    /// Total order: distance, then id.
    pub fn cmp_key(&self, other: &Self) -> std::cmp::Ordering {
        self.distance.total_cmp(&other.distance).then(self.id.cmp(&other.id))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    /// Ascending by distance, ties by id.
    pub neighbors: Vec<Neighbor>,
    /// Fewer than `k` neighbors were found after the last radius.
    pub partial: bool,
    pub radii_searched: usize,
    pub table_reads: u64,
    pub block_reads: u64,
    /// Table reads that found an empty slot and so issued no block read.
    pub empty_slots: u64,
    /// Fingerprint-matching entries examined, summed over radii.
    pub candidates: u64,
    pub fingerprint_rejects: u64,
    #[serde(with = "duration_ns")]
    pub latency: Duration,
}

impl QueryResult {
    pub fn n_io(&self) -> u64 {
        self.table_reads + self.block_reads
    }

    /// Everything except timing, for cross-path comparisons.
    pub fn same_outcome(&self, other: &Self) -> bool {
        self.neighbors == other.neighbors
            && self.partial == other.partial
            && self.radii_searched == other.radii_searched
            && self.table_reads == other.table_reads
            && self.block_reads == other.block_reads
            && self.empty_slots == other.empty_slots
            && self.candidates == other.candidates
            && self.fingerprint_rejects == other.fingerprint_rejects
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RcnnReport {
    pub found: Option<Neighbor>,
    pub candidates: u64,
    pub n_io: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Concurrency {
    pub workers: usize,
    /// Queries kept in flight per worker. 1 selects synchronous issue: one read
    /// outstanding at a time.
    pub interleave: usize,
}

impl Default for Concurrency {
    fn default() -> Self {
        Self { workers: 1, interleave: 16 }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BatchStats {
    pub queries: usize,
    pub failed: usize,
    #[serde(with = "duration_ns")]
    pub wall_time: Duration,
    #[serde(with = "duration_ns")]
    pub mean_latency: Duration,
    #[serde(with = "duration_ns")]
    pub p95_latency: Duration,
    pub mean_radii: f64,
    pub mean_n_io: f64,
    pub mean_candidates: f64,
    pub qps: f64,
    pub io: IoStats,
}

pub struct BatchResult {
    pub results: Vec<Result<QueryResult, EngineError>>,
    pub stats: BatchStats,
}

impl BatchStats {
    pub fn from_results(results: &[Result<QueryResult, EngineError>], wall_time: Duration, io: IoStats) -> Self {
        let ok: Vec<&QueryResult> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
        let m = ok.len().max(1) as f64;
        let mut lat: Vec<Duration> = ok.iter().map(|r| r.latency).collect();
        lat.sort();
        let p95 = if lat.is_empty() { Duration::ZERO } else { lat[((lat.len() as f64 * 0.95).ceil() as usize).clamp(1, lat.len()) - 1] };
        Self {
            queries: results.len(),
            failed: results.len() - ok.len(),
            wall_time,
            mean_latency: lat.iter().sum::<Duration>().checked_div(ok.len().max(1) as u32).unwrap_or_default(),
            p95_latency: p95,
            mean_radii: ok.iter().map(|r| r.radii_searched as f64).sum::<f64>() / m,
            mean_n_io: ok.iter().map(|r| r.n_io() as f64).sum::<f64>() / m,
            mean_candidates: ok.iter().map(|r| r.candidates as f64).sum::<f64>() / m,
            qps: if wall_time.is_zero() { 0.0 } else { results.len() as f64 / wall_time.as_secs_f64() },
            io,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CandidateCheck {
    Accepted(f32),
    FingerprintReject,
}

/// Fingerprint filter followed by the exact distance for accepted entries.
pub fn check_candidate(
    q: &[f32],
    dataset: &Dataset,
    entry: (u32, u32),
    expected_fp: u32,
) -> Result<CandidateCheck, String> {
    let (id, fp) = entry;
    if fp != expected_fp {
        return Ok(CandidateCheck::FingerprintReject);
    }
    if id as usize >= dataset.n() {
        return Err(format!("object id {id} out of range for n = {}", dataset.n()));
    }
    Ok(CandidateCheck::Accepted(euclidean(q, dataset.row(id as usize))))
}

pub(crate) mod duration_ns {
    use serde::Serializer;
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_nanos() as u64)
    }
}
