//! Index construction and offline auditing.
//!
//! The build makes one pass per `(radius, table)` pair: hash every object,
//! counting-sort by table key (stable, so chains keep dataset order), then emit
//! each chain as consecutive blocks. Tables and buckets are streamed to disk and
//! the manifest is written last; a directory without a manifest is not an index.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::format::{
    self, key_bits_for, split_hash, BlockView, EntryLayout, FormatError, IndexManifest, BLOCK_CAPACITY, BLOCK_SIZE,
    BUCKETS_FILE, FORMAT_VERSION, HASH_BITS, MANIFEST_FILE, NULL_ADDR, SLOT_SIZE, TABLES_FILE,
};
use crate::lsh::{compute_params, HashFamily, LshError, ParamSet, MIX_RULE, SAMPLER};

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("dataset does not match parameters: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Lsh(#[from] LshError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BuildError + '_ {
    move |source| BuildError::Io { context: path.display().to_string(), source }
}

/// Parameters for `dataset`, taking `x_max` from the data unless overridden.
pub fn params_for(
    dataset: &Dataset,
    c: f64,
    w: f64,
    gamma: f64,
    x_max: Option<f64>,
    seed: u64,
) -> Result<ParamSet, LshError> {
    let x_max = x_max.unwrap_or_else(|| f64::from(dataset.x_max()).max(f64::MIN_POSITIVE));
    compute_params(dataset.n() as u64, dataset.d(), c, w, gamma, x_max, seed)
}

/// Table keys and fingerprints of every object for one `(radius, table)` pair.
pub fn pass_hashes(family: &HashFamily, params: &ParamSet, dataset: &Dataset, radius: usize, table: usize, u: u32) -> Vec<(u32, u32)> {
    let g = family.compound(radius, table);
    let scale = params.radius(radius) as f32;
    (0..dataset.n())
        .into_par_iter()
        .with_min_len(256)
        .map(|i| split_hash(g.hash_scaled(dataset.row(i), scale).0, u))
        .collect()
}

/// Stable counting sort of object ids by key: `(offsets, ids)` in CSR form.
pub fn group_by_key(hashes: &[(u32, u32)], u: u32) -> (Vec<u32>, Vec<u32>) {
    let slots = 1usize << u;
    let mut offsets = vec![0u32; slots + 1];
    for &(k, _) in hashes {
        offsets[k as usize + 1] += 1;
    }
    for i in 0..slots {
        offsets[i + 1] += offsets[i];
    }
    let mut cursor = offsets.clone();
    let mut ids = vec![0u32; hashes.len()];
    for (id, &(k, _)) in hashes.iter().enumerate() {
        ids[cursor[k as usize] as usize] = id as u32;
        cursor[k as usize] += 1;
    }
    (offsets, ids)
}

struct HashingWriter {
    inner: BufWriter<File>,
    hasher: Sha256,
    written: u64,
}

impl HashingWriter {
    fn create(path: &Path) -> Result<Self, BuildError> {
        let file = File::create(path).map_err(io_err(path))?;
        Ok(Self { inner: BufWriter::with_capacity(1 << 20, file), hasher: Sha256::new(), written: 0 })
    }

    fn put(&mut self, bytes: &[u8], path: &Path) -> Result<(), BuildError> {
        self.hasher.update(bytes);
        self.written += bytes.len() as u64;
        self.inner.write_all(bytes).map_err(io_err(path))
    }

    fn finish(mut self, path: &Path) -> Result<(u64, String), BuildError> {
        self.inner.flush().map_err(io_err(path))?;
        self.inner.get_ref().sync_all().map_err(io_err(path))?;
        Ok((self.written, hex::encode(self.hasher.finalize())))
    }
}

pub fn index_paths(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    (dir.join(MANIFEST_FILE), dir.join(TABLES_FILE), dir.join(BUCKETS_FILE))
}

pub fn build_index(dataset: &Dataset, params: &ParamSet, out_dir: &Path) -> Result<IndexManifest, BuildError> {
    if dataset.is_empty() {
        return Err(BuildError::Mismatch("empty dataset".into()));
    }
    if dataset.n() as u64 != params.n || dataset.d() != params.d {
        return Err(BuildError::Mismatch(format!(
            "dataset is {}x{}, parameters expect {}x{}",
            dataset.n(),
            dataset.d(),
            params.n,
            params.d
        )));
    }
    if params.n > u64::from(u32::MAX) {
        return Err(BuildError::Mismatch("more than 2^32 - 1 objects".into()));
    }
    let u = key_bits_for(params.n);
    let v = HASH_BITS;
    let layout = EntryLayout::new(params.n, u, v)?;
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let (manifest_path, tables_path, buckets_path) = index_paths(out_dir);
    match std::fs::remove_file(&manifest_path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(io_err(&manifest_path)(e)),
        _ => {}
    }

    let family = HashFamily::new(params);
    let table_len = format::table_bytes(u);
    let passes = params.table_count();
    let bucket_offset = passes as u64 * table_len;
    let mut tables = HashingWriter::create(&tables_path)?;
    let mut buckets = HashingWriter::create(&buckets_path)?;
    let mut table_offsets = Vec::with_capacity(passes);
    let mut next_block = 0u64;
    let mut slots = vec![NULL_ADDR; 1 << u];
    let mut block = [0u8; BLOCK_SIZE];

    for ri in 0..params.r {
        for l in 0..params.l {
            let hashes = pass_hashes(&family, params, dataset, ri, l, u);
            let (offsets, ids) = group_by_key(&hashes, u);
            slots.fill(NULL_ADDR);
            for key in 0..1usize << u {
                let members = &ids[offsets[key] as usize..offsets[key + 1] as usize];
                if members.is_empty() {
                    continue;
                }
                slots[key] = bucket_offset + next_block * BLOCK_SIZE as u64;
                let chunks = members.chunks(BLOCK_CAPACITY);
                let last = chunks.len() - 1;
                for (bi, chunk) in chunks.enumerate() {
                    next_block += 1;
                    let next = if bi == last { NULL_ADDR } else { bucket_offset + next_block * BLOCK_SIZE as u64 };
                    block.fill(0);
                    block[0..8].copy_from_slice(&next.to_le_bytes());
                    block[8..10].copy_from_slice(&(chunk.len() as u16).to_le_bytes());
                    for (i, &id) in chunk.iter().enumerate() {
                        let at = format::HEADER_SIZE + i * format::ENTRY_SIZE;
                        let word = layout.pack(id, hashes[id as usize].1);
                        block[at..at + format::ENTRY_SIZE].copy_from_slice(&format::word_to_bytes(word));
                    }
                    buckets.put(&block, &buckets_path)?;
                }
            }
            table_offsets.push(tables.written);
            let bytes: Vec<u8> = slots.iter().flat_map(|a| a.to_le_bytes()).collect();
            tables.put(&bytes, &tables_path)?;
        }
    }
    let (tables_len, tables_checksum) = tables.finish(&tables_path)?;
    let (bucket_len, buckets_checksum) = buckets.finish(&buckets_path)?;
    debug_assert_eq!(tables_len, bucket_offset);

    let manifest = IndexManifest {
        version: FORMAT_VERSION,
        params: params.clone(),
        u,
        v,
        mix_rule: MIX_RULE.into(),
        sampler: SAMPLER.into(),
        key_order: format::KEY_ORDER.into(),
        placement: format::PLACEMENT.into(),
        table_offsets,
        bucket_offset,
        bucket_len,
        dataset_checksum: dataset.checksum(),
        tables_checksum,
        buckets_checksum,
    };
    format::write_manifest(&manifest_path, &manifest)?;
    Ok(manifest)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AuditReport {
    pub violations: Vec<String>,
    pub total_blocks: u64,
    pub total_entries: u64,
    /// Chain length in blocks -> number of chains.
    pub chain_length_histogram: BTreeMap<u64, u64>,
    pub empty_slot_fraction: f64,
    pub min_memberships: u64,
    pub max_memberships: u64,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

const MAX_VIOLATIONS: usize = 1000;

struct Audit {
    report: AuditReport,
}

impl Audit {
    fn flag(&mut self, msg: String) {
        if self.report.violations.len() < MAX_VIOLATIONS {
            self.report.violations.push(msg);
        }
    }
}

fn sha256_file(path: &Path) -> Result<String, BuildError> {
    let mut f = File::open(path).map_err(io_err(path))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).map_err(io_err(path))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Re-derives every membership and walks every chain of a built index.
pub fn verify_index(index_dir: &Path, dataset: &Dataset) -> Result<AuditReport, BuildError> {
    let (manifest_path, tables_path, buckets_path) = index_paths(index_dir);
    let manifest = format::read_manifest(&manifest_path)?;
    let params = &manifest.params;
    let mut audit = Audit { report: AuditReport::default() };

    if dataset.checksum() != manifest.dataset_checksum {
        audit.flag("dataset checksum differs from the one recorded at build time".into());
    }
    if sha256_file(&tables_path)? != manifest.tables_checksum {
        audit.flag(format!("{TABLES_FILE} checksum mismatch"));
    }
    if sha256_file(&buckets_path)? != manifest.buckets_checksum {
        audit.flag(format!("{BUCKETS_FILE} checksum mismatch"));
    }
    if dataset.n() as u64 != params.n || dataset.d() != params.d {
        audit.flag(format!("dataset is {}x{}, index expects {}x{}", dataset.n(), dataset.d(), params.n, params.d));
        return Ok(audit.report);
    }

    let tables = std::fs::read(&tables_path).map_err(io_err(&tables_path))?;
    let buckets = std::fs::read(&buckets_path).map_err(io_err(&buckets_path))?;
    if tables.len() as u64 != manifest.tables_len() || tables.len() as u64 != manifest.bucket_offset {
        audit.flag(format!("{TABLES_FILE} is {} bytes, manifest implies {}", tables.len(), manifest.tables_len()));
        return Ok(audit.report);
    }
    if buckets.len() as u64 != manifest.bucket_len || buckets.len() % BLOCK_SIZE != 0 {
        audit.flag(format!("{BUCKETS_FILE} is {} bytes, manifest says {}", buckets.len(), manifest.bucket_len));
        return Ok(audit.report);
    }

    let u = manifest.u;
    let layout = manifest.layout()?;
    let family = HashFamily::new(params);
    let n = dataset.n();
    let total_blocks = buckets.len() / BLOCK_SIZE;
    let mut block_owner = vec![false; total_blocks];
    let mut memberships = vec![0u64; n];
    let mut empty_slots = 0u64;
    let mut seen_in_pass = vec![u32::MAX; n];

    for ri in 0..params.r {
        for l in 0..params.l {
            let pass = (ri * params.l + l) as u32;
            let hashes = pass_hashes(&family, params, dataset, ri, l, u);
            let base = manifest.table_offset(ri, l) as usize;
            let mut pass_entries = 0u64;
            for key in 0..1usize << u {
                let at = base + key * SLOT_SIZE;
                let mut addr = u64::from_le_bytes(tables[at..at + SLOT_SIZE].try_into().unwrap());
                if addr == NULL_ADDR {
                    empty_slots += 1;
                    continue;
                }
                let mut chain_blocks = 0u64;
                while addr != NULL_ADDR {
                    let rel = addr.wrapping_sub(manifest.bucket_offset);
                    if addr < manifest.bucket_offset || rel >= manifest.bucket_len || rel % BLOCK_SIZE as u64 != 0 {
                        audit.flag(format!("pass ({ri},{l}) key {key}: bad block address {addr}"));
                        break;
                    }
                    let bi = (rel / BLOCK_SIZE as u64) as usize;
                    if std::mem::replace(&mut block_owner[bi], true) {
                        audit.flag(format!("pass ({ri},{l}) key {key}: block {bi} reached twice (cycle or shared)"));
                        break;
                    }
                    chain_blocks += 1;
                    let bytes = &buckets[bi * BLOCK_SIZE..(bi + 1) * BLOCK_SIZE];
                    let view = match BlockView::new(bytes) {
                        Ok(v) => v,
                        Err(e) => {
                            audit.flag(format!("block {bi}: {e}"));
                            break;
                        }
                    };
                    if view.count() == 0 {
                        audit.flag(format!("block {bi}: empty block in chain"));
                    }
                    if view.padding().iter().any(|&b| b != 0) || view.tail().iter().any(|&b| b != 0) {
                        audit.flag(format!("block {bi}: nonzero padding"));
                    }
                    for word in view.words() {
                        pass_entries += 1;
                        if word & layout.padding_mask() != 0 {
                            audit.flag(format!("block {bi}: nonzero entry padding bits"));
                        }
                        let (id, fp) = layout.unpack(word);
                        let Some(&(want_key, want_fp)) = hashes.get(id as usize) else {
                            audit.flag(format!("block {bi}: object id {id} out of range"));
                            continue;
                        };
                        if want_key as usize != key || want_fp != fp {
                            audit.flag(format!("pass ({ri},{l}): object {id} stored under key {key}/{fp:#x}, hashes to {want_key}/{want_fp:#x}"));
                            continue;
                        }
                        if seen_in_pass[id as usize] == pass {
                            audit.flag(format!("pass ({ri},{l}): object {id} stored twice"));
                            continue;
                        }
                        seen_in_pass[id as usize] = pass;
                        memberships[id as usize] += 1;
                    }
                    addr = view.next();
                }
                *audit.report.chain_length_histogram.entry(chain_blocks).or_default() += 1;
            }
            if pass_entries != n as u64 {
                audit.flag(format!("pass ({ri},{l}): {pass_entries} entries, expected {n}"));
            }
            audit.report.total_entries += pass_entries;
        }
    }
    let orphans = block_owner.iter().filter(|&&b| !b).count();
    if orphans > 0 {
        audit.flag(format!("{orphans} blocks not reachable from any table"));
    }
    let expected = params.table_count() as u64;
    let missing = memberships.iter().filter(|&&m| m != expected).count();
    if missing > 0 {
        audit.flag(format!("{missing} objects without exactly {expected} memberships"));
    }
    audit.report.total_blocks = total_blocks as u64;
    audit.report.empty_slot_fraction = empty_slots as f64 / (params.table_count() as f64 * (1u64 << u) as f64);
    audit.report.min_memberships = memberships.iter().copied().min().unwrap_or(0);
    audit.report.max_memberships = memberships.iter().copied().max().unwrap_or(0);
    Ok(audit.report)
}
