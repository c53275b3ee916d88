//! On-storage layout: 512-byte bucket blocks, 5-byte object-info entries, dense
//! hash tables of 8-byte addresses and the text manifest tying them together.
//!
//! All integers are little-endian with fixed widths. A bucket block is
//!
//! ```text
//! offset  size  field
//! 0       8     next block address (u64::MAX terminates the chain)
//! 8       2     number of valid entries (0..=99)
//! 10      6     reserved, zero
//! 16      495   99 entries x 5 bytes
//! 511     1     zero
//! ```
//!
//! An entry packs `fingerprint` into the high bits of a 40-bit word and the object
//! id into the low `ceil(log2 n)` bits. A table is `2^u` addresses; the table
//! key is the high `u` bits of the 32-bit compound hash and the fingerprint is
//! the remaining low bits.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lsh::{HashValue32, ParamSet};

pub const BLOCK_SIZE: usize = 512;
pub const HEADER_SIZE: usize = 16;
pub const ENTRY_SIZE: usize = 5;
pub const BLOCK_CAPACITY: usize = (BLOCK_SIZE - HEADER_SIZE) / ENTRY_SIZE;
pub const SLOT_SIZE: usize = 8;
/// End-of-chain / empty-slot address.
pub const NULL_ADDR: u64 = u64::MAX;
/// Width of the compound hash value in bits.
pub const HASH_BITS: u32 = 32;
pub const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const TABLES_FILE: &str = "tables.bin";
pub const BUCKETS_FILE: &str = "buckets.bin";

const MANIFEST_MAGIC: &str = "# e2lshos index manifest";

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("object id {id} out of range for n = {n}")]
    IdOutOfRange { id: u64, n: u64 },
    #[error("fingerprint {fp:#x} does not fit in {bits} bits")]
    FingerprintOutOfRange { fp: u32, bits: u32 },
    #[error("entry needs {0} bits, more than 40")]
    EntryTooWide(u32),
    #[error("key width u = {0} outside 1..=32")]
    KeyWidth(u32),
    #[error("block holds at most {BLOCK_CAPACITY} entries, got {0}")]
    BlockCapacity(usize),
    #[error("block must be {BLOCK_SIZE} bytes, got {0}")]
    BlockLength(usize),
    #[error("manifest checksum mismatch")]
    ManifestChecksum,
    #[error("unsupported manifest version {found}, expected {FORMAT_VERSION}")]
    Version { found: u32 },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FormatError>;

pub fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

/// Table key width for a dataset of `n` objects.
pub fn key_bits_for(n: u64) -> u32 {
    let floor_log2 = if n == 0 { 0 } else { 63 - n.leading_zeros() };
    floor_log2.saturating_sub(2).clamp(8, HASH_BITS)
}

/// Bit widths of the two fields of an object-info entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EntryLayout {
    pub id_bits: u32,
    pub fp_bits: u32,
}

impl EntryLayout {
    pub fn new(n: u64, u: u32, v: u32) -> Result<Self> {
        if u == 0 || u > v || v > HASH_BITS {
            return Err(FormatError::KeyWidth(u));
        }
        let id_bits = ceil_log2(n);
        let fp_bits = v - u;
        if id_bits + fp_bits > 40 {
            return Err(FormatError::EntryTooWide(id_bits + fp_bits));
        }
        Ok(Self { id_bits, fp_bits })
    }

    #[inline]
    pub fn pack(&self, id: u32, fp: u32) -> u64 {
        let fp_part = if self.fp_bits == 0 { 0 } else { u64::from(fp) << (40 - self.fp_bits) };
        fp_part | u64::from(id)
    }

    #[inline]
    pub fn unpack(&self, word: u64) -> (u32, u32) {
        let fp = if self.fp_bits == 0 { 0 } else { (word >> (40 - self.fp_bits)) as u32 };
        let id = (word & ((1u64 << self.id_bits) - 1)) as u32;
        (id, fp)
    }

    /// Bits between the id and the fingerprint that must be zero.
    pub fn padding_mask(&self) -> u64 {
        let used_low = (1u64 << self.id_bits) - 1;
        let used_high = if self.fp_bits == 0 { 0 } else { ((1u64 << self.fp_bits) - 1) << (40 - self.fp_bits) };
        ((1u64 << 40) - 1) & !used_low & !used_high
    }
}

/// Packs one object-info entry into its 5-byte little-endian form.
pub fn pack_object_info(id: u64, fingerprint: u32, n: u64, u: u32, v: u32) -> Result<[u8; ENTRY_SIZE]> {
    let layout = EntryLayout::new(n, u, v)?;
    if id >= n {
        return Err(FormatError::IdOutOfRange { id, n });
    }
    if layout.fp_bits < 32 && u64::from(fingerprint) >> layout.fp_bits != 0 {
        return Err(FormatError::FingerprintOutOfRange { fp: fingerprint, bits: layout.fp_bits });
    }
    Ok(word_to_bytes(layout.pack(id as u32, fingerprint)))
}

pub fn unpack_object_info(bytes: [u8; ENTRY_SIZE], n: u64, u: u32, v: u32) -> Result<(u64, u32)> {
    let layout = EntryLayout::new(n, u, v)?;
    let (id, fp) = layout.unpack(bytes_to_word(&bytes));
    Ok((u64::from(id), fp))
}

#[inline]
pub fn word_to_bytes(word: u64) -> [u8; ENTRY_SIZE] {
    let b = word.to_le_bytes();
    [b[0], b[1], b[2], b[3], b[4]]
}

#[inline]
pub fn bytes_to_word(bytes: &[u8]) -> u64 {
    let mut b = [0u8; 8];
    b[..ENTRY_SIZE].copy_from_slice(&bytes[..ENTRY_SIZE]);
    u64::from_le_bytes(b)
}

/// Splits a hash value into `(table key, fingerprint)`.
pub fn table_key_and_fingerprint(h: HashValue32, u: u32) -> Result<(u32, u32)> {
    if u == 0 || u > HASH_BITS {
        return Err(FormatError::KeyWidth(u));
    }
    Ok(split_hash(h.0, u))
}

#[inline]
pub fn split_hash(h: u32, u: u32) -> (u32, u32) {
    if u == HASH_BITS {
        (h, 0)
    } else {
        (h >> (HASH_BITS - u), h & ((1u32 << (HASH_BITS - u)) - 1))
    }
}

pub fn reconstruct_hash(key: u32, fp: u32, u: u32) -> HashValue32 {
    if u == HASH_BITS {
        HashValue32(key)
    } else {
        HashValue32((key << (HASH_BITS - u)) | fp)
    }
}

/// Decoded bucket block. Entries are packed 40-bit words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BucketBlock {
    pub next: u64,
    pub entries: Vec<u64>,
}

impl Default for BucketBlock {
    fn default() -> Self {
        Self { next: NULL_ADDR, entries: Vec::new() }
    }
}

impl BucketBlock {
    pub fn push(&mut self, word: u64) -> Result<()> {
        if self.entries.len() >= BLOCK_CAPACITY {
            return Err(FormatError::BlockCapacity(self.entries.len() + 1));
        }
        self.entries.push(word);
        Ok(())
    }

    pub fn is_full(&self) -> bool {
        self.entries.len() == BLOCK_CAPACITY
    }
}

pub fn encode_block(block: &BucketBlock) -> Result<[u8; BLOCK_SIZE]> {
    let mut out = [0u8; BLOCK_SIZE];
    encode_block_into(block, &mut out)?;
    Ok(out)
}

pub fn encode_block_into(block: &BucketBlock, out: &mut [u8]) -> Result<()> {
    if out.len() != BLOCK_SIZE {
        return Err(FormatError::BlockLength(out.len()));
    }
    if block.entries.len() > BLOCK_CAPACITY {
        return Err(FormatError::BlockCapacity(block.entries.len()));
    }
    out.fill(0);
    out[0..8].copy_from_slice(&block.next.to_le_bytes());
    out[8..10].copy_from_slice(&(block.entries.len() as u16).to_le_bytes());
    for (i, &word) in block.entries.iter().enumerate() {
        let at = HEADER_SIZE + i * ENTRY_SIZE;
        out[at..at + ENTRY_SIZE].copy_from_slice(&word_to_bytes(word));
    }
    Ok(())
}

pub fn decode_block(bytes: &[u8]) -> Result<BucketBlock> {
    let view = BlockView::new(bytes)?;
    Ok(BucketBlock { next: view.next(), entries: view.words().collect() })
}

/// Zero-copy read access to an encoded block.
#[derive(Debug, Clone, Copy)]
pub struct BlockView<'a> {
    bytes: &'a [u8],
}

impl<'a> BlockView<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        if bytes.len() != BLOCK_SIZE {
            return Err(FormatError::BlockLength(bytes.len()));
        }
        let view = Self { bytes };
        if view.count() > BLOCK_CAPACITY {
            return Err(FormatError::BlockCapacity(view.count()));
        }
        Ok(view)
    }

    #[inline]
    pub fn next(&self) -> u64 {
        u64::from_le_bytes(self.bytes[0..8].try_into().unwrap())
    }

    #[inline]
    pub fn count(&self) -> usize {
        u16::from_le_bytes([self.bytes[8], self.bytes[9]]) as usize
    }

    #[inline]
    pub fn word(&self, i: usize) -> u64 {
        let at = HEADER_SIZE + i * ENTRY_SIZE;
        bytes_to_word(&self.bytes[at..at + ENTRY_SIZE])
    }

    pub fn words(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.count()).map(move |i| self.word(i))
    }

    pub fn padding(&self) -> &'a [u8] {
        &self.bytes[10..HEADER_SIZE]
    }

    /// Bytes after the last valid entry.
    pub fn tail(&self) -> &'a [u8] {
        &self.bytes[HEADER_SIZE + self.count().min(BLOCK_CAPACITY) * ENTRY_SIZE..]
    }
}

/// Reads the address stored in a table slot from the 512-byte region containing it.
#[inline]
pub fn slot_in_region(region: &[u8], slot_address: u64) -> u64 {
    let at = (slot_address % BLOCK_SIZE as u64) as usize;
    u64::from_le_bytes(region[at..at + SLOT_SIZE].try_into().unwrap())
}

/// Byte length of one hash table with `u`-bit keys.
pub fn table_bytes(u: u32) -> u64 {
    (1u64 << u) * SLOT_SIZE as u64
}

/// Everything needed to reopen an index: parameters, layout and checksums.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexManifest {
    pub version: u32,
    pub params: ParamSet,
    pub u: u32,
    pub v: u32,
    pub mix_rule: String,
    pub sampler: String,
    pub key_order: String,
    pub placement: String,
    /// Device byte offset of each `(radius, table)` hash table, radius-major.
    pub table_offsets: Vec<u64>,
    pub bucket_offset: u64,
    pub bucket_len: u64,
    pub dataset_checksum: String,
    pub tables_checksum: String,
    pub buckets_checksum: String,
}

pub const KEY_ORDER: &str = "key-high/fingerprint-low";
pub const PLACEMENT: &str = "sequential-per-chain";

impl IndexManifest {
    pub fn layout(&self) -> Result<EntryLayout> {
        EntryLayout::new(self.params.n, self.u, self.v)
    }

    pub fn table_offset(&self, radius: usize, table: usize) -> u64 {
        self.table_offsets[radius * self.params.l + table]
    }

    /// Total size of the table region.
    pub fn tables_len(&self) -> u64 {
        self.table_offsets.len() as u64 * table_bytes(self.u)
    }

    pub fn device_len(&self) -> u64 {
        self.bucket_offset + self.bucket_len
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut body = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(body, "{k} = {v}");
        };
        kv("version", self.version.to_string());
        kv("n", p.n.to_string());
        kv("d", p.d.to_string());
        kv("c", p.c.to_string());
        kv("w", p.w.to_string());
        kv("gamma", p.gamma.to_string());
        kv("rho", p.rho.to_string());
        kv("p1", p.p1.to_string());
        kv("p2", p.p2.to_string());
        kv("m", p.m.to_string());
        kv("L", p.l.to_string());
        kv("S", p.s.to_string());
        kv("r", p.r.to_string());
        kv("r_max", p.r_max.to_string());
        kv("x_max", p.x_max.to_string());
        kv("seed", p.seed.to_string());
        kv("u", self.u.to_string());
        kv("v", self.v.to_string());
        kv("mix_rule", self.mix_rule.clone());
        kv("sampler", self.sampler.clone());
        kv("key_order", self.key_order.clone());
        kv("placement", self.placement.clone());
        kv(
            "table_offsets",
            self.table_offsets.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        );
        kv("bucket_offset", self.bucket_offset.to_string());
        kv("bucket_len", self.bucket_len.to_string());
        kv("dataset_sha256", self.dataset_checksum.clone());
        kv("tables_sha256", self.tables_checksum.clone());
        kv("buckets_sha256", self.buckets_checksum.clone());
        let mut text = format!("{MANIFEST_MAGIC}\n{body}");
        let sum = hex::encode(Sha256::digest(text.as_bytes()));
        let _ = writeln!(text, "checksum = {sum}");
        text
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let (body, last) = text
            .trim_end_matches('\n')
            .rsplit_once('\n')
            .ok_or_else(|| FormatError::Manifest("truncated".into()))?;
        let sum = last
            .strip_prefix("checksum = ")
            .ok_or_else(|| FormatError::Manifest("missing checksum line".into()))?;
        let expected = hex::encode(Sha256::digest(format!("{body}\n").as_bytes()));
        if sum.trim() != expected {
            return Err(FormatError::ManifestChecksum);
        }
        let mut lines = body.lines();
        if lines.next() != Some(MANIFEST_MAGIC) {
            return Err(FormatError::Manifest("bad magic line".into()));
        }
        let mut fields = BTreeMap::new();
        for line in lines {
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| FormatError::Manifest(format!("malformed line {line:?}")))?;
            if fields.insert(k.to_string(), v.to_string()).is_some() {
                return Err(FormatError::Manifest(format!("duplicate field {k}")));
            }
        }
        let mut f = Fields(fields);
        let version: u32 = f.parse("version")?;
        if version != FORMAT_VERSION {
            return Err(FormatError::Version { found: version });
        }
        let params = ParamSet {
            n: f.parse("n")?,
            d: f.parse("d")?,
            c: f.parse("c")?,
            w: f.parse("w")?,
            gamma: f.parse("gamma")?,
            rho: f.parse("rho")?,
            p1: f.parse("p1")?,
            p2: f.parse("p2")?,
            m: f.parse("m")?,
            l: f.parse("L")?,
            s: f.parse("S")?,
            r: f.parse("r")?,
            r_max: f.parse("r_max")?,
            x_max: f.parse("x_max")?,
            seed: f.parse("seed")?,
        };
        let offsets = f.take("table_offsets")?;
        let table_offsets = if offsets.is_empty() {
            Vec::new()
        } else {
            offsets
                .split(',')
                .map(|s| s.parse().map_err(|_| FormatError::Manifest(format!("bad offset {s:?}"))))
                .collect::<Result<Vec<u64>>>()?
        };
        let manifest = Self {
            version,
            params,
            u: f.parse("u")?,
            v: f.parse("v")?,
            mix_rule: f.take("mix_rule")?,
            sampler: f.take("sampler")?,
            key_order: f.take("key_order")?,
            placement: f.take("placement")?,
            table_offsets,
            bucket_offset: f.parse("bucket_offset")?,
            bucket_len: f.parse("bucket_len")?,
            dataset_checksum: f.take("dataset_sha256")?,
            tables_checksum: f.take("tables_sha256")?,
            buckets_checksum: f.take("buckets_sha256")?,
        };
        if let Some(extra) = f.0.keys().next() {
            return Err(FormatError::Manifest(format!("unknown field {extra}")));
        }
        if manifest.table_offsets.len() != manifest.params.table_count() {
            return Err(FormatError::Manifest(format!(
                "{} table offsets for L * r = {}",
                manifest.table_offsets.len(),
                manifest.params.table_count()
            )));
        }
        Ok(manifest)
    }
}

struct Fields(BTreeMap<String, String>);

impl Fields {
    fn take(&mut self, key: &str) -> Result<String> {
        self.0
            .remove(key)
            .ok_or_else(|| FormatError::Manifest(format!("missing field {key}")))
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str) -> Result<T> {
        let raw = self.take(key)?;
        raw.parse()
            .map_err(|_| FormatError::Manifest(format!("bad value for {key}: {raw:?}")))
    }
}

pub fn write_manifest(path: &Path, manifest: &IndexManifest) -> Result<()> {
    std::fs::write(path, manifest.to_text())?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<IndexManifest> {
    IndexManifest::from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lsh::compute_params;
    use proptest::prelude::*;

    #[test]
    fn sizes() {
        assert_eq!(BLOCK_CAPACITY, 99);
        assert_eq!(HEADER_SIZE + BLOCK_CAPACITY * ENTRY_SIZE, 511);
    }

    #[test]
    fn key_bits_rule() {
        assert_eq!(key_bits_for(1), 8);
        assert_eq!(key_bits_for(1000), 8);
        assert_eq!(key_bits_for(10_000), 11);
        assert_eq!(key_bits_for(100_000), 14);
        assert_eq!(key_bits_for(1_000_000), 17);
        assert_eq!(key_bits_for(1_000_000_000), 27);
    }

    #[test]
    fn pack_zero() {
        assert_eq!(pack_object_info(0, 0, 10, 8, 32).unwrap(), [0u8; 5]);
    }

    #[test]
    fn pack_billion_scale() {
        let n = 1_000_000_000u64;
        let id = n - 1;
        let bytes = pack_object_info(id, 0xF, n, 28, 32).unwrap();
        assert_eq!(unpack_object_info(bytes, n, 28, 32).unwrap(), (id, 0xF));
        // fingerprint sits in the top 4 bits of the 40-bit word
        assert_eq!(bytes[4] >> 4, 0xF);
    }

    #[test]
    fn pack_rejects_out_of_range() {
        assert!(matches!(pack_object_info(10, 0, 10, 8, 32), Err(FormatError::IdOutOfRange { .. })));
        assert!(matches!(
            pack_object_info(1, 1 << 24, 10, 8, 32),
            Err(FormatError::FingerprintOutOfRange { .. })
        ));
        // 30-bit ids with a 24-bit fingerprint cannot fit
        assert!(matches!(pack_object_info(0, 0, 1 << 30, 8, 32), Err(FormatError::EntryTooWide(54))));
    }

    #[test]
    fn key_and_fingerprint_examples() {
        assert_eq!(table_key_and_fingerprint(HashValue32(0xFFFF_FFFF), 20).unwrap(), (0xFFFFF, 0xFFF));
        assert_eq!(table_key_and_fingerprint(HashValue32(0x1234_5678), 32).unwrap(), (0x1234_5678, 0));
        assert!(table_key_and_fingerprint(HashValue32(1), 0).is_err());
        assert!(table_key_and_fingerprint(HashValue32(1), 33).is_err());
    }

    #[test]
    fn empty_block_encoding() {
        let bytes = encode_block(&BucketBlock::default()).unwrap();
        assert_eq!(&bytes[0..8], &[0xFF; 8]);
        assert_eq!(&bytes[8..10], &[0, 0]);
        assert!(bytes[10..].iter().all(|&b| b == 0));
    }

    #[test]
    fn full_block_round_trip() {
        let layout = EntryLayout::new(100_000, 14, 32).unwrap();
        let mut block = BucketBlock { next: 4096, entries: vec![] };
        for i in 0..BLOCK_CAPACITY as u32 {
            block.push(layout.pack(i * 1000, (i * 7919) & 0x3FFFF)).unwrap();
        }
        assert!(block.is_full());
        assert!(matches!(block.push(0), Err(FormatError::BlockCapacity(100))));
        let bytes = encode_block(&block).unwrap();
        assert_eq!(bytes.len(), BLOCK_SIZE);
        let decoded = decode_block(&bytes).unwrap();
        assert_eq!(decoded, block);
        assert_eq!(encode_block(&decoded).unwrap(), bytes);
    }

    #[test]
    fn block_codec_errors() {
        let over = BucketBlock { next: 0, entries: vec![0; 100] };
        assert!(matches!(encode_block(&over), Err(FormatError::BlockCapacity(100))));
        assert!(matches!(decode_block(&[0u8; 511]), Err(FormatError::BlockLength(511))));
        let mut bad = [0u8; BLOCK_SIZE];
        bad[8] = 100;
        assert!(matches!(decode_block(&bad), Err(FormatError::BlockCapacity(100))));
    }

    #[test]
    fn pad_bytes_ignored_on_decode() {
        let block = BucketBlock { next: 512, entries: vec![3, 4] };
        let mut bytes = encode_block(&block).unwrap();
        bytes[12] = 0xAB;
        assert_eq!(decode_block(&bytes).unwrap(), block);
    }

    fn sample_manifest() -> IndexManifest {
        let params = compute_params(5000, 16, 2.0, 4.0, 1.0, 1.0, 11).unwrap();
        let count = params.table_count();
        IndexManifest {
            version: FORMAT_VERSION,
            u: key_bits_for(params.n),
            v: HASH_BITS,
            mix_rule: crate::lsh::MIX_RULE.into(),
            sampler: crate::lsh::SAMPLER.into(),
            key_order: KEY_ORDER.into(),
            placement: PLACEMENT.into(),
            table_offsets: (0..count as u64).map(|i| i * 2048).collect(),
            bucket_offset: count as u64 * 2048,
            bucket_len: 512 * 77,
            dataset_checksum: "ab".repeat(32),
            tables_checksum: "cd".repeat(32),
            buckets_checksum: "ef".repeat(32),
            params,
        }
    }

    #[test]
    fn manifest_round_trip() {
        let m = sample_manifest();
        let text = m.to_text();
        assert_eq!(IndexManifest::from_text(&text).unwrap(), m);
        assert_eq!(IndexManifest::from_text(&text).unwrap().to_text(), text);
    }

    #[test]
    fn manifest_corruption_detected() {
        let text = sample_manifest().to_text();
        let mut bytes = text.into_bytes();
        let at = bytes.iter().position(|&b| b == b'=').unwrap() + 2;
        bytes[at] ^= 0x01;
        let err = IndexManifest::from_text(std::str::from_utf8(&bytes).unwrap()).unwrap_err();
        assert!(matches!(err, FormatError::ManifestChecksum));
    }

    fn reseal(body: &str) -> String {
        let sum = hex::encode(Sha256::digest(body.as_bytes()));
        format!("{body}checksum = {sum}\n")
    }

    fn body_of(text: &str) -> String {
        let cut = text.rfind("checksum = ").unwrap();
        text[..cut].to_string()
    }

    #[test]
    fn manifest_future_version_rejected() {
        let body = body_of(&sample_manifest().to_text()).replace("version = 1\n", "version = 2\n");
        let err = IndexManifest::from_text(&reseal(&body)).unwrap_err();
        assert!(matches!(err, FormatError::Version { found: 2 }));
    }

    #[test]
    fn manifest_unknown_field_rejected() {
        let body = body_of(&sample_manifest().to_text()) + "shiny_new_field = 3\n";
        let err = IndexManifest::from_text(&reseal(&body)).unwrap_err();
        assert!(matches!(err, FormatError::Manifest(msg) if msg.contains("shiny_new_field")));
    }

    proptest! {
        #[test]
        fn object_info_round_trip(n in 1u64..(1 << 32), id_frac in 0.0f64..1.0, u in 8u32..=32, fp in any::<u32>()) {
            let id = ((n as f64 * id_frac) as u64).min(n - 1);
            let fp_bits = 32 - u;
            let fp = if fp_bits == 0 { 0 } else { fp & ((1u32 << fp_bits) - 1) };
            match EntryLayout::new(n, u, 32) {
                Ok(_) => {
                    let bytes = pack_object_info(id, fp, n, u, 32).unwrap();
                    prop_assert_eq!(unpack_object_info(bytes, n, u, 32).unwrap(), (id, fp));
                }
                Err(FormatError::EntryTooWide(bits)) => prop_assert!(bits > 40),
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }

        #[test]
        fn hash_split_is_lossless(h in any::<u32>(), u in 1u32..=32) {
            let (key, fp) = table_key_and_fingerprint(HashValue32(h), u).unwrap();
            prop_assert!(u == 32 || key < (1u32 << u));
            prop_assert_eq!(reconstruct_hash(key, fp, u), HashValue32(h));
        }
    }
}
