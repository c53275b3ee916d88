//! In-memory vector collections and the fvecs / bvecs / f32raw file formats.
//!
//! Byte vectors are promoted to `f32` on load; `kind` remembers the source
//! element type so writers can round-trip it.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("record {record} has dimension {found}, expected {expected}")]
    InconsistentDimension { record: usize, expected: usize, found: usize },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("unknown format {0:?} (fvecs|bvecs|f32raw)")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Byte,
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    Fvecs,
    Bvecs,
    F32Raw,
}

impl std::str::FromStr for FileFormat {
    type Err = DatasetError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fvecs" => Ok(Self::Fvecs),
            "bvecs" => Ok(Self::Bvecs),
            "f32raw" => Ok(Self::F32Raw),
            other => Err(DatasetError::UnknownFormat(other.to_string())),
        }
    }
}

impl FileFormat {
    /// Guesses the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "f32" => Some(Self::F32Raw),
            ext => ext.parse().ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    kind: ElementKind,
    data: Vec<f32>,
    x_max: f32,
}

impl Dataset {
    pub fn new(d: usize, data: Vec<f32>, kind: ElementKind) -> Result<Self> {
        if d == 0 {
            return Err(DatasetError::Invalid("dimension must be positive".into()));
        }
        if data.len() % d != 0 {
            return Err(DatasetError::Invalid(format!("{} values is not a multiple of d = {d}", data.len())));
        }
        if let Some(i) = data.iter().position(|x| !x.is_finite()) {
            return Err(DatasetError::Invalid(format!("non-finite coordinate in row {}", i / d)));
        }
        let x_max = data.iter().fold(0.0f32, |m, x| m.max(x.abs()));
        Ok(Self { n: data.len() / d, d, kind, data, x_max })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(DatasetError::InconsistentDimension { record: i, expected: d, found: r.len() });
        }
        Self::new(d, rows.concat(), ElementKind::F32)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> ElementKind {
        self.kind
    }

    /// Largest absolute coordinate.
    pub fn x_max(&self) -> f32 {
        self.x_max
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// First `count` rows as a new dataset.
    pub fn head(&self, count: usize) -> Self {
        let count = count.min(self.n);
        let data = self.data[..count * self.d].to_vec();
        Self::new(self.d, data, self.kind).expect("prefix of a valid dataset")
    }

    pub fn select(&self, ids: &[usize]) -> Self {
        let data = ids.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self::new(self.d, data, self.kind).expect("rows of a valid dataset")
    }

    /// SHA-256 over `n`, `d` (u64 LE) and the coordinates as f32 LE.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n as u64).to_le_bytes());
        h.update((self.d as u64).to_le_bytes());
        for chunk in self.data.chunks(4096) {
            let bytes: Vec<u8> = chunk.iter().flat_map(|x| x.to_le_bytes()).collect();
            h.update(&bytes);
        }
        hex::encode(h.finalize())
    }
}

pub fn load_dataset(path: &Path, format: FileFormat) -> Result<Dataset> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    parse_dataset(&bytes, format)
}

pub fn parse_dataset(bytes: &[u8], format: FileFormat) -> Result<Dataset> {
    match format {
        FileFormat::Fvecs => parse_vecs(bytes, 4, ElementKind::F32),
        FileFormat::Bvecs => parse_vecs(bytes, 1, ElementKind::Byte),
        FileFormat::F32Raw => parse_raw(bytes),
    }
}

fn parse_vecs(bytes: &[u8], elem: usize, kind: ElementKind) -> Result<Dataset> {
    let mut data = Vec::new();
    let mut d = None;
    let mut at = 0;
    let mut record = 0;
    while at < bytes.len() {
        let header = bytes
            .get(at..at + 4)
            .ok_or_else(|| DatasetError::Truncated(format!("record {record} header")))?;
        let dim = u32::from_le_bytes(header.try_into().unwrap()) as usize;
        match d {
            None => d = Some(dim),
            Some(expected) if expected != dim => {
                return Err(DatasetError::InconsistentDimension { record, expected, found: dim })
            }
            _ => {}
        }
        at += 4;
        let body = bytes
            .get(at..at + dim * elem)
            .ok_or_else(|| DatasetError::Truncated(format!("record {record} body")))?;
        match kind {
            ElementKind::F32 => data.extend(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()))),
            ElementKind::Byte => data.extend(body.iter().map(|&b| f32::from(b))),
        }
        at += dim * elem;
        record += 1;
    }
    let d = d.ok_or_else(|| DatasetError::Invalid("empty file".into()))?;
    Dataset::new(d, data, kind)
}

fn parse_raw(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < 16 {
        return Err(DatasetError::Truncated("f32raw header".into()));
    }
    let n = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let want = n.checked_mul(d).and_then(|v| v.checked_mul(4)).ok_or_else(|| DatasetError::Invalid("header overflow".into()))?;
    let body = &bytes[16..];
    if body.len() < want {
        return Err(DatasetError::Truncated(format!("expected {want} payload bytes, found {}", body.len())));
    }
    if body.len() > want {
        return Err(DatasetError::Invalid(format!("{} trailing bytes", body.len() - want)));
    }
    let data = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    Dataset::new(d, data, ElementKind::F32)
}

pub fn write_dataset(path: &Path, ds: &Dataset, format: FileFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        FileFormat::F32Raw => {
            w.write_all(&(ds.n as u64).to_le_bytes())?;
            w.write_all(&(ds.d as u64).to_le_bytes())?;
            for x in &ds.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        FileFormat::Fvecs => {
            for row in ds.rows() {
                w.write_all(&(ds.d as u32).to_le_bytes())?;
                for x in row {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        FileFormat::Bvecs => {
            if let Some(x) = ds.data.iter().find(|x| !(0.0..=255.0).contains(*x) || x.fract() != 0.0) {
                return Err(DatasetError::Invalid(format!("{x} is not representable as a byte")));
            }
            for row in ds.rows() {
                w.write_all(&(ds.d as u32).to_le_bytes())?;
                w.write_all(&row.iter().map(|&x| x as u8).collect::<Vec<_>>())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_written_fvecs() {
        let mut bytes = Vec::new();
        for row in [[1.5f32, -2.0], [0.25, 8.0]] {
            bytes.extend(2u32.to_le_bytes());
            for x in row {
                bytes.extend(x.to_le_bytes());
            }
        }
        let ds = parse_dataset(&bytes, FileFormat::Fvecs).unwrap();
        assert_eq!((ds.n(), ds.d()), (2, 2));
        assert_eq!(ds.row(0), &[1.5, -2.0]);
        assert_eq!(ds.row(1), &[0.25, 8.0]);
        assert_eq!(ds.x_max(), 8.0);
    }

    #[test]
    fn bvecs_mixed_dimensions_rejected() {
        let bytes = [&3u32.to_le_bytes()[..], &[1, 2, 3], &2u32.to_le_bytes()[..], &[4, 5]].concat();
        assert!(matches!(
            parse_dataset(&bytes, FileFormat::Bvecs),
            Err(DatasetError::InconsistentDimension { record: 1, expected: 3, found: 2 })
        ));
    }

    #[test]
    fn truncated_inputs_rejected() {
        let bytes = [&4u32.to_le_bytes()[..], &[0u8; 12]].concat();
        assert!(matches!(parse_dataset(&bytes, FileFormat::Fvecs), Err(DatasetError::Truncated(_))));
        assert!(matches!(parse_dataset(&[0u8; 10], FileFormat::F32Raw), Err(DatasetError::Truncated(_))));
    }

    #[test]
    fn byte_vectors_promoted() {
        let bytes = [&4u32.to_le_bytes()[..], &[0, 17, 255, 3]].concat();
        let ds = parse_dataset(&bytes, FileFormat::Bvecs).unwrap();
        assert_eq!(ds.kind(), ElementKind::Byte);
        assert_eq!(ds.row(0), &[0.0, 17.0, 255.0, 3.0]);
        assert!(ds.x_max() <= 255.0);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Dataset::new(2, vec![0.0, f32::NAN], ElementKind::F32).is_err());
    }
}
