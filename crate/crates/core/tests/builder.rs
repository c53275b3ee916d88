use e2lshos::builder::{build_index, params_for, verify_index};
use e2lshos::dataset::{Dataset, ElementKind};
use e2lshos::eval::{generate_synthetic, SyntheticKind};
use e2lshos::format::{decode_block, read_manifest, BLOCK_SIZE, NULL_ADDR, SLOT_SIZE};

fn uniform(n: usize, d: usize, seed: u64) -> Dataset {
    generate_synthetic(SyntheticKind::Uniform, n, d, 0, seed).0
}

#[test]
fn toy_dataset_memberships() {
    let ds = uniform(4, 3, 1);
    let params = params_for(&ds, 2.0, 4.0, 1.0, None, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_index(&ds, &params, dir.path()).unwrap();
    let report = verify_index(dir.path(), &ds).unwrap();
    assert!(report.is_clean(), "{:?}", report.violations);
    let per_object = (params.l * params.r) as u64;
    assert_eq!((report.min_memberships, report.max_memberships), (per_object, per_object));
    assert_eq!(report.total_entries, 4 * per_object);
    assert_eq!(manifest.table_offsets.len(), params.l * params.r);
}

#[test]
fn builds_are_byte_reproducible() {
    let ds = uniform(500, 8, 2);
    let params = params_for(&ds, 2.0, 4.0, 1.0, None, 9).unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    build_index(&ds, &params, a.path()).unwrap();
    build_index(&ds, &params, b.path()).unwrap();
    for f in ["tables.bin", "buckets.bin", "manifest.txt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let other = params_for(&ds, 2.0, 4.0, 1.0, None, 10).unwrap();
    let c = tempfile::tempdir().unwrap();
    build_index(&ds, &other, c.path()).unwrap();
    assert_ne!(std::fs::read(a.path().join("buckets.bin")).unwrap(), std::fs::read(c.path().join("buckets.bin")).unwrap());
}

#[test]
fn shared_key_chain_spans_three_blocks() {
    let ds = Dataset::new(2, [0.25f32, 0.75].repeat(200), ElementKind::F32).unwrap();
    let params = params_for(&ds, 2.0, 4.0, 1.0, None, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = build_index(&ds, &params, dir.path()).unwrap();
    let tables = std::fs::read(dir.path().join("tables.bin")).unwrap();
    let buckets = std::fs::read(dir.path().join("buckets.bin")).unwrap();
    let base = manifest.table_offset(0, 0) as usize;
    let heads: Vec<u64> = (0..1usize << manifest.u)
        .map(|k| u64::from_le_bytes(tables[base + k * SLOT_SIZE..base + (k + 1) * SLOT_SIZE].try_into().unwrap()))
        .filter(|&a| a != NULL_ADDR)
        .collect();
    assert_eq!(heads.len(), 1);
    let mut counts = Vec::new();
    let mut ids = Vec::new();
    let mut addr = heads[0];
    let layout = manifest.layout().unwrap();
    while addr != NULL_ADDR {
        let at = (addr - manifest.bucket_offset) as usize;
        let block = decode_block(&buckets[at..at + BLOCK_SIZE]).unwrap();
        counts.push(block.entries.len());
        ids.extend(block.entries.iter().map(|&w| layout.unpack(w).0));
        addr = block.next;
    }
    assert_eq!(counts, [99, 99, 2]);
    // dataset order within the chain
    assert_eq!(ids, (0..200).collect::<Vec<u32>>());
}

#[test]
fn verify_flags_a_flipped_bit() {
    let ds = uniform(300, 4, 4);
    let params = params_for(&ds, 2.0, 4.0, 1.0, None, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    build_index(&ds, &params, dir.path()).unwrap();
    assert!(verify_index(dir.path(), &ds).unwrap().is_clean());
    let path = dir.path().join("buckets.bin");
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[BLOCK_SIZE * 3 + 17] ^= 0x04;
    std::fs::write(&path, bytes).unwrap();
    let report = verify_index(dir.path(), &ds).unwrap();
    assert!(!report.is_clean());
    assert!(report.violations.len() >= 2, "{:?}", report.violations);
}

#[test]
fn verify_flags_wrong_dataset_and_broken_chain() {
    let ds = uniform(300, 4, 4);
    let params = params_for(&ds, 2.0, 4.0, 1.0, None, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    build_index(&ds, &params, dir.path()).unwrap();
    let other = uniform(300, 4, 5);
    assert!(!verify_index(dir.path(), &other).unwrap().is_clean());

    let path = dir.path().join("tables.bin");
    let mut bytes = std::fs::read(&path).unwrap();
    let slot = bytes.chunks_exact(8).position(|c| c != [0xFF; 8]).unwrap();
    bytes[slot * 8..slot * 8 + 8].copy_from_slice(&7u64.to_le_bytes());
    std::fs::write(&path, bytes).unwrap();
    let report = verify_index(dir.path(), &ds).unwrap();
    assert!(report.violations.iter().any(|v| v.contains("bad block address")), "{:?}", report.violations);
}

#[test]
fn manifest_is_the_commit_point() {
    let ds = uniform(50, 4, 6);
    let params = params_for(&ds, 2.0, 4.0, 1.0, None, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    build_index(&ds, &params, dir.path()).unwrap();
    let m = read_manifest(&dir.path().join("manifest.txt")).unwrap();
    assert_eq!(m.dataset_checksum, ds.checksum());
    // a rejected rebuild leaves no stale manifest behind
    let mut wrong = params.clone();
    wrong.n = 49;
    assert!(build_index(&ds, &wrong, dir.path()).is_err());
    assert!(dir.path().join("manifest.txt").exists());
    let bigger = uniform(60, 4, 6);
    let p2 = params_for(&bigger, 2.0, 4.0, 1.0, None, 1).unwrap();
    build_index(&bigger, &p2, dir.path()).unwrap();
    assert!(verify_index(dir.path(), &bigger).unwrap().is_clean());
}
