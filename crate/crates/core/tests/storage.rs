use std::collections::HashSet;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use e2lshos::storage::*;

fn image(len: usize) -> Vec<u8> {
    (0..len).map(|i| (i * 31 % 251) as u8).collect()
}

fn drain(b: &dyn StorageBackend, expect: usize) -> Vec<Completion> {
    let mut out = Vec::new();
    let deadline = Instant::now() + Duration::from_secs(10);
    while out.len() < expect {
        if b.poll_completions(expect - out.len(), &mut out) == 0 {
            assert!(Instant::now() < deadline, "completions stalled");
            std::thread::yield_now();
        }
    }
    out
}

fn write_files(dir: &tempfile::TempDir, parts: &[&[u8]]) -> Vec<PathBuf> {
    parts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let path = dir.path().join(format!("seg{i}.bin"));
            std::fs::write(&path, p).unwrap();
            path
        })
        .collect()
}

#[test]
fn memory_backend_returns_exact_bytes_on_next_poll() {
    let img = image(4096);
    let b = MemoryBackend::new(img.clone(), 8).unwrap();
    assert_eq!(b.submit_read(ReadRequest::new(1024, 1024, 7)).unwrap(), Submit::Accepted);
    let mut out = Vec::new();
    assert_eq!(b.poll_completions(4, &mut out), 1);
    assert_eq!(out[0].ticket, 7);
    assert_eq!(out[0].data.as_ref().unwrap().as_slice(), &img[1024..2048]);
}

#[test]
fn invalid_requests_rejected_immediately() {
    let b = MemoryBackend::new(image(2048), 8).unwrap();
    assert!(matches!(b.submit_read(ReadRequest::new(0, 513, 0)), Err(StorageError::Misaligned { .. })));
    assert!(matches!(b.submit_read(ReadRequest::new(100, 512, 0)), Err(StorageError::Misaligned { .. })));
    assert!(matches!(b.submit_read(ReadRequest::new(0, 0, 0)), Err(StorageError::Misaligned { .. })));
    assert!(matches!(b.submit_read(ReadRequest::new(2048, 512, 0)), Err(StorageError::OutOfRange { .. })));
    assert_eq!(b.stats().submitted, 0);
}

#[test]
fn backpressure_loses_nothing() {
    let b = MemoryBackend::new(image(8192), 4).unwrap();
    for t in 0..4 {
        assert_eq!(b.submit_read(ReadRequest::new(t * 512, 512, t)).unwrap(), Submit::Accepted);
    }
    assert_eq!(b.submit_read(ReadRequest::new(0, 512, 99)).unwrap(), Submit::Backpressure);
    let first = drain(&b, 4);
    assert_eq!(first.iter().map(|c| c.ticket).collect::<HashSet<_>>(), (0..4).collect());
    assert_eq!(b.submit_read(ReadRequest::new(0, 512, 99)).unwrap(), Submit::Accepted);
    let again = drain(&b, 1);
    assert_eq!(again[0].ticket, 99);
    let s = b.stats();
    assert_eq!((s.submitted, s.completed, s.rejected), (5, 5, 1));
    assert!(s.peak_in_flight <= s.capacity);
    assert_eq!(s.peak_in_flight, 4);
}

#[test]
fn forked_handles_have_private_completions() {
    let b = MemoryBackend::new(image(4096), 8).unwrap();
    let f = b.fork();
    b.submit_read(ReadRequest::new(0, 512, 1)).unwrap();
    f.submit_read(ReadRequest::new(512, 512, 2)).unwrap();
    let mut out = Vec::new();
    assert_eq!(f.poll_completions(8, &mut out), 1);
    assert_eq!(out[0].ticket, 2);
    assert_eq!(b.stats().submitted, 2);
}

#[test]
fn file_backend_round_trip_across_segments() {
    let dir = tempfile::tempdir().unwrap();
    let (a, c) = (image(2048), image(3072).into_iter().rev().collect::<Vec<_>>());
    let paths = write_files(&dir, &[&a, &c]);
    for direct in [false, true] {
        let b = FileBackend::open(&paths, FileOptions { io_threads: 3, direct }, 16).unwrap();
        assert_eq!(b.extent(), 5120);
        let all: Vec<u8> = a.iter().chain(c.iter()).copied().collect();
        let reqs: Vec<ReadRequest> = (0..10).map(|i| ReadRequest::new(i * 512, 512, i)).collect();
        for r in &reqs {
            assert_eq!(b.submit_read(*r).unwrap(), Submit::Accepted);
        }
        // overlapping larger read
        b.submit_read(ReadRequest::new(2048, 1536, 100)).unwrap();
        for c in drain(&b, 11) {
            let (addr, len) = if c.ticket == 100 { (2048, 1536) } else { (c.ticket * 512, 512) };
            assert_eq!(c.data.unwrap(), &all[addr as usize..(addr + len) as usize]);
        }
        assert!(matches!(b.submit_read(ReadRequest::new(1536, 1024, 0)), Err(StorageError::SpansSegments { .. })));
        assert_eq!(b.stats().completed, 11);
    }
}

#[test]
fn file_backend_concurrent_workers_see_exact_data() {
    let dir = tempfile::tempdir().unwrap();
    let img = image(512 * 256);
    let paths = write_files(&dir, &[&img]);
    let b = FileBackend::open(&paths, FileOptions::default(), 16).unwrap();
    std::thread::scope(|s| {
        for w in 0..4u64 {
            let h = b.fork();
            let img = &img;
            s.spawn(move || {
                let mut expected = 0;
                let mut out = Vec::new();
                let mut next = 0u64;
                while next < 200 || expected > 0 {
                    if next < 200 {
                        let block = (next * 7 + w * 13) % 256;
                        if h.submit_read(ReadRequest::new(block * 512, 512, block)).unwrap() == Submit::Accepted {
                            next += 1;
                            expected += 1;
                        }
                    }
                    out.clear();
                    expected -= h.poll_completions(64, &mut out);
                    for c in &out {
                        let at = c.ticket as usize * 512;
                        assert_eq!(c.data.as_ref().unwrap().as_slice(), &img[at..at + 512]);
                    }
                    std::thread::yield_now();
                }
            });
        }
    });
    let s = b.stats();
    assert_eq!(s.completed, 800);
    assert!(s.peak_in_flight <= 16);
}

/// Keeps the queue as full as allowed for `dur` and returns completions per second.
fn saturate(b: &dyn StorageBackend, depth: usize, dur: Duration) -> f64 {
    let mut out = Vec::new();
    let mut in_flight = 0;
    let mut done = 0u64;
    let start = Instant::now();
    let mut ticket = 0;
    while start.elapsed() < dur {
        while in_flight < depth {
            match b.submit_read(ReadRequest::new(0, 512, ticket)).unwrap() {
                Submit::Accepted => {
                    in_flight += 1;
                    ticket += 1;
                }
                Submit::Backpressure => break,
            }
        }
        out.clear();
        let n = b.poll_completions(usize::MAX, &mut out);
        in_flight -= n;
        done += n as u64;
    }
    done as f64 / start.elapsed().as_secs_f64()
}

fn sim(latency_us: u64, parallel: usize, overhead_ns: u64) -> SimBackend {
    let cfg = SimConfig {
        read_latency: Duration::from_micros(latency_us),
        max_parallel: parallel,
        request_overhead: Duration::from_nanos(overhead_ns),
    };
    SimBackend::new(image(4096), cfg, 128).unwrap()
}

#[test]
fn sim_saturated_throughput_matches_parallel_over_latency() {
    let b = sim(100, 32, 100);
    let iops = saturate(&b, 128, Duration::from_millis(400));
    assert!((iops / 320_000.0 - 1.0).abs() <= 0.10, "observed {iops}");
}

#[test]
fn sim_throughput_law_at_three_points() {
    // (latency us, parallel, overhead ns) -> min(parallel/latency, 1/overhead)
    for (lat, par, ovh) in [(200u64, 8usize, 100u64), (50, 4, 100), (100, 64, 20_000)] {
        let b = sim(lat, par, ovh);
        let expected = (par as f64 / (lat as f64 * 1e-6)).min(1e9 / ovh as f64);
        let iops = saturate(&b, 128, Duration::from_millis(300));
        assert!((iops / expected - 1.0).abs() <= 0.10, "({lat},{par},{ovh}): {iops} vs {expected}");
    }
}

#[test]
fn sim_queue_depth_one_gives_inverse_latency() {
    let b = sim(50, 32, 100);
    let iops = saturate(&b, 1, Duration::from_millis(300));
    assert!((iops / 20_000.0 - 1.0).abs() <= 0.10, "observed {iops}");
    let s = b.stats();
    assert_eq!(s.peak_in_flight, 1);
    assert!((s.iops / 20_000.0 - 1.0).abs() <= 0.10, "windowed {}", s.iops);
    assert!((s.mean_latency.as_secs_f64() / 50e-6 - 1.0).abs() <= 0.05);
}

#[test]
fn sim_rejects_non_positive_config() {
    let mut cfg = SimConfig::default();
    cfg.max_parallel = 0;
    assert!(SimBackend::new(image(512), cfg, 8).is_err());
    assert!(MemoryBackend::new(image(512), 0).is_err());
}

#[test]
fn blocking_read_helper() {
    let img = image(2048);
    let b = sim(10, 2, 100);
    assert_eq!(read_blocking(&b, 512, 512).unwrap(), &img[512..1024]);
}
