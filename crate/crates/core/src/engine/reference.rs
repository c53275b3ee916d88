use std::collections::HashSet;
use std::sync::{Arc, OnceLock};
use std::time::Instant;

use rayon::prelude::*;

use super::{Neighbor, QueryResult, RcnnReport};
use crate::dataset::Dataset;
use crate::format::{key_bits_for, split_hash, BLOCK_CAPACITY};
use crate::lsh::{euclidean, HashFamily, ParamSet};

/// Buckets of one `(radius, table)` pair: ids grouped by key in dataset order.
struct Buckets {
    starts: Vec<u32>,
    ids: Vec<u32>,
    fps: Vec<u32>,
}

/// In-memory index with the same search semantics as the storage path and
/// analytically counted I/Os (one per table lookup, one per 99-entry block).
///
/// Buckets for a radius are built on first use.
pub struct MemoryIndex {
    params: ParamSet,
    u: u32,
    dataset: Arc<Dataset>,
    family: HashFamily,
    buckets: Vec<OnceLock<Buckets>>,
    cap: u64,
}

impl MemoryIndex {
    pub fn new(dataset: Arc<Dataset>, params: ParamSet) -> Self {
        assert_eq!(dataset.n() as u64, params.n, "dataset size differs from parameters");
        assert_eq!(dataset.d(), params.d, "dataset dimension differs from parameters");
        let family = HashFamily::new(&params);
        let buckets = (0..params.table_count()).map(|_| OnceLock::new()).collect();
        Self { u: key_bits_for(params.n), cap: params.s, params, dataset, family, buckets }
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Overrides the per-radius candidate cap `S`.
    pub fn with_candidate_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }

    fn buckets(&self, radius: usize, table: usize) -> &Buckets {
        self.buckets[radius * self.params.l + table].get_or_init(|| {
            let g = self.family.compound(radius, table);
            let scale = self.params.radius(radius) as f32;
            let hashes: Vec<(u32, u32)> = (0..self.dataset.n())
                .into_par_iter()
                .with_min_len(256)
                .map(|i| split_hash(g.hash_scaled(self.dataset.row(i), scale).0, self.u))
                .collect();
            let mut order: Vec<u32> = (0..hashes.len() as u32).collect();
            order.sort_by_key(|&i| hashes[i as usize].0);
            let mut starts = vec![0u32; (1usize << self.u) + 1];
            let mut pos = 0usize;
            for key in 0..1usize << self.u {
                while pos < order.len() && (hashes[order[pos] as usize].0 as usize) < key {
                    pos += 1;
                }
                starts[key] = pos as u32;
            }
            starts[1 << self.u] = order.len() as u32;
            let fps = order.iter().map(|&i| hashes[i as usize].1).collect();
            Buckets { starts, ids: order, fps }
        })
    }

    /// Builds every radius eagerly.
    pub fn warm(&self) {
        for ri in 0..self.params.r {
            for l in 0..self.params.l {
                self.buckets(ri, l);
            }
        }
    }

    fn search(&self, q: &[f32], k: usize, radii: std::ops::Range<usize>) -> QueryResult {
        assert_eq!(q.len(), self.params.d, "query dimension");
        assert!(k >= 1);
        let started = Instant::now();
        let mut found: Vec<Neighbor> = Vec::new();
        let mut seen = HashSet::new();
        let mut out = QueryResult {
            neighbors: Vec::new(),
            partial: false,
            radii_searched: 0,
            table_reads: 0,
            block_reads: 0,
            empty_slots: 0,
            candidates: 0,
            fingerprint_rejects: 0,
            latency: Default::default(),
        };
        for ri in radii {
            out.radii_searched += 1;
            let scale = self.params.radius(ri) as f32;
            let probes: Vec<(usize, usize, u32)> = (0..self.params.l)
                .map(|l| {
                    let (key, fp) = split_hash(self.family.compound(ri, l).hash_scaled(q, scale).0, self.u);
                    let b = self.buckets(ri, l);
                    (b.starts[key as usize] as usize, b.starts[key as usize + 1] as usize, fp)
                })
                .collect();
            out.table_reads += self.params.l as u64;
            let occupied = probes.iter().filter(|(lo, hi, _)| hi > lo).count() as u64;
            out.block_reads += occupied;
            out.empty_slots += self.params.l as u64 - occupied;

            let mut examined = 0u64;
            'tables: for (l, &(lo, hi, fp)) in probes.iter().enumerate() {
                let b = self.buckets(ri, l);
                for (j, pos) in (lo..hi).enumerate() {
                    if j > 0 && j % BLOCK_CAPACITY == 0 {
                        if examined >= self.cap {
                            break 'tables;
                        }
                        out.block_reads += 1;
                    }
                    if examined >= self.cap {
                        break 'tables;
                    }
                    if b.fps[pos] != fp {
                        out.fingerprint_rejects += 1;
                        continue;
                    }
                    examined += 1;
                    let id = b.ids[pos];
                    if seen.insert(id) {
                        found.push(Neighbor { id, distance: euclidean(q, self.dataset.row(id as usize)) });
                    }
                }
            }
            out.candidates += examined;

            found.sort_by(|a, b| a.cmp_key(b));
            let reach = (self.params.c * self.params.radius(ri)) as f32;
            if found.len() >= k && found[k - 1].distance <= reach {
                break;
            }
        }
        found.truncate(k);
        out.partial = found.len() < k;
        out.neighbors = found;
        out.latency = started.elapsed();
        out
    }

    pub fn query(&self, q: &[f32], k: usize) -> QueryResult {
        self.search(q, k, 0..self.params.r)
    }

    pub fn query_batch(&self, queries: &Dataset, k: usize) -> Vec<QueryResult> {
        (0..queries.n()).into_par_iter().map(|i| self.query(queries.row(i), k)).collect()
    }

    pub fn rcnn(&self, q: &[f32], radius_index: usize) -> RcnnReport {
        let r = self.search(q, 1, radius_index..radius_index + 1);
        let reach = (self.params.c * self.params.radius(radius_index)) as f32;
        RcnnReport {
            found: r.neighbors.first().copied().filter(|n| n.distance <= reach),
            candidates: r.candidates,
            n_io: r.n_io(),
        }
    }
}
