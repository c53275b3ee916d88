use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet, VecDeque};
use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering as AtomicOrdering};
use std::time::Instant;

use super::{
    check_candidate, BatchResult, BatchStats, CandidateCheck, Concurrency, EngineError, Index, Neighbor, QueryResult,
    RcnnReport,
};
use crate::dataset::Dataset;
use crate::format::{slot_in_region, split_hash, BlockView, BLOCK_SIZE, NULL_ADDR, SLOT_SIZE};
use crate::storage::{ReadRequest, StorageBackend, Submit};

const TABLE: u64 = 0;
const BLOCK: u64 = 1;
const POLL_BATCH: usize = 256;

fn ticket(slot: usize, table: usize, kind: u64) -> u64 {
    ((slot as u64) << 32) | ((table as u64) << 1) | kind
}

fn untangle(ticket: u64) -> (usize, usize, u64) {
    ((ticket >> 32) as usize, ((ticket & 0xFFFF_FFFF) >> 1) as usize, ticket & 1)
}

struct Ranked(Neighbor);

impl PartialEq for Ranked {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Ranked {}
impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp_key(&other.0)
    }
}

/// Bounded max-heap keeping the `k` smallest `(distance, id)` pairs.
struct TopK {
    k: usize,
    heap: BinaryHeap<Ranked>,
}

impl TopK {
    fn new(k: usize) -> Self {
        Self { k, heap: BinaryHeap::with_capacity(k + 1) }
    }

    fn offer(&mut self, n: Neighbor) {
        if self.heap.len() < self.k {
            self.heap.push(Ranked(n));
        } else if self.heap.peek().is_some_and(|top| n.cmp_key(&top.0) == Ordering::Less) {
            self.heap.pop();
            self.heap.push(Ranked(n));
        }
    }

    /// Largest kept distance once `k` results are held.
    fn full_worst(&self) -> Option<f32> {
        (self.heap.len() == self.k).then(|| self.heap.peek().unwrap().0.distance)
    }

    fn into_sorted(self) -> Vec<Neighbor> {
        self.heap.into_sorted_vec().into_iter().map(|r| r.0).collect()
    }
}

/// One query in flight on a worker.
struct Search<'a> {
    index: &'a Index,
    query: usize,
    q: &'a [f32],
    radii: Range<usize>,
    radius: usize,
    keys: Vec<(u32, u32)>,
    heads: Vec<Option<u64>>,
    blocks: Vec<Option<Vec<u8>>>,
    cursor: usize,
    examined: u64,
    capped: bool,
    outstanding: usize,
    seen: HashSet<u32>,
    top: TopK,
    table_reads: u64,
    block_reads: u64,
    empty_slots: u64,
    candidates: u64,
    rejects: u64,
    radii_searched: usize,
    error: Option<EngineError>,
    started: Instant,
}

enum Step {
    Waiting,
    Done,
}

impl<'a> Search<'a> {
    fn new(index: &'a Index, query: usize, q: &'a [f32], k: usize, radii: Range<usize>) -> Self {
        let l = index.params().l;
        Self {
            index,
            query,
            q,
            radius: radii.start,
            radii,
            keys: Vec::with_capacity(l),
            heads: vec![None; l],
            blocks: vec![None; l],
            cursor: 0,
            examined: 0,
            capped: false,
            outstanding: 0,
            seen: HashSet::new(),
            top: TopK::new(k),
            table_reads: 0,
            block_reads: 0,
            empty_slots: 0,
            candidates: 0,
            rejects: 0,
            radii_searched: 0,
            error: None,
            started: Instant::now(),
        }
    }

    fn issue(&mut self, out: &mut VecDeque<ReadRequest>, req: ReadRequest) {
        self.outstanding += 1;
        out.push_back(req);
    }

    fn start_radius(&mut self, slot: usize, out: &mut VecDeque<ReadRequest>) {
        let index = self.index;
        let params = index.params();
        let u = index.manifest().u;
        let scale = params.radius(self.radius) as f32;
        self.keys.clear();
        for l in 0..params.l {
            let h = index.family().compound(self.radius, l).hash_scaled(self.q, scale);
            self.keys.push(split_hash(h.0, u));
        }
        self.heads.iter_mut().for_each(|h| *h = None);
        self.blocks.iter_mut().for_each(|b| *b = None);
        self.cursor = 0;
        self.examined = 0;
        self.capped = false;
        self.radii_searched += 1;
        for l in 0..params.l {
            let slot_addr = index.manifest().table_offset(self.radius, l) + u64::from(self.keys[l].0) * SLOT_SIZE as u64;
            let region = slot_addr - slot_addr % BLOCK_SIZE as u64;
            self.table_reads += 1;
            self.issue(out, ReadRequest::new(region, BLOCK_SIZE as u32, ticket(slot, l, TABLE)));
        }
    }

    fn fail(&mut self, e: EngineError) {
        if self.error.is_none() {
            self.error = Some(e);
        }
    }

    fn corrupt(&mut self, detail: String) {
        self.fail(EngineError::Corrupt { query: self.query, detail });
    }

    fn on_data(&mut self, slot: usize, table: usize, kind: u64, data: Vec<u8>, out: &mut VecDeque<ReadRequest>) {
        self.outstanding -= 1;
        if self.error.is_some() {
            return;
        }
        if data.len() != BLOCK_SIZE {
            return self.corrupt(format!("short read of {} bytes", data.len()));
        }
        if kind == TABLE {
            let slot_addr =
                self.index.manifest().table_offset(self.radius, table) + u64::from(self.keys[table].0) * SLOT_SIZE as u64;
            let head = slot_in_region(&data, slot_addr);
            self.heads[table] = Some(head);
            if head == NULL_ADDR {
                self.empty_slots += 1;
            } else {
                self.block_reads += 1;
                self.issue(out, ReadRequest::new(head, BLOCK_SIZE as u32, ticket(slot, table, BLOCK)));
            }
        } else {
            self.blocks[table] = Some(data);
        }
    }

    /// Examines chains in table order as far as the arrived data allows.
    fn advance(&mut self, slot: usize, out: &mut VecDeque<ReadRequest>) {
        let l_count = self.heads.len();
        let cap = self.index.params().s;
        while self.error.is_none() && !self.capped && self.cursor < l_count {
            let l = self.cursor;
            match self.heads[l] {
                None => return,
                Some(NULL_ADDR) => {
                    self.cursor += 1;
                    continue;
                }
                Some(_) => {}
            }
            let Some(block) = self.blocks[l].take() else { return };
            let view = match BlockView::new(&block) {
                Ok(v) => v,
                Err(e) => return self.corrupt(e.to_string()),
            };
            let layout = self.index.layout;
            let expected_fp = self.keys[l].1;
            for word in view.words() {
                if self.examined >= cap {
                    self.capped = true;
                    break;
                }
                let entry = layout.unpack(word);
                match check_candidate(self.q, self.index.dataset(), entry, expected_fp) {
                    Ok(CandidateCheck::FingerprintReject) => self.rejects += 1,
                    Ok(CandidateCheck::Accepted(distance)) => {
                        self.examined += 1;
                        self.candidates += 1;
                        if self.seen.insert(entry.0) {
                            self.top.offer(Neighbor { id: entry.0, distance });
                        }
                    }
                    Err(detail) => return self.corrupt(detail),
                }
            }
            if self.capped || self.examined >= cap {
                self.capped = true;
                break;
            }
            let next = view.next();
            if next == NULL_ADDR {
                self.cursor += 1;
            } else {
                self.block_reads += 1;
                self.issue(out, ReadRequest::new(next, BLOCK_SIZE as u32, ticket(slot, l, BLOCK)));
                return;
            }
        }
    }

    fn radius_complete(&self) -> bool {
        self.outstanding == 0 && (self.error.is_some() || self.capped || self.cursor == self.heads.len())
    }

    /// Moves to the next radius or reports completion once this radius is drained.
    fn after_radius(&mut self, slot: usize, out: &mut VecDeque<ReadRequest>) -> Step {
        if !self.radius_complete() {
            return Step::Waiting;
        }
        if self.error.is_some() {
            return Step::Done;
        }
        let params = self.index.params();
        let c_r = (params.c * params.radius(self.radius)) as f32;
        if self.top.full_worst().is_some_and(|worst| worst <= c_r) || self.radius + 1 >= self.radii.end {
            return Step::Done;
        }
        self.radius += 1;
        self.start_radius(slot, out);
        Step::Waiting
    }

    fn finish(self) -> Result<QueryResult, EngineError> {
        if let Some(e) = self.error {
            return Err(e);
        }
        let k = self.top.k;
        let neighbors = self.top.into_sorted();
        Ok(QueryResult {
            partial: neighbors.len() < k,
            neighbors,
            radii_searched: self.radii_searched,
            table_reads: self.table_reads,
            block_reads: self.block_reads,
            empty_slots: self.empty_slots,
            candidates: self.candidates,
            fingerprint_rejects: self.rejects,
            latency: self.started.elapsed(),
        })
    }
}

struct Job<'a> {
    index: &'a Index,
    queries: &'a [f32],
    count: usize,
    k: usize,
    radii: Range<usize>,
    next: AtomicUsize,
}

fn worker<'a>(job: &'a Job<'a>, backend: &dyn StorageBackend, interleave: usize) -> Vec<(usize, Result<QueryResult, EngineError>)> {
    let d = job.index.params().d;
    let sync = interleave == 1;
    let mut slots: Vec<Option<Search<'a>>> = (0..interleave).map(|_| None).collect();
    let mut pending: VecDeque<ReadRequest> = VecDeque::new();
    let mut completions = Vec::with_capacity(POLL_BATCH);
    let mut in_flight = 0usize;
    let mut active = 0usize;
    let mut exhausted = false;
    let mut done = Vec::new();

    loop {
        if !exhausted {
            for slot in 0..interleave {
                if slots[slot].is_some() {
                    continue;
                }
                let i = job.next.fetch_add(1, AtomicOrdering::Relaxed);
                if i >= job.count {
                    exhausted = true;
                    break;
                }
                let mut s = Search::new(job.index, i, &job.queries[i * d..(i + 1) * d], job.k, job.radii.clone());
                s.start_radius(slot, &mut pending);
                slots[slot] = Some(s);
                active += 1;
            }
        }
        if active == 0 && exhausted {
            break;
        }

        let mut progressed = false;
        while let Some(&req) = pending.front() {
            if sync && in_flight >= 1 {
                break;
            }
            match backend.submit_read(req) {
                Ok(Submit::Accepted) => {
                    pending.pop_front();
                    in_flight += 1;
                    progressed = true;
                }
                Ok(Submit::Backpressure) => break,
                Err(e) => {
                    pending.pop_front();
                    let (slot, _, _) = untangle(req.ticket);
                    let s = slots[slot].as_mut().expect("request for a live slot");
                    s.outstanding -= 1;
                    let query = s.query;
                    s.fail(EngineError::Storage { query, source: e });
                    progressed = true;
                    if let Some(r) = settle(&mut slots[slot], slot, &mut pending) {
                        done.push(r);
                        active -= 1;
                    }
                }
            }
        }

        completions.clear();
        let got = backend.poll_completions(POLL_BATCH, &mut completions);
        for c in completions.drain(..) {
            in_flight -= 1;
            let (slot, table, kind) = untangle(c.ticket);
            let s = slots[slot].as_mut().expect("completion for a live slot");
            match c.data {
                Ok(data) => s.on_data(slot, table, kind, data, &mut pending),
                Err(e) => {
                    s.outstanding -= 1;
                    let query = s.query;
                    s.fail(EngineError::Storage { query, source: e });
                }
            }
            if let Some(r) = settle(&mut slots[slot], slot, &mut pending) {
                done.push(r);
                active -= 1;
            }
        }
        if got == 0 && !progressed {
            std::thread::yield_now();
        }
    }
    done
}

/// Advances a search and frees its slot when it has finished.
fn settle(
    slot_ref: &mut Option<Search<'_>>,
    slot: usize,
    pending: &mut VecDeque<ReadRequest>,
) -> Option<(usize, Result<QueryResult, EngineError>)> {
    let s = slot_ref.as_mut()?;
    s.advance(slot, pending);
    match s.after_radius(slot, pending) {
        Step::Waiting => None,
        Step::Done => {
            let s = slot_ref.take().unwrap();
            Some((s.query, s.finish()))
        }
    }
}

fn execute(
    index: &Index,
    backend: &dyn StorageBackend,
    queries: &[f32],
    k: usize,
    concurrency: Concurrency,
    radii: Range<usize>,
) -> Result<BatchResult, EngineError> {
    let d = index.params().d;
    if k == 0 {
        return Err(EngineError::Invalid("k must be at least 1".into()));
    }
    if concurrency.workers == 0 || concurrency.interleave == 0 {
        return Err(EngineError::Invalid("workers and interleave must be at least 1".into()));
    }
    if queries.len() % d != 0 {
        return Err(EngineError::Invalid(format!("query buffer is not a multiple of d = {d}")));
    }
    if concurrency.interleave > 1 << 16 || index.params().l > 1 << 30 {
        return Err(EngineError::Invalid("interleave or L too large for ticket encoding".into()));
    }
    let count = queries.len() / d;
    let job = Job { index, queries, count, k, radii, next: AtomicUsize::new(0) };
    let started = Instant::now();
    let mut results: Vec<Option<Result<QueryResult, EngineError>>> = (0..count).map(|_| None).collect();
    let handles: Vec<Box<dyn StorageBackend>> = (0..concurrency.workers).map(|_| backend.fork()).collect();
    let parts: Vec<_> = std::thread::scope(|scope| {
        let spawned: Vec<_> = handles
            .iter()
            .map(|h| {
                let job = &job;
                scope.spawn(move || worker(job, h.as_ref(), concurrency.interleave))
            })
            .collect();
        spawned.into_iter().map(|t| t.join().expect("query worker panicked")).collect()
    });
    for (i, r) in parts.into_iter().flatten() {
        results[i] = Some(r);
    }
    let results: Vec<_> = results.into_iter().map(|r| r.expect("every query answered")).collect();
    let wall = started.elapsed();
    let stats = BatchStats::from_results(&results, wall, backend.stats());
    Ok(BatchResult { results, stats })
}

/// Top-`k` search for every row of `queries` using `W` workers with `Q` queries in flight each.
pub fn run_batch(
    index: &Index,
    backend: &dyn StorageBackend,
    queries: &Dataset,
    k: usize,
    concurrency: Concurrency,
) -> Result<BatchResult, EngineError> {
    if queries.d() != index.params().d {
        return Err(EngineError::Invalid(format!("queries have d = {}, index has d = {}", queries.d(), index.params().d)));
    }
    execute(index, backend, queries.as_slice(), k, concurrency, 0..index.params().r)
}

pub fn ann_query(index: &Index, backend: &dyn StorageBackend, q: &[f32], k: usize) -> Result<QueryResult, EngineError> {
    if q.len() != index.params().d {
        return Err(EngineError::Invalid(format!("query has d = {}, index has d = {}", q.len(), index.params().d)));
    }
    let conc = Concurrency { workers: 1, interleave: 2 };
    let mut batch = execute(index, backend, q, k, conc, 0..index.params().r)?;
    batch.results.pop().unwrap()
}

/// Single-radius search; reports the closest examined object if it lies within `c * R`.
pub fn rcnn_search(
    index: &Index,
    backend: &dyn StorageBackend,
    q: &[f32],
    radius_index: usize,
) -> Result<RcnnReport, EngineError> {
    let params = index.params();
    if q.len() != params.d {
        return Err(EngineError::Invalid(format!("query has d = {}, index has d = {}", q.len(), params.d)));
    }
    if radius_index >= params.r {
        return Err(EngineError::Invalid(format!("radius index {radius_index} outside schedule of {}", params.r)));
    }
    let conc = Concurrency { workers: 1, interleave: 2 };
    let mut batch = execute(index, backend, q, 1, conc, radius_index..radius_index + 1)?;
    let r = batch.results.pop().unwrap()?;
    let c_r = (params.c * params.radius(radius_index)) as f32;
    Ok(RcnnReport {
        found: r.neighbors.first().copied().filter(|n| n.distance <= c_r),
        candidates: r.candidates,
        n_io: r.n_io(),
    })
}
