//! Euclidean LSH primitives: projection hashes, compound hashes, the closed-form
//! collision probability and derivation of the `(m, L, S)` parameters.
//!
//! Everything here is pure. Hash functions are derived from a master seed through
//! a counter-based stream (ChaCha8 with one stream per `(radius, table, function)`
//! tuple), so any single function can be regenerated without replaying the others.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

/// Identifier of the tuple-to-32-bit mixing rule, recorded in index manifests.
pub const MIX_RULE: &str = "fmix64-fold-v1";
/// Identifier of the projection sampler, recorded in index manifests.
pub const SAMPLER: &str = "chacha8-stream/box-muller-cos";

#[derive(Debug, Error, PartialEq)]
pub enum LshError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("gamma {gamma} must exceed rho {rho} to keep query time sublinear")]
    GammaBelowRho { gamma: f64, rho: f64 },
}

pub type Result<T> = std::result::Result<T, LshError>;

/// A single projection hash `floor((a.o + b) / w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LshFunction {
    pub a: Vec<f32>,
    pub b: f32,
    pub w: f32,
}

impl LshFunction {
    pub fn new(a: Vec<f32>, b: f32, w: f32) -> Result<Self> {
        if !(w > 0.0) || !w.is_finite() {
            return Err(LshError::InvalidParameter(format!("bucket width {w}")));
        }
        if !(0.0..w).contains(&b) {
            return Err(LshError::InvalidParameter(format!("offset {b} not in [0, {w})")));
        }
        if a.iter().any(|x| !x.is_finite()) {
            return Err(LshError::InvalidParameter("non-finite projection".into()));
        }
        Ok(Self { a, b, w })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// Bucket index of `o` with coordinates divided by `radius` first.
    #[inline]
    pub fn hash_scaled(&self, o: &[f32], radius: f32) -> i32 {
        bucket_index(dot(&self.a, o), radius, self.b, self.w)
    }
}

#[inline]
fn bucket_index(projection: f32, radius: f32, b: f32, w: f32) -> i32 {
    // `as` saturates for out-of-range floats
    ((projection / radius + b) / w).floor() as i32
}

/// Evaluates one projection hash on a point.
pub fn hash_point(f: &LshFunction, o: &[f32]) -> Result<i32> {
    if o.len() != f.dim() {
        return Err(LshError::DimensionMismatch { expected: f.dim(), actual: o.len() });
    }
    Ok(f.hash_scaled(o, 1.0))
}

/// 32-bit compound hash value; the high bits become the table key and the low
/// bits the stored fingerprint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HashValue32(pub u32);

/// `m` projection hashes folded into one [`HashValue32`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompoundHash {
    pub functions: Vec<LshFunction>,
    pub mix_seed: u64,
}

impl CompoundHash {
    pub fn dim(&self) -> usize {
        self.functions.first().map_or(0, LshFunction::dim)
    }

    /// Hashes `o` as seen at search radius `radius` (coordinates divided by it).
    #[inline]
    pub fn hash_scaled(&self, o: &[f32], radius: f32) -> HashValue32 {
        mix_tuple(self.mix_seed, self.functions.iter().map(|f| f.hash_scaled(o, radius)))
    }
}

/// Compound hash at unit radius.
pub fn compound_hash(g: &CompoundHash, o: &[f32]) -> Result<HashValue32> {
    if o.len() != g.dim() {
        return Err(LshError::DimensionMismatch { expected: g.dim(), actual: o.len() });
    }
    Ok(g.hash_scaled(o, 1.0))
}

#[inline]
fn fmix64(mut h: u64) -> u64 {
    h ^= h >> 33;
    h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^= h >> 33;
    h = h.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    h ^= h >> 33;
    h
}

/// Folds an integer tuple into 32 bits: xor each value into the state, then run
/// the murmur3 64-bit finalizer; the low 32 bits of the final state are kept.
#[inline]
pub fn mix_tuple(seed: u64, values: impl IntoIterator<Item = i32>) -> HashValue32 {
    let mut h = fmix64(seed ^ 0x9e37_79b9_7f4a_7c15);
    for v in values {
        h = fmix64(h ^ u64::from(v as u32));
    }
    HashValue32(h as u32)
}

/// Dot product with eight independent accumulators (vectorizes without fast-math).
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    acc.iter().sum::<f32>() + tail
}

/// Euclidean distance, same accumulation scheme as [`dot`].
#[inline]
pub fn euclidean(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            let t = x[i] - y[i];
            acc[i] += t * t;
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ra.iter().zip(rb) {
        let t = x - y;
        tail += t * t;
    }
    (acc.iter().sum::<f32>() + tail).sqrt()
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Probability that two points at distance `s` share a bucket of width `w` under
/// a Gaussian projection hash. Depends only on `w / s`.
pub fn collision_probability(s: f64, w: f64) -> Result<f64> {
    if !(w > 0.0) || !w.is_finite() {
        return Err(LshError::InvalidParameter(format!("bucket width {w}")));
    }
    if !(s >= 0.0) {
        return Err(LshError::InvalidParameter(format!("distance {s}")));
    }
    if s == 0.0 {
        return Ok(1.0);
    }
    let t = w / s;
    let p = 1.0
        - 2.0 * std_normal_cdf(-t)
        - 2.0 / ((2.0 * std::f64::consts::PI).sqrt() * t) * (1.0 - (-t * t / 2.0).exp());
    Ok(p.clamp(0.0, 1.0))
}

/// The increasing radius ladder `1, c, c^2, ...` covering `R_max = 2 x_max sqrt(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadiusSchedule {
    pub r_max: f64,
    pub radii: Vec<f64>,
}

impl RadiusSchedule {
    pub fn count(&self) -> usize {
        self.radii.len()
    }
}

pub fn radius_schedule(x_max: f64, d: usize, c: f64) -> Result<RadiusSchedule> {
    if !(x_max > 0.0) || !x_max.is_finite() {
        return Err(LshError::InvalidParameter(format!("x_max {x_max}")));
    }
    if d == 0 {
        return Err(LshError::InvalidParameter("dimension 0".into()));
    }
    if !(c > 1.0) || !c.is_finite() {
        return Err(LshError::InvalidParameter(format!("approximation ratio {c}")));
    }
    let r_max = 2.0 * x_max * (d as f64).sqrt();
    // smallest r with c^r >= R_max, i.e. ceil(log_c R_max) without log round-off
    let mut r = 0usize;
    let mut reach = 1.0f64;
    while reach < r_max {
        reach *= c;
        r += 1;
    }
    let r = r.max(1);
    let radii = (0..r).map(|i| c.powi(i as i32)).collect();
    Ok(RadiusSchedule { r_max, radii })
}

/// All tuning constants of a built index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    pub n: u64,
    pub d: usize,
    pub c: f64,
    pub w: f64,
    pub gamma: f64,
    pub rho: f64,
    pub p1: f64,
    pub p2: f64,
    /// Projections per compound hash.
    pub m: usize,
    /// Compound hashes per radius.
    pub l: usize,
    /// Candidate cap per radius.
    pub s: u64,
    /// Number of radii.
    pub r: usize,
    pub r_max: f64,
    pub x_max: f64,
    pub seed: u64,
}

impl ParamSet {
    pub fn radii(&self) -> Vec<f64> {
        (0..self.r).map(|i| self.c.powi(i as i32)).collect()
    }

    pub fn radius(&self, index: usize) -> f64 {
        self.c.powi(index as i32)
    }

    /// Number of `(radius, table)` pairs.
    pub fn table_count(&self) -> usize {
        self.l * self.r
    }

    /// Replaces `S = 2L` with the cap that keeps the far-collision bound at
    /// one half when `gamma < 1`: each table admits at most `n^(1 - gamma)`
    /// far objects in expectation, so `S = 2L * n^(1 - gamma)`.
    pub fn with_compensated_cap(mut self) -> Self {
        self.s = compensated_cap(self.n, self.l, self.gamma);
        self
    }
}

/// `ceil(2L * max(1, n^(1 - gamma)))`; equals `2L` for `gamma >= 1`.
pub fn compensated_cap(n: u64, l: usize, gamma: f64) -> u64 {
    let excess = (n as f64).powf(1.0 - gamma).max(1.0);
    // absorbs powf rounding so exact powers of ten stay integral
    (2.0 * l as f64 * excess - 1e-6).ceil() as u64
}

pub fn compute_params(
    n: u64,
    d: usize,
    c: f64,
    w: f64,
    gamma: f64,
    x_max: f64,
    seed: u64,
) -> Result<ParamSet> {
    if n == 0 {
        return Err(LshError::InvalidParameter("empty dataset".into()));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(LshError::InvalidParameter(format!("gamma {gamma}")));
    }
    let schedule = radius_schedule(x_max, d, c)?;
    let p1 = collision_probability(1.0, w)?;
    let p2 = collision_probability(c, w)?;
    let rho = (1.0 / p1).ln() / (1.0 / p2).ln();
    if !(rho > 0.0 && rho < 1.0) {
        return Err(LshError::InvalidParameter(format!("rho {rho} outside (0, 1)")));
    }
    if gamma <= rho {
        return Err(LshError::GammaBelowRho { gamma, rho });
    }
    let ln_n = (n as f64).ln();
    let m = ((gamma * ln_n / (1.0 / p2).ln()).ceil() as usize).max(1);
    let l = ((n as f64).powf(rho).ceil() as usize).max(1);
    Ok(ParamSet {
        n,
        d,
        c,
        w,
        gamma,
        rho,
        p1,
        p2,
        m,
        l,
        s: 2 * l as u64,
        r: schedule.count(),
        r_max: schedule.r_max,
        x_max,
        seed,
    })
}

fn stream_id(radius: usize, table: usize, function: usize) -> u64 {
    debug_assert!(radius < 1 << 16 && table < 1 << 24 && function < 1 << 24);
    ((radius as u64) << 48) | ((table as u64) << 24) | function as u64
}

const MIX_SEED_FUNCTION: usize = (1 << 24) - 1;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[inline]
fn unit_f64(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = 1.0 - unit_f64(rng);
    let u2 = unit_f64(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Regenerates function `function` of compound hash `table` at radius index `radius`.
pub fn derive_function(seed: u64, radius: usize, table: usize, function: usize, d: usize, w: f64) -> LshFunction {
    let mut rng = stream(seed, stream_id(radius, table, function));
    let a = (0..d).map(|_| std_normal(&mut rng) as f32).collect();
    let w32 = w as f32;
    let mut b = (unit_f64(&mut rng) * w) as f32;
    if b >= w32 {
        b = w32.next_down();
    }
    LshFunction { a, b, w: w32 }
}

pub fn derive_compound(seed: u64, radius: usize, table: usize, m: usize, d: usize, w: f64) -> CompoundHash {
    let functions = (0..m).map(|j| derive_function(seed, radius, table, j, d, w)).collect();
    let mix_seed = stream(seed, stream_id(radius, table, MIX_SEED_FUNCTION)).next_u64();
    CompoundHash { functions, mix_seed }
}

/// The full set of `r * L` compound hashes of an index, ordered radius-major.
#[derive(Debug, Clone)]
pub struct HashFamily {
    radii: Vec<f32>,
    l: usize,
    d: usize,
    tables: Vec<CompoundHash>,
}

impl HashFamily {
    pub fn new(params: &ParamSet) -> Self {
        let tables = (0..params.r)
            .flat_map(|ri| (0..params.l).map(move |l| (ri, l)))
            .map(|(ri, l)| derive_compound(params.seed, ri, l, params.m, params.d, params.w))
            .collect();
        Self {
            radii: params.radii().into_iter().map(|r| r as f32).collect(),
            l: params.l,
            d: params.d,
            tables,
        }
    }

    pub fn radius_count(&self) -> usize {
        self.radii.len()
    }

    pub fn tables_per_radius(&self) -> usize {
        self.l
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn compound(&self, radius: usize, table: usize) -> &CompoundHash {
        &self.tables[radius * self.l + table]
    }

    /// Hash of `o` in table `table` at radius index `radius`, with per-radius scaling.
    #[inline]
    pub fn hash(&self, radius: usize, table: usize, o: &[f32]) -> HashValue32 {
        self.compound(radius, table).hash_scaled(o, self.radii[radius])
    }

    pub fn check_dim(&self, o: &[f32]) -> Result<()> {
        if o.len() != self.d {
            return Err(LshError::DimensionMismatch { expected: self.d, actual: o.len() });
        }
        Ok(())
    }
}
