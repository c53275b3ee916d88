use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::dataset::{Dataset, ElementKind};
use crate::lsh::euclidean;

pub const DEFAULT_QUERIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticKind {
    /// Uniform on `[0, 1]^d`.
    Uniform,
    /// Isotropic Gaussians with standard deviation `spread` around centers
    /// drawn uniformly from `[0, 1]^d`.
    GaussianClusters { clusters: usize, spread: f32 },
}

impl std::str::FromStr for SyntheticKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "gaussian-clusters" | "gauss" => Ok(Self::GaussianClusters { clusters: 16, spread: 0.05 }),
            other => Err(format!("unknown synthetic kind {other:?} (uniform|gaussian-clusters)")),
        }
    }
}

fn sample_rows(kind: SyntheticKind, count: usize, d: usize, centers: &[f32], rng: &mut ChaCha8Rng) -> Vec<f32> {
    let mut out = Vec::with_capacity(count * d);
    match kind {
        SyntheticKind::Uniform => out.extend((0..count * d).map(|_| rng.random::<f32>())),
        SyntheticKind::GaussianClusters { clusters, spread } => {
            let noise = Normal::new(0.0f32, spread).expect("finite spread");
            for _ in 0..count {
                let c = rng.random_range(0..clusters);
                out.extend(centers[c * d..(c + 1) * d].iter().map(|&m| m + noise.sample(rng)));
            }
        }
    }
    out
}

/// Dataset of `n` points plus `queries` held-out points from the same distribution.
pub fn generate_synthetic(kind: SyntheticKind, n: usize, d: usize, queries: usize, seed: u64) -> (Dataset, Dataset) {
    assert!(n >= 1 && d >= 1, "n and d must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f32> = match kind {
        SyntheticKind::GaussianClusters { clusters, spread } => {
            assert!(clusters >= 1 && spread > 0.0, "clusters and spread must be positive");
            (0..clusters * d).map(|_| rng.random::<f32>()).collect()
        }
        SyntheticKind::Uniform => Vec::new(),
    };
    let data = sample_rows(kind, n, d, &centers, &mut rng);
    let held_out = sample_rows(kind, queries, d, &centers, &mut rng);
    (
        Dataset::new(d, data, ElementKind::F32).expect("finite samples"),
        Dataset::new(d, held_out, ElementKind::F32).expect("finite samples"),
    )
}

/// A query with exactly one object within `radius` and all others at least `c * radius` away.
#[derive(Debug, Clone)]
pub struct PlantedInstance {
    pub dataset: Dataset,
    pub query: Vec<f32>,
    pub planted: usize,
    pub radius: f32,
    pub c: f32,
}

fn random_direction(d: usize, rng: &mut ChaCha8Rng) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Background objects lie at distance `c * radius * (1 + t)`, `t ~ U[0, 1)`,
/// from the query in random directions; the planted object is at `radius * U[0.5, 1)`.
pub fn generate_planted(n: usize, d: usize, radius: f32, c: f32, seed: u64) -> PlantedInstance {
    assert!(n >= 1 && d >= 1 && radius > 0.0 && c > 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let query: Vec<f32> = (0..d).map(|_| rng.random::<f32>() * 4.0 * c * radius).collect();
    let planted = rng.random_range(0..n);
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let dist = if i == planted {
            radius * (0.5 + 0.5 * rng.random::<f32>())
        } else {
            // the margin absorbs f32 rounding of the placed point
            c * radius * (1.0 + 1e-3 + rng.random::<f32>())
        };
        let dir = random_direction(d, &mut rng);
        data.extend(query.iter().zip(&dir).map(|(q, u)| q + dist * u));
    }
    let dataset = Dataset::new(d, data, ElementKind::F32).expect("finite samples");
    let inst = PlantedInstance { dataset, query, planted, radius, c };
    debug_assert!(verify_planted(&inst));
    inst
}

/// Exhaustive check of the planted-instance promise.
pub fn verify_planted(inst: &PlantedInstance) -> bool {
    inst.dataset.rows().enumerate().all(|(i, row)| {
        let dist = euclidean(&inst.query, row);
        if i == inst.planted {
            dist <= inst.radius
        } else {
            dist >= inst.c * inst.radius
        }
    })
}
