use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::engine::Neighbor;
use crate::lsh::euclidean;

/// Ratio term charged when the true distance is zero but the result is not.
pub const DEFAULT_ZERO_PENALTY: f64 = 100.0;

/// Exact top-`k` by exhaustive scan, ascending by distance then id.
pub fn brute_force_topk(dataset: &Dataset, q: &[f32], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<Neighbor> = dataset
        .rows()
        .enumerate()
        .map(|(i, row)| Neighbor { id: i as u32, distance: euclidean(q, row) })
        .collect();
    let k = k.min(all.len());
    if k == 0 {
        return Vec::new();
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, |a, b| a.cmp_key(b));
        all.truncate(k);
    }
    all.sort_by(|a, b| a.cmp_key(b));
    all
}

pub fn ground_truth(dataset: &Dataset, queries: &Dataset, k: usize) -> Vec<Vec<Neighbor>> {
    (0..queries.n()).into_par_iter().map(|i| brute_force_topk(dataset, queries.row(i), k)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ratio {
    pub value: f64,
    /// Terms averaged; below `k` when the result list was short.
    pub terms: usize,
    pub partial: bool,
    /// Terms where the truth was at distance zero but the result was not.
    pub zero_truth_misses: usize,
}

/// Mean of `result_i / truth_i` over the first `k` ranks.
pub fn overall_ratio(results: &[Neighbor], truth: &[Neighbor], k: usize, zero_penalty: f64) -> Ratio {
    let terms = k.min(results.len()).min(truth.len());
    let mut sum = 0.0;
    let mut misses = 0;
    for (r, t) in results.iter().zip(truth).take(terms) {
        let (r, t) = (f64::from(r.distance), f64::from(t.distance));
        sum += if t > 0.0 {
            r / t
        } else if r == 0.0 {
            1.0
        } else {
            misses += 1;
            zero_penalty
        };
    }
    if misses > 0 {
        log::warn!("{misses} ratio terms with zero true distance and nonzero result distance");
    }
    Ratio {
        value: if terms == 0 { f64::NAN } else { sum / terms as f64 },
        terms,
        partial: terms < k,
        zero_truth_misses: misses,
    }
}

/// Mean overall ratio across queries and the number of partial answers.
pub fn mean_ratio(results: &[Vec<Neighbor>], truth: &[Vec<Neighbor>], k: usize) -> (f64, usize) {
    let ratios: Vec<Ratio> =
        results.iter().zip(truth).map(|(r, t)| overall_ratio(r, t, k, DEFAULT_ZERO_PENALTY)).collect();
    let valid: Vec<f64> = ratios.iter().filter(|r| r.terms > 0).map(|r| r.value).collect();
    let mean = valid.iter().sum::<f64>() / valid.len().max(1) as f64;
    (mean, ratios.iter().filter(|r| r.partial).count())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / m;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
