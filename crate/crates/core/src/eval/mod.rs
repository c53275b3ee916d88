//! Ground truth, accuracy metrics, synthetic workloads and benchmark grids.

mod bench;
mod metrics;
mod synth;

pub use bench::{bench, write_csv, BenchConfig, BenchError, BenchRow};
pub use metrics::{brute_force_topk, ground_truth, log_log_slope, mean_ratio, overall_ratio, Ratio, DEFAULT_ZERO_PENALTY};
pub use synth::{generate_planted, generate_synthetic, verify_planted, PlantedInstance, SyntheticKind, DEFAULT_QUERIES};
