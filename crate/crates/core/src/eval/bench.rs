use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use super::metrics::{ground_truth, overall_ratio, DEFAULT_ZERO_PENALTY};
use crate::builder::{build_index, params_for, BuildError};
use crate::dataset::Dataset;
use crate::engine::{run_batch, Concurrency, EngineError, Index, Neighbor};
use crate::lsh::{LshError, ParamSet};
use crate::storage::BackendConfig;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error(transparent)]
    Params(#[from] LshError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("report: {0}")]
    Report(String),
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub k: usize,
    pub c: f64,
    pub w: f64,
    pub gammas: Vec<f64>,
    pub x_max: Option<f64>,
    pub seed: u64,
    /// Scale `S` by `n^(1 - gamma)` for `gamma < 1`.
    pub compensate_cap: bool,
    pub backends: Vec<BackendConfig>,
    pub concurrency: Vec<Concurrency>,
    /// Indexes are built under `work_dir/gamma-<value>`.
    pub work_dir: PathBuf,
}

/// One grid cell: parameter echo, accuracy, timing and I/O.
#[derive(Debug, Clone, Default, Serialize)]
pub struct BenchRow {
    pub gamma: f64,
    pub backend: String,
    pub workers: usize,
    pub interleave: usize,
    pub n: u64,
    pub d: usize,
    pub k: usize,
    pub m: usize,
    #[serde(rename = "L")]
    pub l: usize,
    pub r: usize,
    #[serde(rename = "S")]
    pub s: u64,
    pub mean_radii: f64,
    pub mean_n_io: f64,
    pub overall_ratio: f64,
    pub partial: usize,
    pub mean_latency_us: f64,
    pub p95_latency_us: f64,
    pub qps: f64,
    pub device_iops: f64,
    pub peak_in_flight: usize,
    pub failed: usize,
    pub error: String,
}

fn index_dir(work_dir: &Path, gamma: f64) -> PathBuf {
    work_dir.join(format!("gamma-{gamma}"))
}

fn row_for(params: &ParamSet, gamma: f64, backend: &BackendConfig, conc: Concurrency, k: usize) -> BenchRow {
    BenchRow {
        gamma,
        backend: format!("{:?}", backend.kind).to_lowercase(),
        workers: conc.workers,
        interleave: conc.interleave,
        n: params.n,
        d: params.d,
        k,
        m: params.m,
        l: params.l,
        r: params.r,
        s: params.s,
        ..Default::default()
    }
}

/// Runs every `(gamma, backend, concurrency)` cell. Per-query records and one
/// summary line per cell go to `jsonl`; summaries also go to `csv` when given.
/// A failing cell is recorded with its error and the grid continues.
pub fn bench(
    dataset: Arc<Dataset>,
    queries: &Dataset,
    cfg: &BenchConfig,
    jsonl: &mut dyn Write,
    csv: Option<&Path>,
) -> Result<Vec<BenchRow>, BenchError> {
    let truth = ground_truth(&dataset, queries, cfg.k);
    let mut rows = Vec::new();
    let emit = |value: serde_json::Value, out: &mut dyn Write| -> Result<(), BenchError> {
        writeln!(out, "{value}").map_err(|e| BenchError::Report(e.to_string()))
    };
    for &gamma in &cfg.gammas {
        let mut params = params_for(&dataset, cfg.c, cfg.w, gamma, cfg.x_max, cfg.seed)?;
        if cfg.compensate_cap {
            params = params.with_compensated_cap();
        }
        let dir = index_dir(&cfg.work_dir, gamma);
        let opened = build_index(&dataset, &params, &dir)
            .map_err(BenchError::from)
            .and_then(|_| Index::open(&dir, Arc::clone(&dataset)).map_err(BenchError::from));
        for backend_cfg in &cfg.backends {
            for &conc in &cfg.concurrency {
                let cell = rows.len();
                let mut row = row_for(&params, gamma, backend_cfg, conc, cfg.k);
                let outcome = match &opened {
                    Ok(index) => index
                        .open_backend(backend_cfg)
                        .and_then(|b| run_batch(index, b.as_ref(), queries, cfg.k, conc))
                        .map_err(|e| e.to_string()),
                    Err(e) => Err(e.to_string()),
                };
                match outcome {
                    Err(e) => row.error = e,
                    Ok(batch) => {
                        let mut ratio_sum = 0.0;
                        let mut ratio_count = 0usize;
                        for (qi, res) in batch.results.iter().enumerate() {
                            let record = match res {
                                Ok(r) => {
                                    let ratio = overall_ratio(&r.neighbors, &truth[qi], cfg.k, DEFAULT_ZERO_PENALTY);
                                    if ratio.terms > 0 {
                                        ratio_sum += ratio.value;
                                        ratio_count += 1;
                                    }
                                    row.partial += usize::from(ratio.partial);
                                    json!({
                                        "type": "query", "cell": cell, "query": qi,
                                        "n_io": r.n_io(), "radii": r.radii_searched,
                                        "candidates": r.candidates, "latency_ns": r.latency.as_nanos() as u64,
                                        "ratio": ratio.value, "partial": ratio.partial,
                                        "ids": r.neighbors.iter().map(|n: &Neighbor| n.id).collect::<Vec<_>>(),
                                    })
                                }
                                Err(e) => json!({"type": "query", "cell": cell, "query": qi, "error": e.to_string()}),
                            };
                            emit(record, jsonl)?;
                        }
                        let s = &batch.stats;
                        row.mean_radii = s.mean_radii;
                        row.mean_n_io = s.mean_n_io;
                        row.overall_ratio = ratio_sum / ratio_count.max(1) as f64;
                        row.mean_latency_us = s.mean_latency.as_secs_f64() * 1e6;
                        row.p95_latency_us = s.p95_latency.as_secs_f64() * 1e6;
                        row.qps = s.qps;
                        row.device_iops = s.io.iops;
                        row.peak_in_flight = s.io.peak_in_flight;
                        row.failed = s.failed;
                    }
                }
                let mut summary = serde_json::to_value(&row).map_err(|e| BenchError::Report(e.to_string()))?;
                summary["type"] = json!("summary");
                summary["cell"] = json!(cell);
                emit(summary, jsonl)?;
                rows.push(row);
            }
        }
    }
    if let Some(path) = csv {
        write_csv(path, &rows)?;
    }
    Ok(rows)
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| BenchError::Report(e.to_string()))?;
    for row in rows {
        w.serialize(row).map_err(|e| BenchError::Report(e.to_string()))?;
    }
    w.flush().map_err(|e| BenchError::Report(e.to_string()))
}
