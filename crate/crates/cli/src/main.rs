mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use e2lshos::cost::{predict, required_read_iops, required_request_rate, CostModelInputs, Mode};
use e2lshos::eval::{bench, generate_synthetic, ground_truth, overall_ratio, write_csv, BenchConfig, SyntheticKind, DEFAULT_ZERO_PENALTY};
use e2lshos::storage::{BackendConfig, BackendKind};
use e2lshos::{build_index, load_dataset, params_for, run_batch, verify_index, write_dataset, Concurrency, Dataset, FileFormat, Index};

#[derive(Parser)]
#[command(name = "e2lshos", version, about = "Storage-resident E2LSH index: build, query, benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset and query set.
    Gen(GenArgs),
    /// Build an on-disk index.
    Build(BuildArgs),
    /// Audit an index against its dataset.
    Verify(VerifyArgs),
    /// Run a query batch against an index.
    Query(QueryArgs),
    /// Build and query over a grid of settings.
    Bench(BenchArgs),
    /// Evaluate the latency cost models.
    Cost(CostArgs),
}

#[derive(Args)]
struct DatasetArgs {
    /// Dataset file (.fvecs, .bvecs, or .f32 raw).
    #[arg(long)]
    dataset: PathBuf,
    /// Overrides the format inferred from the extension.
    #[arg(long)]
    format: Option<FileFormat>,
}

impl DatasetArgs {
    fn load(&self) -> Result<Dataset> {
        load_file(&self.dataset, self.format)
    }
}

fn load_file(path: &Path, format: Option<FileFormat>) -> Result<Dataset> {
    let format = match format.or_else(|| FileFormat::from_path(path)) {
        Some(f) => f,
        None => bail!("cannot infer format of {}; pass --format", path.display()),
    };
    load_dataset(path, format).with_context(|| format!("loading {}", path.display()))
}

#[derive(Args)]
struct GenArgs {
    /// uniform or gaussian-clusters.
    #[arg(long, default_value = "uniform")]
    kind: SyntheticKind,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 1000)]
    queries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    out_queries: PathBuf,
}

#[derive(Args)]
struct ParamArgs {
    #[arg(long, default_value_t = 2.0)]
    c: f64,
    #[arg(long, default_value_t = 4.0)]
    w: f64,
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Largest absolute coordinate; computed from the data when omitted.
    #[arg(long)]
    xmax: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BuildArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[command(flatten)]
    params: ParamArgs,
    /// Scale the candidate cap by n^(1 - gamma) when gamma < 1.
    #[arg(long)]
    compensate_cap: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    index: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
}

#[derive(Args)]
struct BackendArgs {
    /// key = value backend configuration file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// memory, file or sim.
    #[arg(long)]
    backend: Option<BackendKind>,
    #[arg(long)]
    queue_capacity: Option<usize>,
    #[arg(long)]
    sim_read_latency_us: Option<f64>,
    #[arg(long)]
    sim_max_parallel: Option<usize>,
    #[arg(long)]
    sim_request_overhead_ns: Option<u64>,
}

impl BackendArgs {
    fn resolve(&self) -> Result<BackendConfig> {
        let mut cfg = config::load(self.config.as_deref())?;
        if let Some(kind) = self.backend {
            cfg.kind = kind;
        }
        if let Some(q) = self.queue_capacity {
            cfg.queue_capacity = q;
        }
        if let Some(us) = self.sim_read_latency_us {
            cfg.sim.read_latency = Duration::from_secs_f64(us * 1e-6);
        }
        if let Some(p) = self.sim_max_parallel {
            cfg.sim.max_parallel = p;
        }
        if let Some(ns) = self.sim_request_overhead_ns {
            cfg.sim.request_overhead = Duration::from_nanos(ns);
        }
        Ok(cfg)
    }
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Report {
    Json,
    Csv,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Queries in flight per worker; 1 issues one read at a time.
    #[arg(long, default_value_t = 16)]
    interleave: usize,
    /// Compute overall ratios against brute-force ground truth.
    #[arg(long)]
    ratio: bool,
    #[arg(long, value_enum, default_value = "json")]
    report: Report,
    /// Per-query report destination; stdout when omitted (json only).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DatasetArgs,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[command(flatten)]
    params: ParamArgs,
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    gammas: Vec<f64>,
    /// Scale the candidate cap by n^(1 - gamma) when gamma < 1.
    #[arg(long)]
    compensate_cap: bool,
    #[arg(long, value_delimiter = ',', default_value = "memory")]
    backends: Vec<BackendKind>,
    /// Comma-separated workers:interleave pairs.
    #[arg(long, value_delimiter = ',', default_value = "1:16")]
    concurrency: Vec<String>,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    work_dir: PathBuf,
    #[arg(long)]
    jsonl: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    t_compute_ns: f64,
    #[arg(long)]
    n_io: f64,
    #[arg(long, default_value_t = 0.0)]
    t_request_ns: f64,
    #[arg(long, default_value_t = 0.0)]
    t_read_ns: f64,
    #[arg(long, default_value = "async")]
    mode: Mode,
    /// Target per-query latency; prints required IOPS and request rate.
    #[arg(long)]
    target_ns: Option<f64>,
}

#[derive(Serialize)]
struct QueryRow {
    query: usize,
    neighbors: String,
    distances: String,
    partial: bool,
    radii_searched: usize,
    n_io: u64,
    table_reads: u64,
    block_reads: u64,
    empty_slots: u64,
    candidates: u64,
    fingerprint_rejects: u64,
    latency_us: f64,
    ratio: Option<f64>,
    error: Option<String>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::Build(a) => build(a),
        Command::Verify(a) => verify(a),
        Command::Query(a) => query(a),
        Command::Bench(a) => run_bench(a),
        Command::Cost(a) => cost(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let (data, queries) = generate_synthetic(a.kind, a.n, a.d, a.queries, a.seed);
    for (path, ds) in [(&a.out, &data), (&a.out_queries, &queries)] {
        let format = FileFormat::from_path(path).unwrap_or(FileFormat::F32Raw);
        write_dataset(path, ds, format).with_context(|| format!("writing {}", path.display()))?;
    }
    eprintln!("wrote {} x {} points and {} queries", data.n(), data.d(), queries.n());
    Ok(())
}

fn build(a: BuildArgs) -> Result<()> {
    let data = a.data.load()?;
    let p = &a.params;
    let mut params = params_for(&data, p.c, p.w, p.gamma, p.xmax, p.seed)?;
    if a.compensate_cap {
        params = params.with_compensated_cap();
    }
    build_index(&data, &params, &a.out)?;
    println!("{}", serde_json::to_string_pretty(&params)?);
    Ok(())
}

fn verify(a: VerifyArgs) -> Result<()> {
    let data = a.data.load()?;
    let report = verify_index(&a.index, &data)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if !report.is_clean() {
        bail!("{} invariant violations", report.violations.len());
    }
    Ok(())
}

fn query(a: QueryArgs) -> Result<()> {
    let data = Arc::new(a.data.load()?);
    let queries = load_file(&a.queries, a.data.format)?;
    let index = Index::open(&a.index, Arc::clone(&data))?;
    let backend = index.open_backend(&a.backend.resolve()?)?;
    let batch = run_batch(&index, backend.as_ref(), &queries, a.k, Concurrency { workers: a.workers, interleave: a.interleave })?;
    let truth = a.ratio.then(|| ground_truth(&data, &queries, a.k));

    let rows: Vec<QueryRow> = batch
        .results
        .iter()
        .enumerate()
        .map(|(i, r)| match r {
            Ok(r) => QueryRow {
                query: i,
                neighbors: join(r.neighbors.iter().map(|n| n.id)),
                distances: join(r.neighbors.iter().map(|n| n.distance)),
                partial: r.partial,
                radii_searched: r.radii_searched,
                n_io: r.n_io(),
                table_reads: r.table_reads,
                block_reads: r.block_reads,
                empty_slots: r.empty_slots,
                candidates: r.candidates,
                fingerprint_rejects: r.fingerprint_rejects,
                latency_us: r.latency.as_secs_f64() * 1e6,
                ratio: truth.as_ref().map(|t| overall_ratio(&r.neighbors, &t[i], a.k, DEFAULT_ZERO_PENALTY).value),
                error: None,
            },
            Err(e) => QueryRow {
                query: i,
                neighbors: String::new(),
                distances: String::new(),
                partial: true,
                radii_searched: 0,
                n_io: 0,
                table_reads: 0,
                block_reads: 0,
                empty_slots: 0,
                candidates: 0,
                fingerprint_rejects: 0,
                latency_us: 0.0,
                ratio: None,
                error: Some(e.to_string()),
            },
        })
        .collect();

    match (a.report, &a.output) {
        (Report::Csv, Some(path)) => write_csv(path, &rows)?,
        (Report::Csv, None) => bail!("--report csv needs --output"),
        (Report::Json, out) => {
            let mut w: Box<dyn Write> = match out {
                Some(p) => Box::new(BufWriter::new(File::create(p)?)),
                None => Box::new(std::io::stdout().lock()),
            };
            for row in &rows {
                writeln!(w, "{}", serde_json::to_string(row)?)?;
            }
            w.flush()?;
        }
    }
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r.ratio).filter(|r| r.is_finite()).collect();
    let mut summary = serde_json::to_value(&batch.stats)?;
    if !ratios.is_empty() {
        summary["overall_ratio"] = (ratios.iter().sum::<f64>() / ratios.len() as f64).into();
    }
    eprintln!("{summary}");
    if batch.stats.failed > 0 {
        bail!("{} of {} queries failed", batch.stats.failed, batch.stats.queries);
    }
    Ok(())
}

fn join<T: ToString>(it: impl Iterator<Item = T>) -> String {
    it.map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn run_bench(a: BenchArgs) -> Result<()> {
    let data = Arc::new(a.data.load()?);
    let queries = load_file(&a.queries, a.data.format)?;
    let base = a.backend.resolve()?;
    let backends = a.backends.iter().map(|&kind| BackendConfig { kind, ..base.clone() }).collect();
    let concurrency = a
        .concurrency
        .iter()
        .map(|s| {
            let (w, q) = s.split_once(':').with_context(|| format!("expected workers:interleave, got {s:?}"))?;
            Ok(Concurrency { workers: w.parse()?, interleave: q.parse()? })
        })
        .collect::<Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        k: a.k,
        c: a.params.c,
        w: a.params.w,
        gammas: a.gammas,
        x_max: a.params.xmax,
        seed: a.params.seed,
        compensate_cap: a.compensate_cap,
        backends,
        concurrency,
        work_dir: a.work_dir,
    };
    let mut out = BufWriter::new(File::create(&a.jsonl).with_context(|| format!("creating {}", a.jsonl.display()))?);
    let rows = bench(data, &queries, &cfg, &mut out, a.csv.as_deref())?;
    out.flush()?;
    for r in &rows {
        eprintln!(
            "gamma={} {} W={} Q={}: ratio {:.4} n_io {:.1} qps {:.0}{}",
            r.gamma,
            r.backend,
            r.workers,
            r.interleave,
            r.overall_ratio,
            r.mean_n_io,
            r.qps,
            if r.error.is_empty() { String::new() } else { format!(" error: {}", r.error) }
        );
    }
    Ok(())
}

fn cost(a: CostArgs) -> Result<()> {
    let inp = CostModelInputs { t_compute_ns: a.t_compute_ns, n_io: a.n_io, t_request_ns: a.t_request_ns, t_read_ns: a.t_read_ns };
    inp.validate()?;
    let mut out = serde_json::to_value(predict(&inp))?;
    if let Some(target) = a.target_ns {
        out["required_read_iops"] = required_read_iops(target, &inp, a.mode)?.into();
        if a.mode == Mode::Async {
            out["required_request_rate"] = required_request_rate(target, &inp)?.into();
        }
    }
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}
