//! `key = value` runtime configuration for storage backends.
//!
//! ```text
//! backend = sim
//! queue_capacity = 128
//! sim.read_latency_us = 100
//! sim.max_parallel = 32
//! sim.request_overhead_ns = 1000
//! file.io_threads = 8
//! file.direct = true
//! ```
//!
//! Blank lines and `#` comments are ignored. Command line flags override file values.

use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use e2lshos::storage::{BackendConfig, BackendKind};

pub fn load(path: Option<&Path>) -> Result<BackendConfig> {
    let mut cfg = BackendConfig::default();
    let Some(path) = path else { return Ok(cfg) };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), lineno + 1);
        };
        apply(&mut cfg, key.trim(), value.trim()).with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
    }
    Ok(cfg)
}

pub fn apply(cfg: &mut BackendConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "backend" => cfg.kind = value.parse::<BackendKind>().map_err(anyhow::Error::msg)?,
        "queue_capacity" => cfg.queue_capacity = value.parse()?,
        "sim.read_latency_us" => cfg.sim.read_latency = Duration::from_secs_f64(value.parse::<f64>()? * 1e-6),
        "sim.max_parallel" => cfg.sim.max_parallel = value.parse()?,
        "sim.request_overhead_ns" => cfg.sim.request_overhead = Duration::from_nanos(value.parse()?),
        "file.io_threads" => cfg.file.io_threads = value.parse()?,
        "file.direct" => cfg.file.direct = value.parse()?,
        other => bail!("unknown configuration key {other:?}"),
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_and_rejects_unknown_keys() {
        let dir = std::env::temp_dir().join(format!("e2lshos-cfg-{}", std::process::id()));
        std::fs::write(&dir, "# device\nbackend = sim\nsim.read_latency_us = 2.5\nsim.max_parallel=4\n").unwrap();
        let cfg = load(Some(&dir)).unwrap();
        assert_eq!(cfg.kind, BackendKind::Sim);
        assert_eq!(cfg.sim.read_latency, Duration::from_nanos(2500));
        assert_eq!(cfg.sim.max_parallel, 4);
        std::fs::write(&dir, "sim.latency = 3\n").unwrap();
        assert!(load(Some(&dir)).is_err());
        std::fs::remove_file(&dir).unwrap();
    }
}
