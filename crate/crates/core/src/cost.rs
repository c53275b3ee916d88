//! Analytic query-time models for storage-resident indexes.
//!
//! All times are `f64` nanoseconds; rates are per second.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("target {target_ns} ns leaves no time beyond T_compute = {t_compute_ns} ns")]
    Infeasible { target_ns: f64, t_compute_ns: f64 },
    #[error("invalid input: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModelInputs {
    /// Hashing plus distance computation per query.
    pub t_compute_ns: f64,
    /// Mean I/Os per query.
    pub n_io: f64,
    /// CPU time to submit one I/O.
    pub t_request_ns: f64,
    /// Device time per I/O.
    pub t_read_ns: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Sync,
    Async,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sync" => Ok(Self::Sync),
            "async" => Ok(Self::Async),
            other => Err(format!("unknown mode {other:?} (sync|async)")),
        }
    }
}

impl CostModelInputs {
    pub fn validate(&self) -> Result<(), CostError> {
        let fields = [self.t_compute_ns, self.n_io, self.t_request_ns, self.t_read_ns];
        if fields.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(CostError::Invalid(format!("all inputs must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Each I/O is submitted and awaited before the next.
pub fn sync_query_time(inp: &CostModelInputs) -> f64 {
    inp.t_compute_ns + inp.n_io * (inp.t_request_ns + inp.t_read_ns)
}

/// I/O fully overlapped with computation: the slower of CPU and device.
pub fn async_query_time(inp: &CostModelInputs) -> f64 {
    (inp.t_compute_ns + inp.n_io * inp.t_request_ns).max(inp.n_io * inp.t_read_ns)
}

pub fn query_time(inp: &CostModelInputs, mode: Mode) -> f64 {
    match mode {
        Mode::Sync => sync_query_time(inp),
        Mode::Async => async_query_time(inp),
    }
}

fn check_target(target_ns: f64) -> Result<(), CostError> {
    if !(target_ns > 0.0) {
        return Err(CostError::Invalid(format!("target {target_ns} must be positive")));
    }
    Ok(())
}

/// Device read rate (IOPS) needed to answer a query within `target_ns`.
pub fn required_read_iops(target_ns: f64, inp: &CostModelInputs, mode: Mode) -> Result<f64, CostError> {
    check_target(target_ns)?;
    inp.validate()?;
    let budget = match mode {
        Mode::Sync => {
            if target_ns <= inp.t_compute_ns {
                return Err(CostError::Infeasible { target_ns, t_compute_ns: inp.t_compute_ns });
            }
            target_ns - inp.t_compute_ns
        }
        Mode::Async => target_ns,
    };
    Ok(inp.n_io / budget * 1e9)
}

/// Submission rate (requests per second) the CPU must sustain to meet `target_ns`.
pub fn required_request_rate(target_ns: f64, inp: &CostModelInputs) -> Result<f64, CostError> {
    check_target(target_ns)?;
    inp.validate()?;
    if target_ns <= inp.t_compute_ns {
        return Err(CostError::Infeasible { target_ns, t_compute_ns: inp.t_compute_ns });
    }
    Ok(inp.n_io / (target_ns - inp.t_compute_ns) * 1e9)
}

/// Request rate when compute is estimated as `compute_fraction` of the target,
/// as for an index whose in-memory query time is the target.
pub fn required_request_rate_in_memory(target_ns: f64, n_io: f64, compute_fraction: f64) -> Result<f64, CostError> {
    if !(0.0..1.0).contains(&compute_fraction) {
        return Err(CostError::Invalid(format!("compute fraction {compute_fraction} outside [0, 1)")));
    }
    let inp = CostModelInputs { t_compute_ns: compute_fraction * target_ns, n_io, t_request_ns: 0.0, t_read_ns: 0.0 };
    required_request_rate(target_ns, &inp)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Prediction {
    pub sync_ns: f64,
    pub async_ns: f64,
    /// CPU side of the async model.
    pub cpu_ns: f64,
    /// Device side of the async model.
    pub io_ns: f64,
}

pub fn predict(inp: &CostModelInputs) -> Prediction {
    Prediction {
        sync_ns: sync_query_time(inp),
        async_ns: async_query_time(inp),
        cpu_ns: inp.t_compute_ns + inp.n_io * inp.t_request_ns,
        io_ns: inp.n_io * inp.t_read_ns,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const US: f64 = 1e3;
    const MS: f64 = 1e6;

    fn inp(tc: f64, n: f64, treq: f64, tread: f64) -> CostModelInputs {
        CostModelInputs { t_compute_ns: tc, n_io: n, t_request_ns: treq, t_read_ns: tread }
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1.0)
    }

    #[test]
    fn sync_examples() {
        assert!(close(sync_query_time(&inp(0.0, 100.0, US, 100.0 * US)), 10.1 * MS));
        assert_eq!(sync_query_time(&inp(123.0, 0.0, US, US)), 123.0);
    }

    #[test]
    fn async_examples() {
        assert!(close(async_query_time(&inp(MS, 500.0, US, US)), 1.5 * MS));
        assert!(close(async_query_time(&inp(MS, 500.0, US, 10.0 * US)), 5.0 * MS));
    }

    #[test]
    fn required_iops_examples() {
        let i = inp(0.0, 347.5, 0.0, 0.0);
        assert!(close(required_read_iops(MS, &i, Mode::Async).unwrap(), 347_500.0));
        assert!(required_read_iops(1e30, &i, Mode::Async).unwrap() < 1e-15);
        let busy = inp(MS, 10.0, 0.0, 0.0);
        assert!(matches!(required_read_iops(MS, &busy, Mode::Sync), Err(CostError::Infeasible { .. })));
        assert!(close(required_read_iops(2.0 * MS, &busy, Mode::Sync).unwrap(), 10_000.0));
    }

    #[test]
    fn request_rate_examples() {
        let target = 2.0 * MS;
        let n = 347.5;
        let expected = 10.0 * n / target * 1e9;
        assert!(close(required_request_rate(target, &inp(0.9 * target, n, 0.0, 0.0)).unwrap(), expected));
        assert!(close(required_request_rate_in_memory(target, n, 0.9).unwrap(), expected));
        assert!(close(
            required_request_rate(target, &inp(0.0, n, 0.0, 0.0)).unwrap(),
            required_read_iops(target, &inp(0.0, n, 0.0, 0.0), Mode::Async).unwrap()
        ));
        assert_eq!(required_request_rate(target, &inp(0.0, 0.0, 0.0, 0.0)).unwrap(), 0.0);
        assert!(required_request_rate(target, &inp(target, n, 0.0, 0.0)).is_err());
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(required_read_iops(MS, &inp(-1.0, 1.0, 0.0, 0.0), Mode::Async).is_err());
        assert!(required_read_iops(0.0, &inp(0.0, 1.0, 0.0, 0.0), Mode::Async).is_err());
        assert!(required_read_iops(MS, &inp(0.0, f64::NAN, 0.0, 0.0), Mode::Async).is_err());
    }

    fn inputs() -> impl Strategy<Value = CostModelInputs> {
        (0.0..1e7f64, 0.0..1e4f64, 0.0..1e4f64, 0.0..1e5f64).prop_map(|(a, b, c, d)| inp(a, b, c, d))
    }

    proptest! {
        #[test]
        fn async_never_exceeds_sync(i in inputs()) {
            prop_assert!(async_query_time(&i) <= sync_query_time(&i) * (1.0 + 1e-12));
        }

        #[test]
        fn async_iops_requirement_is_relaxed(i in inputs(), slack in 1.0..1e7f64) {
            let target = i.t_compute_ns + slack;
            let s = required_read_iops(target, &i, Mode::Sync).unwrap();
            let a = required_read_iops(target, &i, Mode::Async).unwrap();
            prop_assert!(a <= s);
        }

        #[test]
        fn models_monotone(i in inputs(), field in 0usize..4, bump in 0.0..1e5f64) {
            let mut j = i;
            match field {
                0 => j.t_compute_ns += bump,
                1 => j.n_io += bump,
                2 => j.t_request_ns += bump,
                _ => j.t_read_ns += bump,
            }
            prop_assert!(sync_query_time(&j) >= sync_query_time(&i));
            prop_assert!(async_query_time(&j) >= async_query_time(&i));
        }
    }
}
