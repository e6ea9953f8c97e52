//! Wall-clock latency harness.
//!
//! Median-of-iterations reporting after a warmup, with a fixed thread
//! count. Host-CPU numbers only: edge-GPU latencies and their speedup
//! factors are hardware-specific and are not reproduced by this harness.

use std::time::Instant;

use anyhow::bail;
use serde::{Deserialize, Serialize};

pub const HOST_NOTE: &str =
    "host-CPU wall times; edge-GPU latencies and speedups are hardware-specific and not measured here";

pub const MIN_ITERS: usize = 30;
pub const MIN_WARMUP: usize = 5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchResult {
    pub label: String,
    pub precision: String,
    pub input_dims: Vec<usize>,
    pub warmup: usize,
    pub iters: usize,
    pub threads: usize,
    pub times_ms: Vec<f64>,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub note: String,
}

pub fn bench(
    label: &str,
    precision: &str,
    input_dims: &[usize],
    iters: usize,
    warmup: usize,
    threads: usize,
    mut run: impl FnMut() -> anyhow::Result<()>,
) -> anyhow::Result<BenchResult> {
    if iters < MIN_ITERS {
        bail!("need at least {MIN_ITERS} iterations, got {iters}");
    }
    if warmup < MIN_WARMUP {
        bail!("need at least {MIN_WARMUP} warmup runs, got {warmup}");
    }
    for _ in 0..warmup {
        run()?;
    }
    let mut times_ms = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        run()?;
        times_ms.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = times_ms.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let pick = |q: f64| sorted[((sorted.len() - 1) as f64 * q).round() as usize];
    Ok(BenchResult {
        label: label.into(),
        precision: precision.into(),
        input_dims: input_dims.to_vec(),
        warmup,
        iters,
        threads,
        median_ms: pick(0.5),
        p10_ms: pick(0.1),
        p90_ms: pick(0.9),
        times_ms,
        note: HOST_NOTE.into(),
    })
}
