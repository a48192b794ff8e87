//! Synthetic data and decode latency measurement.

mod synth;

use std::fmt::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

pub use synth::{item_key, synth_dataset, Noise, SynthData, SynthSpec};

use crate::aggregation::ItemRepTable;
use crate::decoder::{
    decode_timed, DecodeConfig, DecodeError, Mode, PhaseTimes, Query, RankedList,
};
use crate::memory::MemorySet;

pub const MIN_REPETITIONS: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("repetitions must be >= {MIN_REPETITIONS} (the first is a warm-up), got {0}")]
    Repetitions(usize),
    #[error("no queries to benchmark")]
    NoQueries,
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub mode: String,
    pub threads: usize,
    pub queries: usize,
    /// Measured repetitions (warm-up excluded).
    pub repetitions: usize,
    /// Mean per-query time in each stage, milliseconds.
    pub scan_ms: f64,
    pub aggregation_ms: f64,
    pub ranking_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub queries_per_second: f64,
    pub memory_bytes: usize,
}

pub struct BenchOutcome {
    pub report: LatencyReport,
    /// Decode results of the final repetition, in query order.
    pub results: Vec<Result<RankedList, DecodeError>>,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[Duration], p: f64) -> Duration {
    if sorted.is_empty() {
        return Duration::ZERO;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Times `repetitions` passes over `queries` on the current rayon pool and
/// discards the first pass.
pub fn bench_decode(
    memory: &MemorySet,
    global: &ItemRepTable,
    queries: &[Query],
    cfg: &DecodeConfig,
    repetitions: usize,
) -> Result<BenchOutcome, BenchError> {
    if repetitions < MIN_REPETITIONS {
        return Err(BenchError::Repetitions(repetitions));
    }
    if queries.is_empty() {
        return Err(BenchError::NoQueries);
    }
    cfg.validate()?;
    let mut latencies: Vec<Duration> = Vec::with_capacity(queries.len() * (repetitions - 1));
    let mut phases = PhaseTimes::default();
    let mut wall = Duration::ZERO;
    let mut results = Vec::new();
    for rep in 0..repetitions {
        let start = Instant::now();
        let timed: Vec<(Result<RankedList, DecodeError>, PhaseTimes, Duration)> = queries
            .par_iter()
            .map(|q| {
                let mut t = PhaseTimes::default();
                let s = Instant::now();
                let r = decode_timed(q, memory, global, cfg, &mut t);
                (r, t, s.elapsed())
            })
            .collect();
        let elapsed = start.elapsed();
        if rep == 0 {
            continue;
        }
        wall += elapsed;
        results.clear();
        for (r, t, d) in timed {
            phases.add(&t);
            latencies.push(d);
            results.push(r);
        }
    }
    latencies.sort_unstable();
    let measured = latencies.len() as f64;
    let report = LatencyReport {
        mode: match cfg.mode {
            Mode::Global => "global".into(),
            Mode::Local { neighbors } => format!("local M={neighbors}"),
        },
        threads: rayon::current_num_threads(),
        queries: queries.len(),
        repetitions: repetitions - 1,
        scan_ms: ms(phases.scan) / measured,
        aggregation_ms: ms(phases.aggregation) / measured,
        ranking_ms: ms(phases.ranking) / measured,
        p50_ms: ms(percentile(&latencies, 0.50)),
        p95_ms: ms(percentile(&latencies, 0.95)),
        queries_per_second: measured / wall.as_secs_f64().max(f64::MIN_POSITIVE),
        memory_bytes: memory.resident_bytes() + global.resident_bytes(),
    };
    Ok(BenchOutcome { report, results })
}

pub fn render_latency_text(reports: &[LatencyReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<14} {:>7} {:>7} {:>10} {:>10} {:>10} {:>10} {:>10} {:>12} {:>14}",
        "mode",
        "threads",
        "queries",
        "scan_ms",
        "agg_ms",
        "rank_ms",
        "p50_ms",
        "p95_ms",
        "qps",
        "memory_bytes"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<14} {:>7} {:>7} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>12.1} {:>14}",
            r.mode,
            r.threads,
            r.queries,
            r.scan_ms,
            r.aggregation_ms,
            r.ranking_ms,
            r.p50_ms,
            r.p95_ms,
            r.queries_per_second,
            r.memory_bytes
        );
    }
    out
}
