use std::fmt::Write;

use serde_json::{json, Value};

use super::{MetricsReport, SweepRow};

fn header(out: &mut String, title: &str, config: &Value) {
    let _ = writeln!(out, "# {title}");
    let _ = writeln!(out, "# config: {config}");
}

fn table_rows(out: &mut String, label: &str, r: &MetricsReport) {
    for c in &r.metrics {
        let _ = writeln!(
            out,
            "{label:<14} {:>8} {:>8} {:>7} {:>5} {:>10.6} {:>10.6}",
            r.samples, r.unknown_truth, r.failed, c.k, c.recall, c.ndcg
        );
    }
}

/// Human-readable per-cohort, per-K table. `config` is echoed in the header.
pub fn render_text(reports: &[MetricsReport], config: &Value, threshold: Option<u32>) -> String {
    let mut out = String::new();
    header(&mut out, "l2d evaluation report", config);
    if let Some(t) = threshold {
        let _ = writeln!(
            out,
            "# cohorts: sparse = truth frequency <= {t} in memory, dense otherwise (threshold is a configurable cutoff, not a measured boundary)"
        );
    }
    let _ = writeln!(
        out,
        "{:<14} {:>8} {:>8} {:>7} {:>5} {:>10} {:>10}",
        "cohort", "samples", "unknown", "failed", "K", "recall", "ndcg"
    );
    for r in reports {
        table_rows(&mut out, &r.cohort, r);
    }
    out
}

/// One JSON record per (cohort, K).
pub fn render_jsonl(reports: &[MetricsReport]) -> String {
    let mut out = String::new();
    for r in reports {
        for c in &r.metrics {
            let rec = json!({
                "cohort": r.cohort,
                "k": c.k,
                "recall": c.recall,
                "ndcg": c.ndcg,
                "samples": r.samples,
                "unknown_truth": r.unknown_truth,
                "failed": r.failed,
            });
            let _ = writeln!(out, "{rec}");
        }
    }
    out
}

pub fn render_sweep_text(rows: &[SweepRow], config: &Value) -> String {
    let mut out = String::new();
    header(&mut out, "l2d neighborhood sweep", config);
    let _ = writeln!(
        out,
        "{:<14} {:>8} {:>8} {:>7} {:>5} {:>10} {:>10}",
        "M", "samples", "unknown", "failed", "K", "recall", "ndcg"
    );
    for row in rows {
        table_rows(&mut out, &row.m.to_string(), &row.report);
    }
    out
}

pub fn render_sweep_jsonl(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    for row in rows {
        for c in &row.report.metrics {
            let rec = json!({
                "m": row.m,
                "k": c.k,
                "recall": c.recall,
                "ndcg": c.ndcg,
                "samples": row.report.samples,
            });
            let _ = writeln!(out, "{rec}");
        }
    }
    out
}
