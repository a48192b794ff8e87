//! Full-ranking evaluation with Recall@K and NDCG@K for single ground-truth
//! samples, frequency cohorts, and the neighborhood-size sweep.

mod report;

use std::borrow::Borrow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use report::{render_jsonl, render_sweep_jsonl, render_sweep_text, render_text};

use crate::aggregation::ItemRepTable;
use crate::decoder::{decode, Backfill, DecodeConfig, DecodeError, Query, RankedList};
use crate::memory::{ItemCatalog, ItemId, MemorySet};

/// Sparse/dense boundary used when none is given.
pub const DEFAULT_SPARSE_THRESHOLD: u32 = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no cutoffs given")]
    NoCutoffs,
    #[error("cutoff K must be at least 1")]
    ZeroCutoff,
    #[error("sweep values must be ascending and at least 1")]
    BadSweep,
    #[error("sparse threshold must be at least 1")]
    BadThreshold,
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

/// A held-out query with its single ground-truth next item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSample {
    #[serde(flatten)]
    pub query: Query,
    pub truth: String,
}

/// 1 if `truth` is within the first `k` entries, else 0.
pub fn recall_at_k(ranked: &RankedList, truth: ItemId, k: usize) -> f64 {
    match ranked.rank_of(truth) {
        Some(rank) if rank <= k => 1.0,
        _ => 0.0,
    }
}

/// Gain of a hit at 1-based `rank` with a single relevant item (IDCG = 1).
#[inline]
pub fn discounted_gain(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

pub fn ndcg_at_k(ranked: &RankedList, truth: ItemId, k: usize) -> f64 {
    match ranked.rank_of(truth) {
        Some(rank) if rank <= k => discounted_gain(rank),
        _ => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CutoffMetrics {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub cohort: String,
    pub samples: usize,
    /// Samples whose truth item is not in the catalog; scored as misses.
    pub unknown_truth: usize,
    /// Samples whose query could not be decoded; scored as misses.
    pub failed: usize,
    pub metrics: Vec<CutoffMetrics>,
}

impl MetricsReport {
    pub fn at(&self, k: usize) -> Option<&CutoffMetrics> {
        self.metrics.iter().find(|m| m.k == k)
    }
}

/// Exact tallies: hit counts per 1-based rank, so reports do not depend on
/// sample order or thread count.
#[derive(Debug, Clone, Default)]
struct Tally {
    samples: usize,
    unknown_truth: usize,
    failed: usize,
    hits_at_rank: Vec<u64>,
}

impl Tally {
    fn report(&self, cohort: &str, ks: &[usize]) -> MetricsReport {
        let n = self.samples as f64;
        let metrics = ks
            .iter()
            .map(|&k| {
                let (mut hits, mut gain) = (0u64, 0.0f64);
                for (idx, &h) in self.hits_at_rank.iter().enumerate().take(k) {
                    hits += h;
                    gain += h as f64 * discounted_gain(idx + 1);
                }
                let (recall, ndcg) = if self.samples == 0 {
                    (0.0, 0.0)
                } else {
                    (hits as f64 / n, gain / n)
                };
                CutoffMetrics { k, recall, ndcg }
            })
            .collect();
        MetricsReport {
            cohort: cohort.to_owned(),
            samples: self.samples,
            unknown_truth: self.unknown_truth,
            failed: self.failed,
            metrics,
        }
    }
}

fn normalize_cutoffs(ks: &[usize]) -> Result<Vec<usize>, EvalError> {
    if ks.is_empty() {
        return Err(EvalError::NoCutoffs);
    }
    if ks.contains(&0) {
        return Err(EvalError::ZeroCutoff);
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    Ok(ks)
}

/// Outcome of one sample: `Some(rank)` on a hit within the decode depth.
enum Outcome {
    Rank(Option<usize>),
    UnknownTruth,
    Failed,
}

fn score_samples<S>(
    samples: &[S],
    memory: &MemorySet,
    table: &ItemRepTable,
    cfg: &DecodeConfig,
) -> Vec<Outcome>
where
    S: Borrow<EvalSample> + Sync,
{
    samples
        .par_iter()
        .map(|s| {
            let s = s.borrow();
            let truth = memory.catalog().id(&s.truth);
            match (decode(&s.query, memory, table, cfg), truth) {
                (Err(_), _) => Outcome::Failed,
                (Ok(_), None) => Outcome::UnknownTruth,
                (Ok(list), Some(t)) => Outcome::Rank(list.rank_of(t)),
            }
        })
        .collect()
}

fn tally(outcomes: &[Outcome], depth: usize) -> Tally {
    let mut t = Tally {
        samples: outcomes.len(),
        hits_at_rank: vec![0; depth],
        ..Tally::default()
    };
    for o in outcomes {
        match o {
            Outcome::Rank(Some(r)) if *r <= depth => t.hits_at_rank[r - 1] += 1,
            Outcome::Rank(_) => {}
            Outcome::UnknownTruth => t.unknown_truth += 1,
            Outcome::Failed => t.failed += 1,
        }
    }
    t
}

/// Decodes every sample at depth `max(ks)` and reports mean Recall@K and
/// NDCG@K for each cutoff. `cfg.k` is overridden by the deepest cutoff.
pub fn evaluate<S>(
    samples: &[S],
    memory: &MemorySet,
    table: &ItemRepTable,
    cfg: &DecodeConfig,
    ks: &[usize],
    cohort: &str,
) -> Result<MetricsReport, EvalError>
where
    S: Borrow<EvalSample> + Sync,
{
    let ks = normalize_cutoffs(ks)?;
    let depth = *ks.last().expect("non-empty");
    let cfg = DecodeConfig { k: depth, ..*cfg };
    cfg.validate()?;
    let outcomes = score_samples(samples, memory, table, &cfg);
    Ok(tally(&outcomes, depth).report(cohort, &ks))
}

/// Splits samples by the memory frequency of their truth item: sparse iff
/// `freq <= threshold` (unknown truths count as frequency 0).
pub fn cohort_split<'a>(
    samples: &'a [EvalSample],
    catalog: &ItemCatalog,
    threshold: u32,
) -> Result<(Vec<&'a EvalSample>, Vec<&'a EvalSample>), EvalError> {
    if threshold == 0 {
        return Err(EvalError::BadThreshold);
    }
    Ok(samples.iter().partition(|s| {
        let freq = catalog.id(&s.truth).map_or(0, |id| catalog.freq(id));
        freq <= threshold
    }))
}

/// Overall, sparse and dense reports from a single decode pass.
pub fn evaluate_cohorts(
    samples: &[EvalSample],
    memory: &MemorySet,
    table: &ItemRepTable,
    cfg: &DecodeConfig,
    ks: &[usize],
    threshold: u32,
) -> Result<Vec<MetricsReport>, EvalError> {
    if threshold == 0 {
        return Err(EvalError::BadThreshold);
    }
    let ks = normalize_cutoffs(ks)?;
    let depth = *ks.last().expect("non-empty");
    let cfg = DecodeConfig { k: depth, ..*cfg };
    cfg.validate()?;
    let outcomes = score_samples(samples, memory, table, &cfg);
    let catalog = memory.catalog();
    let (mut sparse, mut dense) = (Vec::new(), Vec::new());
    for (s, o) in samples.iter().zip(outcomes) {
        let freq = catalog.id(&s.truth).map_or(0, |id| catalog.freq(id));
        if freq <= threshold {
            sparse.push(o);
        } else {
            dense.push(o);
        }
    }
    let mut all = tally(&[], depth);
    let ts = tally(&sparse, depth);
    let td = tally(&dense, depth);
    for t in [&ts, &td] {
        all.samples += t.samples;
        all.unknown_truth += t.unknown_truth;
        all.failed += t.failed;
        for (a, b) in all.hits_at_rank.iter_mut().zip(&t.hits_at_rank) {
            *a += b;
        }
    }
    Ok(vec![
        all.report("all", &ks),
        ts.report("sparse", &ks),
        td.report("dense", &ks),
    ])
}

/// One evaluation row per neighborhood size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub m: usize,
    pub report: MetricsReport,
}

/// Local-mode evaluation for each `M` in `ms` (ascending).
pub fn sweep_m<S>(
    samples: &[S],
    memory: &MemorySet,
    global: &ItemRepTable,
    ms: &[usize],
    ks: &[usize],
    backfill: Backfill,
    epsilon: f64,
) -> Result<Vec<SweepRow>, EvalError>
where
    S: Borrow<EvalSample> + Sync,
{
    if ms.is_empty() || ms[0] == 0 || ms.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::BadSweep);
    }
    ms.iter()
        .map(|&m| {
            let cfg = DecodeConfig {
                backfill,
                epsilon,
                ..DecodeConfig::local(1, m)
            };
            Ok(SweepRow {
                m,
                report: evaluate(samples, memory, global, &cfg, ks, &format!("local M={m}"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::global_representations;
    use crate::decoder::RankedItem;
    use crate::memory::{build_memory, MemoryRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn list(ids: &[u32]) -> RankedList {
        RankedList {
            query_id: 0,
            entries: ids
                .iter()
                .map(|&i| RankedItem {
                    item: ItemId(i),
                    distance: 0.0,
                    score: 0.0,
                })
                .collect(),
            backfilled: 0,
        }
    }

    #[test]
    fn recall_cases() {
        let l = list(&[7, 8, 9, 10, 11]);
        assert_eq!(recall_at_k(&l, ItemId(9), 5), 1.0);
        assert_eq!(recall_at_k(&l, ItemId(9), 2), 0.0);
        assert_eq!(recall_at_k(&l, ItemId(1), 5), 0.0);
    }

    #[test]
    fn ndcg_cases() {
        let l: Vec<u32> = (0..20).collect();
        let l = list(&l);
        assert_eq!(ndcg_at_k(&l, ItemId(0), 1), 1.0);
        assert!((ndcg_at_k(&l, ItemId(1), 2) - 0.630_929_753_571_457_4).abs() < 1e-12);
        assert_eq!(ndcg_at_k(&l, ItemId(10), 10), 0.0);
        assert!(ndcg_at_k(&l, ItemId(10), 11) > 0.0);
    }

    fn tiny() -> (MemorySet, ItemRepTable) {
        let recs: Vec<MemoryRecord> = [("A", [0.0f32, 0.0]), ("B", [5.0, 0.0]), ("B", [5.0, 1.0])]
            .iter()
            .enumerate()
            .map(|(i, (k, v))| MemoryRecord {
                sample_id: i as u64,
                item: (*k).into(),
                vector: v.to_vec(),
            })
            .collect();
        let m = build_memory(&recs, 2).unwrap();
        let g = global_representations(&m).unwrap();
        (m, g)
    }

    fn sample(id: u64, v: [f32; 2], truth: &str) -> EvalSample {
        EvalSample {
            query: Query {
                query_id: id,
                vector: v.to_vec(),
            },
            truth: truth.into(),
        }
    }

    #[test]
    fn evaluate_averages_and_counts_unknown() {
        let (m, g) = tiny();
        let one = [sample(0, [0.1, 0.0], "A")];
        let r = evaluate(&one, &m, &g, &DecodeConfig::global(1), &[20], "all").unwrap();
        assert_eq!(r.at(20).unwrap().recall, 1.0);
        assert_eq!(r.at(20).unwrap().ndcg, 1.0);

        let two = [sample(0, [0.1, 0.0], "A"), sample(1, [0.1, 0.0], "Z")];
        let r = evaluate(&two, &m, &g, &DecodeConfig::global(1), &[20], "all").unwrap();
        assert_eq!(r.at(20).unwrap().recall, 0.5);
        assert_eq!(r.unknown_truth, 1);
        assert_eq!(r.samples, 2);

        let bad = [
            sample(0, [0.1, 0.0], "A"),
            EvalSample {
                query: Query {
                    query_id: 1,
                    vector: vec![1.0],
                },
                truth: "A".into(),
            },
        ];
        let r = evaluate(&bad, &m, &g, &DecodeConfig::global(1), &[1, 2], "all").unwrap();
        assert_eq!(r.failed, 1);
        assert_eq!(r.at(2).unwrap().recall, 0.5);
        assert!(evaluate(&bad, &m, &g, &DecodeConfig::global(1), &[], "all").is_err());
    }

    #[test]
    fn cohorts_partition() {
        let (m, _) = tiny();
        let s = [
            sample(0, [0.0, 0.0], "A"),
            sample(1, [0.0, 0.0], "B"),
            sample(2, [0.0, 0.0], "Q"),
        ];
        let (sparse, dense) = cohort_split(&s, m.catalog(), 1).unwrap();
        assert_eq!(
            sparse.iter().map(|s| s.truth.as_str()).collect::<Vec<_>>(),
            vec!["A", "Q"]
        );
        assert_eq!(dense.len(), 1);
        // threshold at the maximum frequency puts everything in sparse
        let (sparse, dense) = cohort_split(&s, m.catalog(), 2).unwrap();
        assert_eq!((sparse.len(), dense.len()), (3, 0));
        assert!(cohort_split(&s, m.catalog(), 0).is_err());
    }

    #[test]
    fn cohort_reports_match_separate_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let recs: Vec<MemoryRecord> = (0..400)
            .map(|i| {
                let u: f64 = rng.random();
                MemoryRecord {
                    sample_id: i,
                    item: format!("v{}", (u * u * 40.0) as u32),
                    vector: (0..4).map(|_| rng.random::<f32>()).collect(),
                }
            })
            .collect();
        let m = build_memory(&recs, 4).unwrap();
        let g = global_representations(&m).unwrap();
        let samples: Vec<EvalSample> = recs
            .iter()
            .take(120)
            .map(|r| EvalSample {
                query: Query {
                    query_id: r.sample_id,
                    vector: r.vector.clone(),
                },
                truth: r.item.clone(),
            })
            .collect();
        let cfg = DecodeConfig::local(5, 30);
        let reports = evaluate_cohorts(&samples, &m, &g, &cfg, &[1, 5, 10], 5).unwrap();
        let (sparse, dense) = cohort_split(&samples, m.catalog(), 5).unwrap();
        assert_eq!(sparse.len() + dense.len(), samples.len());
        assert_eq!(
            reports[0],
            evaluate(&samples, &m, &g, &cfg, &[10, 5, 1], "all").unwrap()
        );
        assert_eq!(
            reports[1],
            evaluate(&sparse, &m, &g, &cfg, &[1, 5, 10], "sparse").unwrap()
        );
        assert_eq!(
            reports[2],
            evaluate(&dense, &m, &g, &cfg, &[1, 5, 10], "dense").unwrap()
        );
        for r in &reports {
            for w in r.metrics.windows(2) {
                assert!(w[0].recall <= w[1].recall && w[0].ndcg <= w[1].ndcg);
            }
            for c in &r.metrics {
                assert!(0.0 <= c.ndcg && c.ndcg <= c.recall && c.recall <= 1.0);
            }
        }
    }

    #[test]
    fn sweep_validation_and_nearest_neighbor_case() {
        let (m, g) = tiny();
        let s = [sample(0, [0.0, 0.0], "A"), sample(1, [5.0, 0.4], "B")];
        assert!(sweep_m(&s, &m, &g, &[], &[1], Backfill::default(), 1e-9).is_err());
        assert!(sweep_m(&s, &m, &g, &[3, 2], &[1], Backfill::default(), 1e-9).is_err());
        let rows = sweep_m(&s, &m, &g, &[1, 3], &[1], Backfill::default(), 1e-9).unwrap();
        assert_eq!(rows[0].report.at(1).unwrap().recall, 1.0);
        let global = evaluate(&s, &m, &g, &DecodeConfig::global(1), &[1], "x").unwrap();
        assert_eq!(rows[1].report.metrics, global.metrics);
    }
}
