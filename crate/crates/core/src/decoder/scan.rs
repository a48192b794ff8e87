//! Exact top-M neighbor search over memory rows.
//!
//! Rows are scanned in blocks with the expanded-form f32 distance and a
//! bounded max-heap of size M. Rows evicted or rejected within a rigorous
//! error slack of the heap boundary are kept aside, and the surviving
//! candidates are re-ranked with the direct f64 distance. The result is the
//! same as sorting every row by direct distance.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::distance::{dot_f32, expanded_form_slack, l2_sq_direct, sq_norm};
use super::DecodeError;
use crate::aggregation::{Neighbor, NeighborSet};
use crate::memory::{check_vector, MemorySet};

const BLOCK_ROWS: usize = 4096;
const PARALLEL_MIN_ROWS: usize = 32 * 1024;
/// Above this squared-norm scale the f32 expanded form may overflow.
const EXPANDED_FORM_LIMIT: f64 = 1e30;

#[derive(Clone, Copy)]
struct Cand {
    approx: f32,
    row: u32,
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.approx
            .total_cmp(&other.approx)
            .then(self.row.cmp(&other.row))
    }
}

struct ScanCtx<'a> {
    memory: &'a MemorySet,
    query: &'a [f32],
    query_sq: f32,
    keep: usize,
    slack: f32,
}

impl ScanCtx<'_> {
    #[inline]
    fn approx(&self, row: usize) -> f32 {
        self.query_sq + self.memory.row_sq_norms()[row]
            - 2.0 * dot_f32(self.query, self.memory.row(row))
    }

    /// Candidates of rows `start..end`: the block's top `keep` by approximate
    /// distance plus every row within `slack` of the block's boundary.
    fn scan_block(&self, start: usize, end: usize) -> Vec<Cand> {
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(self.keep.min(end - start) + 1);
        let mut side: Vec<Cand> = Vec::new();
        let mut prune_at = 1024usize.max(self.keep);
        for row in start..end {
            let c = Cand {
                approx: self.approx(row),
                row: row as u32,
            };
            if heap.len() < self.keep {
                heap.push(c);
                continue;
            }
            let top = heap.peek().expect("heap is full").approx;
            if c.approx < top {
                let evicted = heap.pop().expect("heap is full");
                heap.push(c);
                let bound = heap.peek().expect("heap is full").approx + self.slack;
                if evicted.approx <= bound {
                    side.push(evicted);
                }
            } else if c.approx <= top + self.slack {
                side.push(c);
            }
            if side.len() > prune_at {
                let bound = heap.peek().expect("heap is full").approx + self.slack;
                side.retain(|s| s.approx <= bound);
                prune_at = prune_at.max(2 * side.len());
            }
        }
        if let Some(top) = heap.peek() {
            let bound = top.approx + self.slack;
            side.retain(|s| s.approx <= bound);
        }
        let mut out = heap.into_vec();
        out.extend(side);
        out
    }
}

fn sort_exact(
    memory: &MemorySet,
    query: &[f32],
    rows: impl Iterator<Item = u32>,
) -> Vec<(f64, u32)> {
    let mut scored: Vec<(f64, u32)> = rows
        .map(|row| (l2_sq_direct(query, memory.row(row as usize)), row))
        .collect();
    scored.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored
}

fn into_neighbors(scored: Vec<(f64, u32)>, keep: usize) -> NeighborSet {
    NeighborSet(
        scored
            .into_iter()
            .take(keep)
            .map(|(sq, row)| Neighbor {
                row,
                distance: sq.sqrt(),
            })
            .collect(),
    )
}

fn validate(memory: &MemorySet, query: &[f32], count: usize) -> Result<(), DecodeError> {
    if memory.is_empty() {
        return Err(DecodeError::EmptyMemory);
    }
    if count == 0 {
        return Err(DecodeError::InvalidConfig("M must be at least 1".into()));
    }
    check_vector(query, memory.dim()).map_err(DecodeError::Query)
}

/// Reference search: direct distance to every row, full sort.
pub fn top_m_neighbors_direct(
    memory: &MemorySet,
    query: &[f32],
    count: usize,
) -> Result<NeighborSet, DecodeError> {
    validate(memory, query, count)?;
    let scored = sort_exact(memory, query, 0..memory.len() as u32);
    Ok(into_neighbors(scored, count))
}

/// The `count` rows nearest to `query`, ascending by distance with ties
/// broken by row index. Returns every row when `count >= N`.
pub fn top_m_neighbors(
    memory: &MemorySet,
    query: &[f32],
    count: usize,
) -> Result<NeighborSet, DecodeError> {
    validate(memory, query, count)?;
    let n = memory.len();
    let query_sq = sq_norm(query);
    let norm_sum = query_sq.sqrt() + memory.max_row_norm();
    if count >= n || norm_sum * norm_sum > EXPANDED_FORM_LIMIT {
        return top_m_neighbors_direct(memory, query, count);
    }
    let slack = expanded_form_slack(memory.dim(), norm_sum);
    let ctx = ScanCtx {
        memory,
        query,
        query_sq: query_sq as f32,
        keep: count,
        // rounding the slack up keeps it an upper bound in f32
        slack: (slack * (1.0 + 1e-6)) as f32,
    };
    let blocks: Vec<(usize, usize)> = (0..n)
        .step_by(BLOCK_ROWS)
        .map(|s| (s, (s + BLOCK_ROWS).min(n)))
        .collect();
    let mut cands: Vec<Cand> = if n >= PARALLEL_MIN_ROWS && rayon::current_num_threads() > 1 {
        blocks
            .par_iter()
            .flat_map_iter(|&(s, e)| ctx.scan_block(s, e))
            .collect()
    } else {
        // one pass keeps a single global heap, which prunes harder
        ctx.scan_block(0, n)
    };
    // M-th smallest approximate distance over the union of block candidates
    let boundary = if cands.len() > count {
        let (_, nth, _) = cands.select_nth_unstable(count - 1);
        nth.approx
    } else {
        cands
            .iter()
            .map(|c| c.approx)
            .fold(f32::NEG_INFINITY, f32::max)
    };
    let bound = boundary + ctx.slack;
    let scored = sort_exact(
        memory,
        query,
        cands.iter().filter(|c| c.approx <= bound).map(|c| c.row),
    );
    Ok(into_neighbors(scored, count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{build_memory, MemoryRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn memory(rows: &[Vec<f32>]) -> MemorySet {
        let recs: Vec<MemoryRecord> = rows
            .iter()
            .enumerate()
            .map(|(i, v)| MemoryRecord {
                sample_id: i as u64,
                item: format!("i{}", i % 3),
                vector: v.clone(),
            })
            .collect();
        build_memory(&recs, rows[0].len()).unwrap()
    }

    fn random_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f32>> {
        (0..n)
            .map(|_| (0..d).map(|_| rng.random::<f32>()).collect())
            .collect()
    }

    #[test]
    fn small_by_inspection() {
        let m = memory(&[vec![0.0, 0.0], vec![1.0, 0.0], vec![5.0, 5.0]]);
        let n = top_m_neighbors(&m, &[0.1, 0.0], 2).unwrap();
        assert_eq!(n.rows().collect::<Vec<_>>(), vec![0, 1]);
        assert!((n.0[0].distance - 0.1).abs() < 1e-7);
        let all = top_m_neighbors(&m, &[0.1, 0.0], 10).unwrap();
        assert_eq!(all.rows().collect::<Vec<_>>(), vec![0, 1, 2]);
    }

    #[test]
    fn ties_break_by_row() {
        let m = memory(&[
            vec![1.0, 0.0],
            vec![-1.0, 0.0],
            vec![0.0, 1.0],
            vec![3.0, 3.0],
        ]);
        let n = top_m_neighbors(&m, &[0.0, 0.0], 2).unwrap();
        assert_eq!(n.rows().collect::<Vec<_>>(), vec![0, 1]);
        let dup = memory(&vec![vec![0.5, 0.5]; 50]);
        let n = top_m_neighbors(&dup, &[0.0, 0.0], 7).unwrap();
        assert_eq!(n.rows().collect::<Vec<_>>(), (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn errors() {
        let m = memory(&[vec![0.0, 0.0]]);
        assert!(matches!(
            top_m_neighbors(&m, &[0.0], 1),
            Err(DecodeError::Query(_))
        ));
        assert!(matches!(
            top_m_neighbors(&m, &[0.0, 0.0], 0),
            Err(DecodeError::InvalidConfig(_))
        ));
        let empty = build_memory(&[], 2).unwrap();
        assert!(matches!(
            top_m_neighbors(&empty, &[0.0, 0.0], 1),
            Err(DecodeError::EmptyMemory)
        ));
    }

    #[test]
    fn matches_full_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let m = memory(&random_rows(&mut rng, 5000, 16));
        for _ in 0..100 {
            let q: Vec<f32> = (0..16).map(|_| rng.random::<f32>()).collect();
            // oracle: every row, direct distance, full sort
            let mut all: Vec<(f64, u32)> = (0..5000u32)
                .map(|r| {
                    let d: f64 = q
                        .iter()
                        .zip(m.row(r as usize))
                        .map(|(a, b)| (*a as f64 - *b as f64).powi(2))
                        .sum();
                    (d.sqrt(), r)
                })
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let got = top_m_neighbors(&m, &q, 50).unwrap();
            assert_eq!(got.len(), 50);
            for (n, (d, r)) in got.0.iter().zip(&all) {
                assert_eq!(n.row, *r);
                assert!((n.distance - d).abs() <= 1e-4 * d.max(1e-12));
            }
        }
    }

    #[test]
    fn clustered_near_ties_stay_exact() {
        // many rows nearly equidistant from the query stress the boundary slack
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f32>> = (0..3000)
            .map(|_| {
                let mut v = vec![10.0f32; 32];
                v[rng.random_range(0..32)] += 1.0 + rng.random_range(0.0..1e-6f32);
                v
            })
            .collect();
        let m = memory(&rows);
        let q = vec![10.0f32; 32];
        for count in [1, 5, 100, 1000] {
            assert_eq!(
                top_m_neighbors(&m, &q, count).unwrap(),
                top_m_neighbors_direct(&m, &q, count).unwrap()
            );
        }
    }

    #[test]
    fn parallel_blocks_match_serial() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = memory(&random_rows(&mut rng, 40_000, 8));
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(4)
            .build()
            .unwrap();
        for _ in 0..5 {
            let q: Vec<f32> = (0..8).map(|_| rng.random::<f32>()).collect();
            let serial = rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .unwrap()
                .install(|| top_m_neighbors(&m, &q, 64).unwrap());
            let parallel = pool.install(|| top_m_neighbors(&m, &q, 64).unwrap());
            assert_eq!(serial, parallel);
            assert_eq!(serial, top_m_neighbors_direct(&m, &q, 64).unwrap());
        }
    }
}
