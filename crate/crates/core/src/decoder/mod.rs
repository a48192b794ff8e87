//! Top-K item decoding by L2 matching of a query hidden state against item
//! representations, in global or local aggregation mode.

mod distance;
mod scan;

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use distance::{dot_f32, l2_distance, l2_sq_direct, similarity_score, DEFAULT_EPSILON};
pub use scan::{top_m_neighbors, top_m_neighbors_direct};

use crate::aggregation::{local_representations, AggregationError, ItemRepTable};
use crate::memory::{check_vector, ItemId, MemorySet, VectorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("empty memory")]
    EmptyMemory,
    #[error("empty representation table")]
    EmptyTable,
    #[error("vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("invalid query: {0}")]
    Query(VectorError),
    #[error("invalid decode config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Aggregation(#[from] AggregationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub query_id: u64,
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum Mode {
    Global,
    /// Aggregate over the `neighbors` nearest memory rows.
    Local {
        neighbors: usize,
    },
}

/// How local mode fills a list when the neighborhood covers fewer than K items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backfill {
    /// Append globally ranked items not already listed.
    #[default]
    GlobalBackfill,
    Truncate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecodeConfig {
    #[serde(flatten)]
    pub mode: Mode,
    pub k: usize,
    pub backfill: Backfill,
    pub epsilon: f64,
}

impl DecodeConfig {
    pub fn global(k: usize) -> Self {
        DecodeConfig {
            mode: Mode::Global,
            k,
            backfill: Backfill::default(),
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn local(k: usize, neighbors: usize) -> Self {
        DecodeConfig {
            mode: Mode::Local { neighbors },
            ..Self::global(k)
        }
    }

    pub fn with_backfill(mut self, backfill: Backfill) -> Self {
        self.backfill = backfill;
        self
    }

    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.k == 0 {
            return Err(DecodeError::InvalidConfig("K must be at least 1".into()));
        }
        if let Mode::Local { neighbors: 0 } = self.mode {
            return Err(DecodeError::InvalidConfig("M must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(DecodeError::InvalidConfig(
                "epsilon must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankedItem {
    pub item: ItemId,
    pub distance: f64,
    pub score: f64,
}

/// Decoded top-K answer for one query.
///
/// Entries ascend by distance (ties by ItemId). In local mode the last
/// `backfilled` entries come from the global ranking and are ordered among
/// themselves only.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: u64,
    pub entries: Vec<RankedItem>,
    pub backfilled: usize,
}

impl RankedList {
    pub fn items(&self) -> impl Iterator<Item = ItemId> + '_ {
        self.entries.iter().map(|e| e.item)
    }

    /// 1-based position of `item`, if listed.
    pub fn rank_of(&self, item: ItemId) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.item == item)
            .map(|p| p + 1)
    }
}

/// Ranks every entry of `table` by distance to `query` and keeps the best `k`.
pub fn rank_items(query: &[f32], table: &ItemRepTable, k: usize, epsilon: f64) -> Vec<RankedItem> {
    let mut scored: Vec<(f64, ItemId)> = table
        .iter()
        .map(|(item, rep, _)| (l2_sq_direct(query, rep), item))
        .collect();
    let cmp = |a: &(f64, ItemId), b: &(f64, ItemId)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k, cmp);
        scored.truncate(k);
    }
    scored.sort_unstable_by(cmp);
    scored
        .into_iter()
        .map(|(sq, item)| {
            let distance = sq.sqrt();
            RankedItem {
                item,
                distance,
                score: similarity_score(distance, epsilon),
            }
        })
        .collect()
}

fn check_query(query: &Query, dim: usize) -> Result<(), DecodeError> {
    check_vector(&query.vector, dim).map_err(DecodeError::Query)
}

/// Ranks every item of the global table against the query.
pub fn decode_global(
    query: &Query,
    table: &ItemRepTable,
    k: usize,
    epsilon: f64,
) -> Result<RankedList, DecodeError> {
    if table.is_empty() {
        return Err(DecodeError::EmptyTable);
    }
    if k == 0 {
        return Err(DecodeError::InvalidConfig("K must be at least 1".into()));
    }
    check_query(query, table.dim())?;
    Ok(RankedList {
        query_id: query.query_id,
        entries: rank_items(&query.vector, table, k, epsilon),
        backfilled: 0,
    })
}

/// Wall time spent in each decode stage.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhaseTimes {
    pub scan: Duration,
    pub aggregation: Duration,
    pub ranking: Duration,
}

impl PhaseTimes {
    pub fn total(&self) -> Duration {
        self.scan + self.aggregation + self.ranking
    }

    pub fn add(&mut self, other: &PhaseTimes) {
        self.scan += other.scan;
        self.aggregation += other.aggregation;
        self.ranking += other.ranking;
    }
}

fn timed<T>(slot: Option<&mut Duration>, f: impl FnOnce() -> T) -> T {
    match slot {
        Some(d) => {
            let start = Instant::now();
            let out = f();
            *d += start.elapsed();
            out
        }
        None => f(),
    }
}

fn decode_local_inner(
    query: &Query,
    memory: &MemorySet,
    global: &ItemRepTable,
    cfg: &DecodeConfig,
    mut times: Option<&mut PhaseTimes>,
) -> Result<RankedList, DecodeError> {
    let Mode::Local { neighbors } = cfg.mode else {
        return Err(DecodeError::InvalidConfig(
            "decode_local needs local mode".into(),
        ));
    };
    cfg.validate()?;
    if memory.is_empty() {
        return Err(DecodeError::EmptyMemory);
    }
    check_query(query, memory.dim())?;
    if global.dim() != memory.dim() {
        return Err(DecodeError::LengthMismatch {
            left: memory.dim(),
            right: global.dim(),
        });
    }
    let hood = timed(times.as_mut().map(|t| &mut t.scan), || {
        top_m_neighbors(memory, &query.vector, neighbors)
    })?;
    let local = timed(times.as_mut().map(|t| &mut t.aggregation), || {
        local_representations(memory, &hood)
    })?;
    timed(times.as_mut().map(|t| &mut t.ranking), || {
        let mut entries = rank_items(&query.vector, &local, cfg.k, cfg.epsilon);
        let mut backfilled = 0;
        if entries.len() < cfg.k && cfg.backfill == Backfill::GlobalBackfill {
            let listed: HashSet<ItemId> = entries.iter().map(|e| e.item).collect();
            let extra = rank_items(&query.vector, global, cfg.k + listed.len(), cfg.epsilon);
            let before = entries.len();
            entries.extend(
                extra
                    .into_iter()
                    .filter(|e| !listed.contains(&e.item))
                    .take(cfg.k - before),
            );
            backfilled = entries.len() - before;
        }
        Ok(RankedList {
            query_id: query.query_id,
            entries,
            backfilled,
        })
    })
}

/// Local-mode decode: top-M neighborhood, per-item neighborhood means, then
/// ranking; optionally completed from the global ranking.
pub fn decode_local(
    query: &Query,
    memory: &MemorySet,
    global: &ItemRepTable,
    cfg: &DecodeConfig,
) -> Result<RankedList, DecodeError> {
    decode_local_inner(query, memory, global, cfg, None)
}

/// Decodes one query in whichever mode `cfg` selects.
pub fn decode(
    query: &Query,
    memory: &MemorySet,
    global: &ItemRepTable,
    cfg: &DecodeConfig,
) -> Result<RankedList, DecodeError> {
    match cfg.mode {
        Mode::Global => {
            cfg.validate()?;
            decode_global(query, global, cfg.k, cfg.epsilon)
        }
        Mode::Local { .. } => decode_local(query, memory, global, cfg),
    }
}

/// [`decode`] with per-stage timings accumulated into `times`.
pub fn decode_timed(
    query: &Query,
    memory: &MemorySet,
    global: &ItemRepTable,
    cfg: &DecodeConfig,
    times: &mut PhaseTimes,
) -> Result<RankedList, DecodeError> {
    match cfg.mode {
        Mode::Global => {
            cfg.validate()?;
            timed(Some(&mut times.ranking), || {
                decode_global(query, global, cfg.k, cfg.epsilon)
            })
        }
        Mode::Local { .. } => decode_local_inner(query, memory, global, cfg, Some(times)),
    }
}

/// Decodes every query, in input order, on the current rayon pool.
/// A failing query yields an error in its slot and does not stop the batch.
pub fn batch_decode(
    queries: &[Query],
    memory: &MemorySet,
    global: &ItemRepTable,
    cfg: &DecodeConfig,
) -> Vec<Result<RankedList, DecodeError>> {
    queries
        .par_iter()
        .map(|q| decode(q, memory, global, cfg))
        .collect()
}
