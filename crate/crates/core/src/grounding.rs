//! Beam grounding: maps the embeddings of several beam-generated items onto
//! the candidate catalog and merges the per-beam rankings column by column.

use std::collections::HashSet;

use thiserror::Error;

use crate::aggregation::ItemRepTable;
use crate::decoder::{rank_items, RankedItem, RankedList};
use crate::memory::{check_vector, ItemId, VectorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundingError {
    #[error("no beams")]
    NoBeams,
    #[error("empty candidate table")]
    EmptyCandidates,
    #[error("K must be at least 1")]
    ZeroK,
    #[error("beam {beam}: {source}")]
    Beam { beam: usize, source: VectorError },
}

/// Embeddings of the `B` beam outputs for one request, row-major `B x dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamSet {
    dim: usize,
    embeddings: Vec<f32>,
}

impl BeamSet {
    pub fn new(dim: usize, beams: &[Vec<f32>]) -> Result<Self, GroundingError> {
        if beams.is_empty() {
            return Err(GroundingError::NoBeams);
        }
        let mut embeddings = Vec::with_capacity(beams.len() * dim);
        for (beam, v) in beams.iter().enumerate() {
            check_vector(v, dim).map_err(|source| GroundingError::Beam { beam, source })?;
            embeddings.extend_from_slice(v);
        }
        Ok(BeamSet { dim, embeddings })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beam(&self, b: usize) -> &[f32] {
        &self.embeddings[b * self.dim..(b + 1) * self.dim]
    }
}

/// Keeps the first `k` unique items of the column-major reading of `matrix`
/// (column 1 holds every beam's top item in beam order, then column 2, ...).
pub fn flatten_column_major(matrix: &[Vec<RankedItem>], k: usize) -> Vec<RankedItem> {
    let width = matrix.iter().map(Vec::len).max().unwrap_or(0);
    let mut seen: HashSet<ItemId> = HashSet::new();
    let mut out = Vec::with_capacity(k);
    'columns: for col in 0..width {
        for row in matrix {
            if out.len() == k {
                break 'columns;
            }
            if let Some(entry) = row.get(col) {
                if seen.insert(entry.item) {
                    out.push(*entry);
                }
            }
        }
    }
    out
}

/// Grounds a beam set against `candidates` and returns the top `k` unique
/// items. Each entry carries the score from the beam that contributed it.
pub fn ground_beams(
    query_id: u64,
    beams: &BeamSet,
    candidates: &ItemRepTable,
    k: usize,
    epsilon: f64,
) -> Result<RankedList, GroundingError> {
    if k == 0 {
        return Err(GroundingError::ZeroK);
    }
    if candidates.is_empty() {
        return Err(GroundingError::EmptyCandidates);
    }
    if beams.dim() != candidates.dim() {
        return Err(GroundingError::Beam {
            beam: 0,
            source: VectorError::Length {
                expected: candidates.dim(),
                found: beams.dim(),
            },
        });
    }
    // only a prefix of length k per beam can ever reach the output
    let matrix: Vec<Vec<RankedItem>> = (0..beams.len())
        .map(|b| rank_items(beams.beam(b), candidates, k, epsilon))
        .collect();
    Ok(RankedList {
        query_id,
        entries: flatten_column_major(&matrix, k),
        backfilled: 0,
    })
}
