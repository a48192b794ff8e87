//! Candidate item representations: per-item means of memory rows, either over
//! the whole memory (global) or over a query's neighborhood (local).

use thiserror::Error;

use crate::memory::{ItemId, MemorySet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AggregationError {
    #[error("empty memory")]
    EmptyMemory,
    #[error("neighbor row {row} out of range for memory of {rows} rows")]
    RowOutOfRange { row: u32, rows: usize },
    #[error("invalid representation table: {0}")]
    Invalid(String),
}

/// One memory row in a query's neighborhood.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub row: u32,
    pub distance: f64,
}

/// Neighborhood of a query, ascending by distance then row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborSet(pub Vec<Neighbor>);

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = u32> + '_ {
        self.0.iter().map(|n| n.row)
    }
}

/// Per-item representation vectors, sorted by ascending [`ItemId`].
///
/// Items without supporting rows are absent rather than zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemRepTable {
    dim: usize,
    items: Vec<ItemId>,
    reps: Vec<f32>,
    support: Vec<u32>,
}

impl ItemRepTable {
    pub fn from_parts(
        dim: usize,
        items: Vec<ItemId>,
        reps: Vec<f32>,
        support: Vec<u32>,
    ) -> Result<Self, AggregationError> {
        if dim == 0 {
            return Err(AggregationError::Invalid("zero dimension".into()));
        }
        if reps.len() != items.len() * dim || support.len() != items.len() {
            return Err(AggregationError::Invalid("part lengths disagree".into()));
        }
        if items.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AggregationError::Invalid(
                "item ids not strictly ascending".into(),
            ));
        }
        if support.contains(&0) {
            return Err(AggregationError::Invalid("zero support".into()));
        }
        if reps.iter().any(|x| !x.is_finite()) {
            return Err(AggregationError::Invalid("non-finite component".into()));
        }
        Ok(ItemRepTable {
            dim,
            items,
            reps,
            support,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn supports(&self) -> &[u32] {
        &self.support
    }

    pub fn matrix(&self) -> &[f32] {
        &self.reps
    }

    /// Representation at table position `pos`.
    #[inline]
    pub fn rep_at(&self, pos: usize) -> &[f32] {
        &self.reps[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn get(&self, item: ItemId) -> Option<(&[f32], u32)> {
        let pos = self.items.binary_search(&item).ok()?;
        Some((self.rep_at(pos), self.support[pos]))
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.items.binary_search(&item).is_ok()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ItemId, &[f32], u32)> + '_ {
        self.items
            .iter()
            .zip(self.reps.chunks_exact(self.dim))
            .zip(&self.support)
            .map(|((&id, rep), &s)| (id, rep, s))
    }

    pub fn resident_bytes(&self) -> usize {
        self.reps.len() * 4 + self.items.len() * 8
    }
}

/// Mean of the given rows with f64 accumulation in the order given.
fn mean_into(m: &MemorySet, rows: &[u32], acc: &mut [f64], out: &mut Vec<f32>) {
    acc.iter_mut().for_each(|a| *a = 0.0);
    for &row in rows {
        for (a, &x) in acc.iter_mut().zip(m.row(row as usize)) {
            *a += f64::from(x);
        }
    }
    let n = rows.len() as f64;
    out.extend(acc.iter().map(|a| (a / n) as f32));
}

fn table_from_groups(m: &MemorySet, groups: &[(ItemId, Vec<u32>)]) -> ItemRepTable {
    let dim = m.dim();
    let mut acc = vec![0.0f64; dim];
    let mut reps = Vec::with_capacity(groups.len() * dim);
    let mut items = Vec::with_capacity(groups.len());
    let mut support = Vec::with_capacity(groups.len());
    for (item, rows) in groups {
        mean_into(m, rows, &mut acc, &mut reps);
        items.push(*item);
        support.push(rows.len() as u32);
    }
    ItemRepTable {
        dim,
        items,
        reps,
        support,
    }
}

/// Mean hidden state of every cataloged item over all of its memory rows.
pub fn global_representations(m: &MemorySet) -> Result<ItemRepTable, AggregationError> {
    if m.is_empty() {
        return Err(AggregationError::EmptyMemory);
    }
    let dim = m.dim();
    let n_items = m.catalog().len();
    let mut acc = vec![0.0f64; dim];
    let mut reps = Vec::with_capacity(n_items * dim);
    let mut support = Vec::with_capacity(n_items);
    for item in m.catalog().ids() {
        let rows = m.rows_of(item);
        mean_into(m, rows, &mut acc, &mut reps);
        support.push(rows.len() as u32);
    }
    Ok(ItemRepTable {
        dim,
        items: m.catalog().ids().collect(),
        reps,
        support,
    })
}

/// Mean hidden state per item over the neighborhood rows only.
///
/// Rows of each item are summed in ascending row order, so a neighborhood
/// covering the whole memory reproduces [`global_representations`] exactly.
pub fn local_representations(
    m: &MemorySet,
    neighbors: &NeighborSet,
) -> Result<ItemRepTable, AggregationError> {
    let mut tagged: Vec<(ItemId, u32)> = Vec::with_capacity(neighbors.len());
    for row in neighbors.rows() {
        if row as usize >= m.len() {
            return Err(AggregationError::RowOutOfRange { row, rows: m.len() });
        }
        tagged.push((m.item_of_row(row as usize), row));
    }
    tagged.sort_unstable();
    let mut groups: Vec<(ItemId, Vec<u32>)> = Vec::new();
    for (item, row) in tagged {
        match groups.last_mut() {
            Some((last, rows)) if *last == item => rows.push(row),
            _ => groups.push((item, vec![row])),
        }
    }
    Ok(table_from_groups(m, &groups))
}
