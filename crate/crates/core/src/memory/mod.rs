//! The hidden-state memory: an immutable table of `(vector, item)` rows with
//! an item catalog and a per-item inverted index over row positions.

mod persist;
mod reservoir;
mod stats;

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use persist::{
    load_memory, load_reps, read_memory, save_memory, save_reps, write_memory, Dtype, PersistError,
    FORMAT_VERSION, MEMORY_MAGIC, REPS_MAGIC,
};
pub use reservoir::{reservoir_sample, Reservoir};
pub use stats::{memory_stats, FrequencyBucket, MemoryStats};

/// Dense, 0-based item identifier assigned in order of first appearance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ItemId(pub u32);

impl ItemId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// One `(hidden state, ground-truth item)` pair as produced upstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub sample_id: u64,
    pub item: String,
    pub vector: Vec<f32>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("dimension must be positive")]
    ZeroDim,
    #[error("sample {sample_id}: vector has length {found}, expected {expected}")]
    DimensionMismatch {
        sample_id: u64,
        expected: usize,
        found: usize,
    },
    #[error("sample {sample_id}: vector contains a non-finite component")]
    NonFinite { sample_id: u64 },
    #[error("duplicate sample_id {0}")]
    DuplicateSampleId(u64),
    #[error("sample {0}: empty item key")]
    EmptyItemKey(u64),
    #[error("too many rows or items for 32-bit indices")]
    Overflow,
    #[error("inconsistent memory parts: {0}")]
    Inconsistent(String),
}

/// Checks that `v` is a valid hidden state for a memory of dimension `dim`.
pub fn check_vector(v: &[f32], dim: usize) -> Result<(), VectorError> {
    if v.len() != dim {
        return Err(VectorError::Length {
            expected: dim,
            found: v.len(),
        });
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(VectorError::NonFinite);
    }
    Ok(())
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VectorError {
    #[error("vector has length {found}, expected {expected}")]
    Length { expected: usize, found: usize },
    #[error("vector contains a non-finite component")]
    NonFinite,
}

/// Bidirectional map between external item keys and dense [`ItemId`]s,
/// carrying the per-item memory frequency.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ItemCatalog {
    keys: Vec<String>,
    ids: HashMap<String, ItemId>,
    freq: Vec<u32>,
}

impl ItemCatalog {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn id(&self, key: &str) -> Option<ItemId> {
        self.ids.get(key).copied()
    }

    pub fn key(&self, id: ItemId) -> Option<&str> {
        self.keys.get(id.index()).map(String::as_str)
    }

    /// Number of memory rows labelled with `id`; 0 for unknown ids.
    pub fn freq(&self, id: ItemId) -> u32 {
        self.freq.get(id.index()).copied().unwrap_or(0)
    }

    pub fn keys(&self) -> &[String] {
        &self.keys
    }

    pub fn frequencies(&self) -> &[u32] {
        &self.freq
    }

    pub fn ids(&self) -> impl Iterator<Item = ItemId> + '_ {
        (0..self.keys.len() as u32).map(ItemId)
    }

    fn intern(&mut self, key: &str) -> Result<ItemId, MemoryError> {
        if let Some(&id) = self.ids.get(key) {
            return Ok(id);
        }
        let id = ItemId(u32::try_from(self.keys.len()).map_err(|_| MemoryError::Overflow)?);
        self.keys.push(key.to_owned());
        self.ids.insert(key.to_owned(), id);
        self.freq.push(0);
        Ok(id)
    }
}

/// Immutable hidden-state memory.
///
/// Rows keep ingestion order. Row squared norms are derived once at
/// construction and used by the neighbor scan.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySet {
    dim: usize,
    matrix: Vec<f32>,
    item_of_row: Vec<ItemId>,
    item_index: Vec<Vec<u32>>,
    catalog: ItemCatalog,
    row_sq_norms: Vec<f32>,
    max_row_norm: f64,
}

impl MemorySet {
    /// Assembles a memory from raw parts: `keys` in ItemId order, one item id
    /// per row and a row-major `count × dim` matrix.
    ///
    /// Every key must label at least one row and every component must be finite.
    pub fn from_parts(
        dim: usize,
        keys: Vec<String>,
        item_of_row: Vec<ItemId>,
        matrix: Vec<f32>,
    ) -> Result<Self, MemoryError> {
        if dim == 0 {
            return Err(MemoryError::ZeroDim);
        }
        if matrix.len() != item_of_row.len() * dim {
            return Err(MemoryError::Inconsistent(format!(
                "matrix holds {} values, expected {} rows x {dim}",
                matrix.len(),
                item_of_row.len()
            )));
        }
        if u32::try_from(item_of_row.len()).is_err() {
            return Err(MemoryError::Overflow);
        }
        if let Some(pos) = matrix.iter().position(|x| !x.is_finite()) {
            return Err(MemoryError::Inconsistent(format!(
                "row {} has a non-finite component",
                pos / dim
            )));
        }
        let mut catalog = ItemCatalog::default();
        for key in &keys {
            if key.is_empty() {
                return Err(MemoryError::Inconsistent("empty item key".into()));
            }
            let before = catalog.len();
            catalog.intern(key)?;
            if catalog.len() == before {
                return Err(MemoryError::Inconsistent(format!(
                    "duplicate item key {key:?}"
                )));
            }
        }
        let mut item_index = vec![Vec::new(); catalog.len()];
        for (row, item) in item_of_row.iter().enumerate() {
            let list = item_index.get_mut(item.index()).ok_or_else(|| {
                MemoryError::Inconsistent(format!("row {row} refers to unknown item {item}"))
            })?;
            list.push(row as u32);
        }
        for (id, rows) in item_index.iter().enumerate() {
            if rows.is_empty() {
                return Err(MemoryError::Inconsistent(format!(
                    "item {:?} has no memory rows",
                    catalog.keys[id]
                )));
            }
            catalog.freq[id] = rows.len() as u32;
        }
        Ok(Self::assemble(
            dim,
            matrix,
            item_of_row,
            item_index,
            catalog,
        ))
    }

    fn assemble(
        dim: usize,
        matrix: Vec<f32>,
        item_of_row: Vec<ItemId>,
        item_index: Vec<Vec<u32>>,
        catalog: ItemCatalog,
    ) -> Self {
        let row_sq_norms: Vec<f32> = matrix
            .chunks_exact(dim)
            .map(|row| {
                row.iter()
                    .map(|&x| f64::from(x) * f64::from(x))
                    .sum::<f64>() as f32
            })
            .collect();
        let max_row_norm = row_sq_norms
            .iter()
            .map(|&n| f64::from(n).sqrt())
            .fold(0.0, f64::max);
        MemorySet {
            dim,
            matrix,
            item_of_row,
            item_index,
            catalog,
            row_sq_norms,
            max_row_norm,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows `N`.
    pub fn len(&self) -> usize {
        self.item_of_row.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_of_row.is_empty()
    }

    pub fn catalog(&self) -> &ItemCatalog {
        &self.catalog
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f32] {
        &self.matrix[row * self.dim..(row + 1) * self.dim]
    }

    #[inline]
    pub fn item_of_row(&self, row: usize) -> ItemId {
        self.item_of_row[row]
    }

    pub fn items_of_rows(&self) -> &[ItemId] {
        &self.item_of_row
    }

    /// Ascending row positions labelled with `item`.
    pub fn rows_of(&self, item: ItemId) -> &[u32] {
        self.item_index
            .get(item.index())
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub(crate) fn row_sq_norms(&self) -> &[f32] {
        &self.row_sq_norms
    }

    pub(crate) fn max_row_norm(&self) -> f64 {
        self.max_row_norm
    }

    /// Approximate resident size of the memory in bytes.
    pub fn resident_bytes(&self) -> usize {
        let index: usize = self.item_index.iter().map(|v| v.len() * 4).sum();
        let keys: usize = self.catalog.keys.iter().map(|k| 2 * k.len()).sum();
        self.matrix.len() * 4
            + self.item_of_row.len() * 4
            + index
            + self.row_sq_norms.len() * 4
            + keys
    }
}

/// Incremental single-writer builder behind [`build_memory`].
#[derive(Debug)]
pub struct MemoryBuilder {
    dim: usize,
    matrix: Vec<f32>,
    item_of_row: Vec<ItemId>,
    item_index: Vec<Vec<u32>>,
    catalog: ItemCatalog,
    seen: HashSet<u64>,
}

impl MemoryBuilder {
    pub fn new(dim: usize) -> Result<Self, MemoryError> {
        if dim == 0 {
            return Err(MemoryError::ZeroDim);
        }
        Ok(MemoryBuilder {
            dim,
            matrix: Vec::new(),
            item_of_row: Vec::new(),
            item_index: Vec::new(),
            catalog: ItemCatalog::default(),
            seen: HashSet::new(),
        })
    }

    pub fn push(&mut self, record: &MemoryRecord) -> Result<(), MemoryError> {
        let sample_id = record.sample_id;
        check_vector(&record.vector, self.dim).map_err(|e| match e {
            VectorError::Length { expected, found } => MemoryError::DimensionMismatch {
                sample_id,
                expected,
                found,
            },
            VectorError::NonFinite => MemoryError::NonFinite { sample_id },
        })?;
        if record.item.is_empty() {
            return Err(MemoryError::EmptyItemKey(sample_id));
        }
        if !self.seen.insert(sample_id) {
            return Err(MemoryError::DuplicateSampleId(sample_id));
        }
        let row = u32::try_from(self.item_of_row.len()).map_err(|_| MemoryError::Overflow)?;
        let item = self.catalog.intern(&record.item)?;
        if item.index() == self.item_index.len() {
            self.item_index.push(Vec::new());
        }
        self.item_index[item.index()].push(row);
        self.catalog.freq[item.index()] += 1;
        self.item_of_row.push(item);
        self.matrix.extend_from_slice(&record.vector);
        Ok(())
    }

    pub fn finish(self) -> MemorySet {
        MemorySet::assemble(
            self.dim,
            self.matrix,
            self.item_of_row,
            self.item_index,
            self.catalog,
        )
    }
}

/// Builds a memory from a finite record stream, keeping ingestion order.
///
/// The whole build is rejected on the first bad record.
pub fn build_memory<'a, I>(records: I, dim: usize) -> Result<MemorySet, MemoryError>
where
    I: IntoIterator<Item = &'a MemoryRecord>,
{
    let mut builder = MemoryBuilder::new(dim)?;
    for record in records {
        builder.push(record)?;
    }
    Ok(builder.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn rec(id: u64, item: &str, v: &[f32]) -> MemoryRecord {
        MemoryRecord {
            sample_id: id,
            item: item.into(),
            vector: v.to_vec(),
        }
    }

    fn five() -> Vec<MemoryRecord> {
        vec![
            rec(0, "A", &[0.0, 0.0]),
            rec(1, "A", &[1.0, 0.0]),
            rec(2, "B", &[0.0, 1.0]),
            rec(3, "C", &[1.0, 1.0]),
            rec(4, "C", &[2.0, 2.0]),
        ]
    }

    #[test]
    fn two_records_one_item() {
        let recs = vec![rec(7, "A", &[1.0, 2.0]), rec(8, "A", &[3.0, 4.0])];
        let m = build_memory(&recs, 2).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.catalog().len(), 1);
        assert_eq!(m.catalog().id("A"), Some(ItemId(0)));
        assert_eq!(m.catalog().freq(ItemId(0)), 2);
    }

    #[test]
    fn wrong_length_names_sample() {
        let recs = vec![rec(0, "A", &[1.0, 2.0]), rec(41, "B", &[1.0, 2.0, 3.0])];
        let err = build_memory(&recs, 2).unwrap_err();
        assert_eq!(
            err,
            MemoryError::DimensionMismatch {
                sample_id: 41,
                expected: 2,
                found: 3
            }
        );
        assert!(err.to_string().contains("41"));
    }

    #[test]
    fn rejects_duplicates_and_nan() {
        let dup = vec![rec(3, "A", &[1.0]), rec(3, "B", &[2.0])];
        assert_eq!(
            build_memory(&dup, 1).unwrap_err(),
            MemoryError::DuplicateSampleId(3)
        );
        let nan = vec![rec(9, "A", &[f32::NAN])];
        assert_eq!(
            build_memory(&nan, 1).unwrap_err(),
            MemoryError::NonFinite { sample_id: 9 }
        );
        assert_eq!(build_memory(&[], 0).unwrap_err(), MemoryError::ZeroDim);
    }

    #[test]
    fn empty_stream_is_valid() {
        let m = build_memory(&[], 4).unwrap();
        assert!(m.is_empty());
        assert!(m.catalog().is_empty());
        assert_eq!(m.dim(), 4);
    }

    #[test]
    fn item_index_matches_grouping() {
        let recs = five();
        let m = build_memory(&recs, 2).unwrap();
        // brute-force regrouping of the stream
        let mut expected: Vec<(String, Vec<u32>)> = Vec::new();
        for (row, r) in recs.iter().enumerate() {
            match expected.iter_mut().find(|(k, _)| *k == r.item) {
                Some((_, rows)) => rows.push(row as u32),
                None => expected.push((r.item.clone(), vec![row as u32])),
            }
        }
        assert_eq!(expected.len(), 3);
        for (key, rows) in expected {
            let id = m.catalog().id(&key).unwrap();
            assert_eq!(m.rows_of(id), rows.as_slice());
            assert_eq!(m.catalog().freq(id) as usize, rows.len());
        }
        assert_eq!(m.rows_of(ItemId(0)), &[0, 1]);
        assert_eq!(m.rows_of(ItemId(1)), &[2]);
        assert_eq!(m.rows_of(ItemId(2)), &[3, 4]);
        assert_eq!(m.row(4), &[2.0, 2.0]);
    }

    #[test]
    fn from_parts_round_trips_builder() {
        let m = build_memory(&five(), 2).unwrap();
        let again = MemorySet::from_parts(
            2,
            m.catalog().keys().to_vec(),
            m.items_of_rows().to_vec(),
            m.matrix().to_vec(),
        )
        .unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn from_parts_rejects_orphan_item() {
        let err =
            MemorySet::from_parts(1, vec!["A".into(), "B".into()], vec![ItemId(0)], vec![1.0])
                .unwrap_err();
        assert!(matches!(err, MemoryError::Inconsistent(_)));
        let err = MemorySet::from_parts(1, vec!["A".into()], vec![ItemId(3)], vec![1.0]);
        assert!(err.is_err());
    }
}
