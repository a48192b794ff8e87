//! Binary container for memories and item-representation tables.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic      4 bytes   "L2DM" (memory) | "L2DR" (representation table)
//! version    u16
//! dtype      u8        0 = f32, 1 = f16
//! dim        u32
//! count      u64       rows (memory) or items (table)
//! catalog    u32 key count, then per key: u32 byte length + UTF-8 bytes
//! labels     u32 x count   item_of_row (memory) or support (table)
//! matrix     count x dim values of `dtype`, row-major
//! crc32      u32 over every preceding byte
//! ```

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use half::f16;
use thiserror::Error;

use super::{ItemId, MemoryError, MemorySet};
use crate::aggregation::ItemRepTable;

pub const MEMORY_MAGIC: [u8; 4] = *b"L2DM";
pub const REPS_MAGIC: [u8; 4] = *b"L2DR";
pub const FORMAT_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    #[default]
    F32,
    /// Half-precision storage. Values are widened to f32 on load.
    F16,
}

impl Dtype {
    fn tag(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::F16 => 1,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Dtype::F32),
            1 => Some(Dtype::F16),
            _ => None,
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F16 => 2,
        }
    }
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("bad magic bytes {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported format version {0}")]
    VersionMismatch(u16),
    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),
    #[error("file truncated: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("corrupt file: {0}")]
    Corrupt(String),
    #[error("f16 storage cannot represent value {0}")]
    F16Overflow(f32),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl PersistError {
    /// Stable numeric code per failure class.
    pub fn code(&self) -> u8 {
        match self {
            PersistError::BadMagic { .. } => 10,
            PersistError::VersionMismatch(_) => 11,
            PersistError::UnknownDtype(_) => 12,
            PersistError::Truncated { .. } => 13,
            PersistError::Checksum { .. } => 14,
            PersistError::Corrupt(_) => 15,
            PersistError::F16Overflow(_) => 16,
            PersistError::Io(_) => 17,
        }
    }
}

impl From<MemoryError> for PersistError {
    fn from(e: MemoryError) -> Self {
        PersistError::Corrupt(e.to_string())
    }
}

struct CrcWriter<W> {
    inner: W,
    hasher: crc32fast::Hasher,
}

impl<W: Write> CrcWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> io::Result<()> {
        self.hasher.update(bytes);
        self.inner.write_all(bytes)
    }

    fn finish(mut self) -> io::Result<W> {
        let crc = self.hasher.finalize();
        self.inner.write_all(&crc.to_le_bytes())?;
        self.inner.flush()?;
        Ok(self.inner)
    }
}

fn write_container<W: Write>(
    out: W,
    magic: [u8; 4],
    dtype: Dtype,
    dim: usize,
    keys: &[&str],
    labels: &[u32],
    matrix: &[f32],
) -> Result<W, PersistError> {
    if dtype == Dtype::F16 {
        if let Some(&bad) = matrix.iter().find(|x| !f16::from_f32(**x).is_finite()) {
            return Err(PersistError::F16Overflow(bad));
        }
    }
    let mut w = CrcWriter {
        inner: out,
        hasher: crc32fast::Hasher::new(),
    };
    let dim32 = u32::try_from(dim).map_err(|_| PersistError::Corrupt("dim exceeds u32".into()))?;
    w.put(&magic)?;
    w.put(&FORMAT_VERSION.to_le_bytes())?;
    w.put(&[dtype.tag()])?;
    w.put(&dim32.to_le_bytes())?;
    w.put(&(labels.len() as u64).to_le_bytes())?;
    w.put(&(keys.len() as u32).to_le_bytes())?;
    for key in keys {
        w.put(&(key.len() as u32).to_le_bytes())?;
        w.put(key.as_bytes())?;
    }
    let mut buf = Vec::with_capacity(64 * 1024);
    for chunk in labels.chunks(16 * 1024) {
        buf.clear();
        for &l in chunk {
            buf.extend_from_slice(&l.to_le_bytes());
        }
        w.put(&buf)?;
    }
    for chunk in matrix.chunks(16 * 1024) {
        buf.clear();
        match dtype {
            Dtype::F32 => chunk
                .iter()
                .for_each(|x| buf.extend_from_slice(&x.to_le_bytes())),
            Dtype::F16 => chunk
                .iter()
                .for_each(|x| buf.extend_from_slice(&f16::from_f32(*x).to_le_bytes())),
        }
        w.put(&buf)?;
    }
    Ok(w.finish()?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(PersistError::Truncated {
                offset: self.pos,
                needed: n,
            }),
        }
    }

    fn u8(&mut self) -> Result<u8, PersistError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, PersistError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, PersistError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

struct Container {
    dim: usize,
    keys: Vec<String>,
    labels: Vec<u32>,
    matrix: Vec<f32>,
}

fn read_container(bytes: &[u8], magic: [u8; 4]) -> Result<Container, PersistError> {
    let mut c = Cursor { bytes, pos: 0 };
    let found: [u8; 4] = c.take(4)?.try_into().unwrap();
    if found != magic {
        return Err(PersistError::BadMagic { found });
    }
    let version = c.u16()?;
    if version != FORMAT_VERSION {
        return Err(PersistError::VersionMismatch(version));
    }
    let tag = c.u8()?;
    let dtype = Dtype::from_tag(tag).ok_or(PersistError::UnknownDtype(tag))?;
    let dim = c.u32()? as usize;
    let count = usize::try_from(c.u64()?)
        .map_err(|_| PersistError::Corrupt("row count exceeds address space".into()))?;
    debug_assert_eq!(c.pos, HEADER_LEN);
    if dim == 0 {
        return Err(PersistError::Corrupt("zero dimension".into()));
    }
    let key_count = c.u32()? as usize;
    // every key needs at least its 4-byte length prefix
    if key_count > bytes.len() / 4 {
        return Err(PersistError::Truncated {
            offset: c.pos,
            needed: key_count * 4,
        });
    }
    let mut keys = Vec::with_capacity(key_count);
    for _ in 0..key_count {
        let len = c.u32()? as usize;
        let raw = c.take(len)?;
        let key = std::str::from_utf8(raw)
            .map_err(|_| PersistError::Corrupt("item key is not UTF-8".into()))?;
        keys.push(key.to_owned());
    }
    let label_bytes = count
        .checked_mul(4)
        .ok_or_else(|| PersistError::Corrupt("row count overflow".into()))?;
    let labels: Vec<u32> = c
        .take(label_bytes)?
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let matrix_bytes = count
        .checked_mul(dim)
        .and_then(|n| n.checked_mul(dtype.width()))
        .ok_or_else(|| PersistError::Corrupt("matrix size overflow".into()))?;
    let raw = c.take(matrix_bytes)?;
    let matrix: Vec<f32> = match dtype {
        Dtype::F32 => raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect(),
        Dtype::F16 => raw
            .chunks_exact(2)
            .map(|b| f16::from_le_bytes(b.try_into().unwrap()).to_f32())
            .collect(),
    };
    let body_end = c.pos;
    let stored = c.u32()?;
    if c.pos != bytes.len() {
        return Err(PersistError::Corrupt(format!(
            "{} trailing bytes after checksum",
            bytes.len() - c.pos
        )));
    }
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(PersistError::Checksum { stored, computed });
    }
    Ok(Container {
        dim,
        keys,
        labels,
        matrix,
    })
}

/// Serializes `m` into `out`.
pub fn write_memory<W: Write>(m: &MemorySet, out: W, dtype: Dtype) -> Result<W, PersistError> {
    let keys: Vec<&str> = m.catalog().keys().iter().map(String::as_str).collect();
    let labels: Vec<u32> = m.items_of_rows().iter().map(|i| i.0).collect();
    write_container(
        out,
        MEMORY_MAGIC,
        dtype,
        m.dim(),
        &keys,
        &labels,
        m.matrix(),
    )
}

/// Parses a memory from the bytes of a whole file.
pub fn read_memory(bytes: &[u8]) -> Result<MemorySet, PersistError> {
    let c = read_container(bytes, MEMORY_MAGIC)?;
    let items = c.labels.into_iter().map(ItemId).collect();
    Ok(MemorySet::from_parts(c.dim, c.keys, items, c.matrix)?)
}

pub fn save_memory(
    m: &MemorySet,
    path: impl AsRef<Path>,
    dtype: Dtype,
) -> Result<(), PersistError> {
    let file = BufWriter::new(File::create(path)?);
    write_memory(m, file, dtype)?;
    Ok(())
}

pub fn load_memory(path: impl AsRef<Path>) -> Result<MemorySet, PersistError> {
    let bytes = std::fs::read(path)?;
    read_memory(&bytes)
}

/// Writes a representation table. `keys[i]` names `table`'s i-th entry.
pub fn save_reps(
    table: &ItemRepTable,
    keys: &[&str],
    path: impl AsRef<Path>,
    dtype: Dtype,
) -> Result<(), PersistError> {
    if keys.len() != table.len() {
        return Err(PersistError::Corrupt(format!(
            "{} keys for {} table entries",
            keys.len(),
            table.len()
        )));
    }
    let file = BufWriter::new(File::create(path)?);
    write_container(
        file,
        REPS_MAGIC,
        dtype,
        table.dim(),
        keys,
        table.supports(),
        table.matrix(),
    )?;
    Ok(())
}

/// Reads a representation table; entries get ItemIds `0..count` in file order.
pub fn load_reps(path: impl AsRef<Path>) -> Result<(Vec<String>, ItemRepTable), PersistError> {
    let bytes = std::fs::read(path)?;
    let c = read_container(&bytes, REPS_MAGIC)?;
    if c.keys.len() != c.labels.len() {
        return Err(PersistError::Corrupt(
            "key count differs from entry count".into(),
        ));
    }
    let ids = (0..c.labels.len() as u32).map(ItemId).collect();
    let table = ItemRepTable::from_parts(c.dim, ids, c.matrix, c.labels)
        .map_err(|e| PersistError::Corrupt(e.to_string()))?;
    Ok((c.keys, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::{build_memory, MemoryRecord};

    fn sample() -> MemorySet {
        let recs: Vec<MemoryRecord> = [
            ("A", 0.5f32),
            ("A", -1.25),
            ("B", 3.0),
            ("C", 1e-3),
            ("C", 7.0),
        ]
        .iter()
        .enumerate()
        .map(|(i, (k, x))| MemoryRecord {
            sample_id: i as u64,
            item: (*k).into(),
            vector: vec![*x, -*x, 2.0 * *x],
        })
        .collect();
        build_memory(&recs, 3).unwrap()
    }

    fn bytes_of(m: &MemorySet, dtype: Dtype) -> Vec<u8> {
        write_memory(m, Vec::new(), dtype).unwrap()
    }

    #[test]
    fn round_trip_is_identity() {
        let m = sample();
        let bytes = bytes_of(&m, Dtype::F32);
        let back = read_memory(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(bytes_of(&back, Dtype::F32), bytes);
    }

    #[test]
    fn empty_round_trip() {
        let m = build_memory(&[], 5).unwrap();
        let back = read_memory(&bytes_of(&m, Dtype::F32)).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back.dim(), 5);
    }

    #[test]
    fn header_layout() {
        let bytes = bytes_of(&sample(), Dtype::F32);
        assert_eq!(&bytes[..4], b"L2DM");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), FORMAT_VERSION);
        assert_eq!(bytes[6], 0);
        assert_eq!(u32::from_le_bytes(bytes[7..11].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[11..19].try_into().unwrap()), 5);
        // catalog: 3 keys of one byte each, labels, matrix, crc
        assert_eq!(bytes.len(), HEADER_LEN + 4 + 3 * 5 + 5 * 4 + 5 * 3 * 4 + 4);
        let n = bytes.len();
        let crc = u32::from_le_bytes(bytes[n - 4..].try_into().unwrap());
        assert_eq!(crc, crc32fast::hash(&bytes[..n - 4]));
    }

    #[test]
    fn f16_halves_matrix_block() {
        let m = sample();
        let full = bytes_of(&m, Dtype::F32);
        let half = bytes_of(&m, Dtype::F16);
        assert_eq!(full.len() - half.len(), 5 * 3 * 2);
        let back = read_memory(&half).unwrap();
        assert_eq!(back.row(0), &[0.5, -0.5, 1.0]);
        assert!((back.row(3)[0] - 1e-3).abs() < 1e-6);
        assert_eq!(back.catalog(), m.catalog());
    }

    #[test]
    fn f16_rejects_out_of_range() {
        let recs = vec![MemoryRecord {
            sample_id: 0,
            item: "A".into(),
            vector: vec![1e6],
        }];
        let m = build_memory(&recs, 1).unwrap();
        assert!(matches!(
            write_memory(&m, Vec::new(), Dtype::F16),
            Err(PersistError::F16Overflow(_))
        ));
    }

    #[test]
    fn distinct_error_codes() {
        let good = bytes_of(&sample(), Dtype::F32);

        let mut magic = good.clone();
        magic[0] = b'X';
        let e = read_memory(&magic).unwrap_err();
        assert!(matches!(e, PersistError::BadMagic { .. }), "{e}");

        let mut version = good.clone();
        version[4] = 9;
        let e = read_memory(&version).unwrap_err();
        assert!(matches!(e, PersistError::VersionMismatch(9)), "{e}");

        let mut dtype = good.clone();
        dtype[6] = 7;
        assert!(matches!(
            read_memory(&dtype).unwrap_err(),
            PersistError::UnknownDtype(7)
        ));

        for cut in [0, 3, 10, 30, good.len() - 5, good.len() - 1] {
            let e = read_memory(&good[..cut]).unwrap_err();
            assert!(
                matches!(e, PersistError::Truncated { .. }),
                "cut {cut}: {e}"
            );
        }

        let mut flipped = good.clone();
        let mid = good.len() - 10;
        flipped[mid] ^= 0x40;
        let e = read_memory(&flipped).unwrap_err();
        assert!(matches!(e, PersistError::Checksum { .. }), "{e}");

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(
            read_memory(&trailing).unwrap_err(),
            PersistError::Corrupt(_)
        ));

        let codes = [
            PersistError::BadMagic { found: [0; 4] }.code(),
            PersistError::VersionMismatch(0).code(),
            PersistError::Truncated {
                offset: 0,
                needed: 0,
            }
            .code(),
            PersistError::Checksum {
                stored: 0,
                computed: 1,
            }
            .code(),
        ];
        let mut dedup = codes.to_vec();
        dedup.dedup();
        assert_eq!(dedup.len(), codes.len());
    }

    #[test]
    fn memory_file_is_not_a_reps_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.l2dm");
        save_memory(&sample(), &path, Dtype::F32).unwrap();
        assert!(matches!(
            load_reps(&path).unwrap_err(),
            PersistError::BadMagic { .. }
        ));
        assert_eq!(load_memory(&path).unwrap(), sample());
    }
}
