//! Line-delimited JSON formats: ingestion records, queries, evaluation
//! samples and beam requests in; ranked lists out.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::RankedList;
use crate::memory::ItemId;

#[derive(Debug, Error)]
pub enum LineError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses one JSON value per non-blank line. Line numbers are 1-based.
pub fn read_jsonl<T, R>(reader: R) -> impl Iterator<Item = Result<T, LineError>>
where
    T: DeserializeOwned,
    R: BufRead,
{
    reader
        .lines()
        .enumerate()
        .filter_map(|(i, line)| match line {
            Err(e) => Some(Err(LineError::Io(e))),
            Ok(l) if l.trim().is_empty() => None,
            Ok(l) => Some(serde_json::from_str(&l).map_err(|source| LineError::Parse {
                line: i + 1,
                source,
            })),
        })
}

/// Beam-generated item embeddings for one request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamRequest {
    pub query_id: u64,
    pub beams: Vec<Vec<f32>>,
}

/// Formats a score with 9 significant digits.
pub fn format_score(score: f64) -> String {
    format!("{score:.8e}")
}

/// Writes `{query_id, mode, [backfilled,] ranked: [{item_key, score}]}`.
pub fn write_ranked<W, F>(
    out: &mut W,
    list: &RankedList,
    mode: &str,
    with_backfill: bool,
    key_of: F,
) -> std::io::Result<()>
where
    W: Write,
    F: Fn(ItemId) -> String,
{
    write!(out, "{{\"query_id\":{},\"mode\":", list.query_id)?;
    serde_json::to_writer(&mut *out, mode)?;
    if with_backfill {
        write!(out, ",\"backfilled\":{}", list.backfilled)?;
    }
    write!(out, ",\"ranked\":[")?;
    for (i, e) in list.entries.iter().enumerate() {
        if i > 0 {
            write!(out, ",")?;
        }
        write!(out, "{{\"item_key\":")?;
        serde_json::to_writer(&mut *out, &key_of(e.item))?;
        write!(out, ",\"score\":{}}}", format_score(e.score))?;
    }
    writeln!(out, "]}}")
}

pub fn write_error(out: &mut impl Write, query_id: u64, message: &str) -> std::io::Result<()> {
    write!(out, "{{\"query_id\":{query_id},\"error\":")?;
    serde_json::to_writer(&mut *out, message)?;
    writeln!(out, "}}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decoder::RankedItem;
    use crate::memory::MemoryRecord;
    use serde_json::Value;

    #[test]
    fn reads_records_and_reports_line() {
        let text = "{\"sample_id\":1,\"item\":\"A\",\"vector\":[1.0,2.5]}\n\n{\"sample_id\":2,\"item\":\"B\"}\n";
        let parsed: Vec<Result<MemoryRecord, _>> = read_jsonl(text.as_bytes()).collect();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].as_ref().unwrap().vector, vec![1.0, 2.5]);
        match &parsed[1] {
            Err(LineError::Parse { line, .. }) => assert_eq!(*line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ranked_line_is_json_with_nine_digits() {
        let list = RankedList {
            query_id: 3,
            entries: vec![
                RankedItem {
                    item: ItemId(0),
                    distance: 0.0,
                    score: 1e9,
                },
                RankedItem {
                    item: ItemId(1),
                    distance: 3.0,
                    score: 1.0 / 3.0,
                },
            ],
            backfilled: 1,
        };
        let mut buf = Vec::new();
        write_ranked(&mut buf, &list, "local", true, |i| format!("k\"{}", i.0)).unwrap();
        let line = String::from_utf8(buf).unwrap();
        assert!(line.contains("\"score\":1.00000000e9"));
        assert!(line.contains("3.33333333e-1"));
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["ranked"][1]["item_key"], "k\"1");
        assert_eq!(v["backfilled"], 1);
        assert_eq!(v["mode"], "local");
    }

    #[test]
    fn error_line() {
        let mut buf = Vec::new();
        write_error(&mut buf, 5, "bad \"vector\"").unwrap();
        let v: Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["query_id"], 5);
        assert_eq!(v["error"], "bad \"vector\"");
    }
}
