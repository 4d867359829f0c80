//! Artifact files.
//!
//! Features and embeddings use one little-endian binary layout:
//!
//! | bytes | content |
//! |---|---|
//! | 4 | magic, `IXFT` for features or `IXEM` for embeddings |
//! | 4 | format version (`u32`, currently 1) |
//! | 4 + 4 | features: window and node count; embeddings: latent dimension and 0 |
//! | 8 | row count (`u64`) |
//! | 4 | values per row (`u32`) |
//!
//! Each row is then `year: i32, month: u32, index: u32, node: u32` followed by
//! the values as `f64`. Feature values keep the in-memory order: four similarity
//! blocks of `window` values (bull, range, bear, whole history), `window` daily
//! returns, then `node count` adjacency indicators.
//!
//! Everything else is JSON, with floats written in shortest round-trip form.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use indexcast_core::features::{FeatureLayout, NodeFeatures};
use indexcast_core::series::YearMonth;
use indexcast_core::vae::NodeEmbedding;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const STORE_VERSION: u32 = 1;
const FEATURES_MAGIC: &[u8; 4] = b"IXFT";
const EMBEDDINGS_MAGIC: &[u8; 4] = b"IXEM";

struct Row<'a> {
    month: YearMonth,
    index: usize,
    node: usize,
    values: &'a [f64],
}

fn write_rows<'a>(
    path: &Path,
    magic: &[u8; 4],
    meta: [u32; 2],
    row_len: usize,
    rows: impl ExactSizeIterator<Item = Row<'a>>,
) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    let go = || -> std::io::Result<()> {
        w.write_all(magic)?;
        w.write_all(&STORE_VERSION.to_le_bytes())?;
        w.write_all(&meta[0].to_le_bytes())?;
        w.write_all(&meta[1].to_le_bytes())?;
        w.write_all(&(rows.len() as u64).to_le_bytes())?;
        w.write_all(&(row_len as u32).to_le_bytes())?;
        for r in rows {
            w.write_all(&r.month.year.to_le_bytes())?;
            w.write_all(&r.month.month.to_le_bytes())?;
            w.write_all(&(r.index as u32).to_le_bytes())?;
            w.write_all(&(r.node as u32).to_le_bytes())?;
            for v in r.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    };
    go().map_err(Error::io(path))
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.bytes.len() < N {
            return Err(Error::format(self.path, "truncated file"));
        }
        let (head, rest) = self.bytes.split_at(N);
        self.bytes = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<u32> {
        self.take().map(u32::from_le_bytes)
    }
}

struct Decoded {
    meta: [u32; 2],
    row_len: usize,
    rows: Vec<(YearMonth, usize, usize, Vec<f64>)>,
}

fn read_rows(path: &Path, magic: &[u8; 4]) -> Result<Decoded> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    let mut c = Cursor { path, bytes: &bytes };
    if &c.take::<4>()? != magic {
        return Err(Error::format(path, format!("not a {} file", String::from_utf8_lossy(magic))));
    }
    let version = c.u32()?;
    if version != STORE_VERSION {
        return Err(Error::format(
            path,
            format!("store version {version} does not match supported version {STORE_VERSION}"),
        ));
    }
    let meta = [c.u32()?, c.u32()?];
    let n = u64::from_le_bytes(c.take()?) as usize;
    let row_len = c.u32()? as usize;
    let expected = n.checked_mul(16 + 8 * row_len);
    if expected != Some(c.bytes.len()) {
        return Err(Error::format(
            path,
            format!("{n} rows of {row_len} values do not match the file size"),
        ));
    }
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let year = i32::from_le_bytes(c.take()?);
        let month = c.u32()?;
        if !(1..=12).contains(&month) {
            return Err(Error::format(path, format!("invalid month {month}")));
        }
        let index = c.u32()? as usize;
        let node = c.u32()? as usize;
        let values = (0..row_len)
            .map(|_| c.take().map(f64::from_le_bytes))
            .collect::<Result<Vec<f64>>>()?;
        rows.push((YearMonth::new(year, month), index, node, values));
    }
    Ok(Decoded { meta, row_len, rows })
}

/// Writes feature rows; all rows must share one layout.
pub fn save_features(path: &Path, features: &[NodeFeatures]) -> Result<()> {
    let layout = features.first().map_or(FeatureLayout::new(0, 0), |f| f.layout);
    if let Some(f) = features.iter().find(|f| f.layout != layout || f.values.len() != layout.len()) {
        return Err(Error::format(
            path,
            format!("feature row for index {} month {} has a different layout", f.index, f.month),
        ));
    }
    let rows = features.iter().map(|f| Row {
        month: f.month,
        index: f.index,
        node: f.node,
        values: &f.values,
    });
    write_rows(
        path,
        FEATURES_MAGIC,
        [layout.window as u32, layout.node_count as u32],
        layout.len(),
        rows,
    )
}

pub fn load_features(path: &Path) -> Result<Vec<NodeFeatures>> {
    let d = read_rows(path, FEATURES_MAGIC)?;
    let layout = FeatureLayout::new(d.meta[0] as usize, d.meta[1] as usize);
    if !d.rows.is_empty() && layout.len() != d.row_len {
        return Err(Error::format(
            path,
            format!("row length {} does not match layout of {} values", d.row_len, layout.len()),
        ));
    }
    Ok(d.rows
        .into_iter()
        .map(|(month, index, node, values)| NodeFeatures {
            month,
            index,
            node,
            layout,
            values,
        })
        .collect())
}

pub fn save_embeddings(path: &Path, embeddings: &[NodeEmbedding]) -> Result<()> {
    let dim = embeddings.first().map_or(0, |e| e.values.len());
    if embeddings.iter().any(|e| e.values.len() != dim) {
        return Err(Error::format(path, "embeddings of different dimensions"));
    }
    let rows = embeddings.iter().map(|e| Row {
        month: e.month,
        index: e.index,
        node: e.node,
        values: &e.values,
    });
    write_rows(path, EMBEDDINGS_MAGIC, [dim as u32, 0], dim, rows)
}

pub fn load_embeddings(path: &Path) -> Result<Vec<NodeEmbedding>> {
    let d = read_rows(path, EMBEDDINGS_MAGIC)?;
    Ok(d.rows
        .into_iter()
        .map(|(month, index, node, values)| NodeEmbedding {
            month,
            index,
            node,
            values,
        })
        .collect())
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(Error::io(path))
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(Error::io(path))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn features_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.bin");
        let layout = FeatureLayout::new(2, 3);
        let rows: Vec<NodeFeatures> = (0..4)
            .map(|i| NodeFeatures {
                month: YearMonth::new(1999 + i as i32, 12),
                index: i,
                node: 3 - i,
                layout,
                values: (0..layout.len()).map(|j| (j as f64 + 0.1) / (i as f64 + 3.0) - 1e-300).collect(),
            })
            .collect();
        save_features(&path, &rows).unwrap();
        assert_eq!(load_features(&path).unwrap(), rows);
    }

    #[test]
    fn wrong_magic_and_truncation_are_format_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.bin");
        let e = vec![NodeEmbedding {
            month: YearMonth::new(2000, 1),
            index: 0,
            node: 0,
            values: vec![1.0, -2.0],
        }];
        save_embeddings(&path, &e).unwrap();
        assert_eq!(load_embeddings(&path).unwrap(), e);
        assert!(matches!(load_features(&path), Err(Error::Format { .. })));
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_embeddings(&path), Err(Error::Format { .. })));
    }
}
